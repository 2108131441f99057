//! Round-robin evaluation, ranking and head-to-head matches.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::exec::Executor;
use crate::game::{BoardConfig, Winner};
use crate::mcts::SearchConfig;
use crate::nnet::NetworkWeights;
use crate::selfplay::{self, Choice, GameJob, GameRecord, MctsPlayer, Player, RandomPlayer, SelfPlayError};
use crate::{seeds, AgentId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaluationError {
    #[error("games per pairing must be even, got {0}")]
    OddGames(usize),
    #[error("need at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("agent {0} is not part of the tournament")]
    UnknownAgent(AgentId),
    #[error("agent {0} cannot play itself in a tournament")]
    SelfPairing(AgentId),
    #[error(transparent)]
    Play(#[from] SelfPlayError),
}

/// Results of one row agent against one column agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Wdl {
    pub wins: u32,
    pub draws: u32,
    pub losses: u32,
}

impl Wdl {
    pub fn games(&self) -> u32 {
        self.wins + self.draws + self.losses
    }

    /// Score in half points: a win is 2, a draw 1.
    pub fn half_points(&self) -> u32 {
        2 * self.wins + self.draws
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TournamentResult {
    /// Agent ids; matrix rows and columns follow this order.
    pub agents: Vec<AgentId>,
    /// `win_matrix[i][j]`: results of `agents[i]` against `agents[j]`.
    pub win_matrix: Vec<Vec<Wdl>>,
    /// Draws count as half a win.
    pub per_agent_win_rate: Vec<f64>,
    /// Best first.
    pub ranking: Vec<AgentId>,
}

impl TournamentResult {
    /// Builds the matrix from `(black, white, winner)` outcomes.
    pub fn from_outcomes(agents: &[AgentId], outcomes: &[(AgentId, AgentId, Winner)]) -> Result<TournamentResult, EvaluationError> {
        let index = |id: AgentId| agents.iter().position(|&a| a == id).ok_or(EvaluationError::UnknownAgent(id));
        let n = agents.len();
        let mut win_matrix = vec![vec![Wdl::default(); n]; n];
        for &(black, white, winner) in outcomes {
            let (b, w) = (index(black)?, index(white)?);
            if b == w {
                return Err(EvaluationError::SelfPairing(black));
            }
            match winner {
                Winner::Black => {
                    win_matrix[b][w].wins += 1;
                    win_matrix[w][b].losses += 1;
                }
                Winner::White => {
                    win_matrix[w][b].wins += 1;
                    win_matrix[b][w].losses += 1;
                }
                Winner::Draw => {
                    win_matrix[b][w].draws += 1;
                    win_matrix[w][b].draws += 1;
                }
            }
        }
        let mut result = TournamentResult {
            agents: agents.to_vec(),
            win_matrix,
            per_agent_win_rate: Vec::new(),
            ranking: Vec::new(),
        };
        result.per_agent_win_rate = (0..n)
            .map(|i| {
                let games = result.games_of(i);
                if games == 0 {
                    0.5
                } else {
                    f64::from(result.half_points_of(i)) / (2.0 * f64::from(games))
                }
            })
            .collect();
        result.ranking = rank_agents(&result);
        Ok(result)
    }

    /// Games played by the agent at matrix index `i`.
    pub fn games_of(&self, i: usize) -> u32 {
        self.win_matrix[i].iter().map(Wdl::games).sum()
    }

    pub fn half_points_of(&self, i: usize) -> u32 {
        self.win_matrix[i].iter().map(Wdl::half_points).sum()
    }

    pub fn total_games(&self) -> u32 {
        (0..self.agents.len()).map(|i| self.games_of(i)).sum::<u32>() / 2
    }

    pub fn win_rate_of(&self, agent: AgentId) -> Option<f64> {
        self.agents.iter().position(|&a| a == agent).map(|i| self.per_agent_win_rate[i])
    }

    pub fn top_agent(&self) -> Option<AgentId> {
        self.ranking.first().copied()
    }
}

/// Descending win rate; ties go to the head-to-head score among the tied
/// agents, then to the lower id.
pub fn rank_agents(result: &TournamentResult) -> Vec<AgentId> {
    let n = result.agents.len();
    let points: Vec<u64> = (0..n).map(|i| u64::from(result.half_points_of(i))).collect();
    let games: Vec<u64> = (0..n).map(|i| u64::from(result.games_of(i))).collect();
    // Exact comparison of points[i] / games[i]; an agent without games sits at one half.
    let rate_cmp = |i: usize, j: usize| -> Ordering {
        let (pi, gi) = if games[i] == 0 { (1, 1) } else { (points[i], 2 * games[i]) };
        let (pj, gj) = if games[j] == 0 { (1, 1) } else { (points[j], 2 * games[j]) };
        (pj * gi).cmp(&(pi * gj))
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| rate_cmp(i, j).then(result.agents[i].cmp(&result.agents[j])));

    let mut ranked = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && rate_cmp(order[start], order[end]) == Ordering::Equal {
            end += 1;
        }
        let group = &order[start..end];
        let h2h = |i: usize| -> u32 { group.iter().map(|&j| result.win_matrix[i][j].half_points()).sum() };
        let mut tied = group.to_vec();
        tied.sort_by(|&i, &j| h2h(j).cmp(&h2h(i)).then(result.agents[i].cmp(&result.agents[j])));
        ranked.extend(tied.into_iter().map(|i| result.agents[i]));
        start = end;
    }
    ranked
}

/// Every unordered pair `(i, j)` with `i < j`, in lexicographic order.
pub fn round_robin_schedule(agents: &[AgentId]) -> Vec<(AgentId, AgentId)> {
    let mut pairs = Vec::new();
    for (i, &a) in agents.iter().enumerate() {
        for &b in &agents[i + 1..] {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Round robin over agents `0..nets.len()`. Noise and visit sampling are
/// switched off, so moves are the argmax of the visit counts.
pub fn run_round_robin<E: Executor>(
    nets: &[&NetworkWeights<f32>],
    games_per_pairing: usize,
    search: &SearchConfig,
    board: BoardConfig,
    seed: u64,
    exec: &E,
) -> Result<(TournamentResult, Vec<GameRecord>), EvaluationError> {
    if games_per_pairing % 2 != 0 {
        return Err(EvaluationError::OddGames(games_per_pairing));
    }
    if nets.len() < 2 {
        return Err(EvaluationError::TooFewAgents(nets.len()));
    }
    let agents: Vec<AgentId> = (0..nets.len()).collect();
    let mut jobs = Vec::new();
    for (p, (a, b)) in round_robin_schedule(&agents).into_iter().enumerate() {
        jobs.extend(selfplay::pair_jobs(a, b, games_per_pairing, seeds::derive(seed, &[p as u64]))?);
    }
    let search = search.evaluation();
    let records: Vec<GameRecord> = exec
        .map(jobs, |job| selfplay::run_game_job(job, nets, &search, board))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let outcomes: Vec<_> = records.iter().map(|r| (r.black_agent, r.white_agent, r.result.winner)).collect();
    Ok((TournamentResult::from_outcomes(&agents, &outcomes)?, records))
}

/// One participant of a head-to-head match.
#[derive(Clone, Copy)]
pub enum MatchSide<'a> {
    Network { net: &'a NetworkWeights<f32>, search: SearchConfig },
    Random,
}

enum SidePlayer<'a> {
    Mcts(MctsPlayer<'a>),
    Random(RandomPlayer),
}

impl<'a> SidePlayer<'a> {
    fn new(side: &MatchSide<'a>) -> SidePlayer<'a> {
        match *side {
            MatchSide::Network { net, search } => SidePlayer::Mcts(MctsPlayer::new(net, search)),
            MatchSide::Random => SidePlayer::Random(RandomPlayer),
        }
    }
}

impl Player for SidePlayer<'_> {
    fn choose<R: Rng + ?Sized>(&mut self, state: &crate::GameState, rng: &mut R) -> Result<Choice, SelfPlayError> {
        match self {
            SidePlayer::Mcts(p) => p.choose(state, rng),
            SidePlayer::Random(p) => p.choose(state, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub games: u32,
    pub a_wins: u32,
    pub b_wins: u32,
    pub draws: u32,
    pub a_wins_as_black: u32,
    pub b_wins_as_black: u32,
}

impl MatchResult {
    /// Side a's score with draws as one half.
    pub fn a_win_rate(&self) -> f64 {
        if self.games == 0 {
            return 0.5;
        }
        (f64::from(self.a_wins) + 0.5 * f64::from(self.draws)) / f64::from(self.games)
    }

    pub fn b_win_rate(&self) -> f64 {
        1.0 - self.a_win_rate()
    }

    fn add(&mut self, record: &GameRecord) {
        const A: AgentId = 0;
        self.games += 1;
        match record.winner_agent() {
            None => self.draws += 1,
            Some(A) => {
                self.a_wins += 1;
                if record.black_agent == A {
                    self.a_wins_as_black += 1;
                }
            }
            Some(_) => {
                self.b_wins += 1;
                if record.black_agent != A {
                    self.b_wins_as_black += 1;
                }
            }
        }
    }
}

/// `games` games between `a` and `b`; `a` is Black in even-numbered games.
pub fn play_match<E: Executor>(
    a: MatchSide<'_>,
    b: MatchSide<'_>,
    games: usize,
    board: BoardConfig,
    seed: u64,
    exec: &E,
) -> Result<(MatchResult, Vec<GameRecord>), EvaluationError> {
    if games % 2 != 0 {
        return Err(EvaluationError::OddGames(games));
    }
    let jobs = selfplay::pair_jobs(0, 1, games, seed)?;
    let sides = [a, b];
    let records: Vec<GameRecord> = exec
        .map(jobs, |job: GameJob| {
            let mut rng = seeds::rng(job.seed, &[]);
            let mut black = SidePlayer::new(&sides[job.black]);
            let mut white = SidePlayer::new(&sides[job.white]);
            selfplay::play_game(board, &mut black, &mut white, job.black, job.white, &mut rng)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut result = MatchResult::default();
    for r in &records {
        result.add(r);
    }
    Ok((result, records))
}
