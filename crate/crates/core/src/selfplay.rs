//! Self-play: random perfect matchings over the population, color-balanced
//! games within each pair, and conversion of finished games to examples.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::exec::Executor;
use crate::game::{outcome_value, BoardConfig, Color, GameResult, GameState, Move, Winner};
use crate::mcts::{self, MctsError, NetworkEvaluator, SearchConfig};
use crate::nnet::{NetworkWeights, ValueHead};
use crate::replay::TrainingExample;
use crate::{seeds, AgentId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelfPlayError {
    #[error("population size {0} is odd")]
    OddPopulation(usize),
    #[error("duplicate agent id {0} in pairing request")]
    DuplicateAgent(AgentId),
    #[error("game count {0} must be even")]
    OddGameCount(usize),
    #[error("no pairs to distribute games over")]
    NoPairs,
    #[error("record is incomplete: {0}")]
    IncompleteRecord(&'static str),
    #[error("record result does not match its replayed moves")]
    InconsistentRecord,
    #[error("multi-komi targets increase with komi at move {0}")]
    NonMonotoneKomiTargets(usize),
    #[error(transparent)]
    Search(#[from] MctsError),
    #[error(transparent)]
    Game(#[from] crate::game::GameError),
}

/// A perfect matching: every agent appears in exactly one pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairingPlan {
    pub pairs: Vec<(AgentId, AgentId)>,
}

impl PairingPlan {
    pub fn is_perfect_matching(&self, agent_ids: &[AgentId]) -> bool {
        let mut seen: Vec<AgentId> = self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        seen.sort_unstable();
        let mut expected = agent_ids.to_vec();
        expected.sort_unstable();
        seen == expected && self.pairs.iter().all(|(a, b)| a != b)
    }
}

/// Uniformly random perfect matching (shuffle, then pair neighbours).
pub fn make_pairings<R: Rng + ?Sized>(agent_ids: &[AgentId], rng: &mut R) -> Result<PairingPlan, SelfPlayError> {
    if agent_ids.len() % 2 != 0 {
        return Err(SelfPlayError::OddPopulation(agent_ids.len()));
    }
    let mut sorted = agent_ids.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(SelfPlayError::DuplicateAgent(w[0]));
    }
    let mut ids = agent_ids.to_vec();
    ids.shuffle(rng);
    Ok(PairingPlan {
        pairs: ids.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
    })
}

/// Splits `total` games over `pairs` pairs. Every pair gets the largest even
/// share `<= total / pairs`; the remainder is handed out two games at a time
/// to pairs 0, 1, 2, ... so every count stays even.
pub fn split_games(total: usize, pairs: usize) -> Result<Vec<usize>, SelfPlayError> {
    if pairs == 0 {
        return Err(SelfPlayError::NoPairs);
    }
    if total % 2 != 0 {
        return Err(SelfPlayError::OddGameCount(total));
    }
    let base = (total / pairs) & !1;
    let mut counts = vec![base; pairs];
    let mut remaining = total - base * pairs;
    let mut i = 0;
    while remaining > 0 {
        counts[i % pairs] += 2;
        remaining -= 2;
        i += 1;
    }
    Ok(counts)
}

/// One move decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub mv: Move,
    /// Policy target recorded for the position (visit distribution).
    pub pi: Vec<f32>,
}

pub trait Player {
    fn choose<R: Rng + ?Sized>(&mut self, state: &GameState, rng: &mut R) -> Result<Choice, SelfPlayError>;
}

/// Moves chosen by PUCT search over a network.
pub struct MctsPlayer<'a> {
    evaluator: NetworkEvaluator<'a>,
    config: SearchConfig,
}

impl<'a> MctsPlayer<'a> {
    pub fn new(net: &'a NetworkWeights<f32>, config: SearchConfig) -> MctsPlayer<'a> {
        MctsPlayer {
            evaluator: NetworkEvaluator::new(net),
            config,
        }
    }
}

impl Player for MctsPlayer<'_> {
    fn choose<R: Rng + ?Sized>(&mut self, state: &GameState, rng: &mut R) -> Result<Choice, SelfPlayError> {
        let result = mcts::search(state, &mut self.evaluator, &self.config, rng)?;
        Ok(Choice {
            mv: result.chosen_move,
            pi: result.pi,
        })
    }
}

/// Uniformly random legal move, pass included.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPlayer;

impl Player for RandomPlayer {
    fn choose<R: Rng + ?Sized>(&mut self, state: &GameState, rng: &mut R) -> Result<Choice, SelfPlayError> {
        let moves = state.legal_moves()?;
        let mv = moves[rng.random_range(0..moves.len())];
        let n = state.board_size();
        let mut pi = vec![0.0; n * n + 1];
        for m in &moves {
            pi[m.policy_index(n)] = 1.0 / moves.len() as f32;
        }
        Ok(Choice { mv, pi })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameRecord {
    pub board: BoardConfig,
    pub moves: Vec<Move>,
    /// One policy target per move.
    pub pis: Vec<Vec<f32>>,
    pub result: GameResult,
    pub black_agent: AgentId,
    pub white_agent: AgentId,
}

impl GameRecord {
    /// Replays the moves and returns the final position.
    pub fn replay(&self) -> Result<GameState, SelfPlayError> {
        let mut state = GameState::new(self.board)?;
        for &mv in &self.moves {
            state.play_in_place(mv)?;
        }
        Ok(state)
    }

    pub fn agent_playing(&self, color: Color) -> AgentId {
        match color {
            Color::Black => self.black_agent,
            Color::White => self.white_agent,
        }
    }

    pub fn winner_agent(&self) -> Option<AgentId> {
        match self.result.winner {
            Winner::Black => Some(self.black_agent),
            Winner::White => Some(self.white_agent),
            Winner::Draw => None,
        }
    }
}

pub fn play_game<B, W, R>(
    board: BoardConfig,
    black: &mut B,
    white: &mut W,
    black_agent: AgentId,
    white_agent: AgentId,
    rng: &mut R,
) -> Result<GameRecord, SelfPlayError>
where
    B: Player,
    W: Player,
    R: Rng + ?Sized,
{
    let mut state = GameState::new(board)?;
    let mut moves = Vec::new();
    let mut pis = Vec::new();
    while !state.is_terminal() {
        let choice = match state.to_move() {
            Color::Black => black.choose(&state, rng)?,
            Color::White => white.choose(&state, rng)?,
        };
        state.play_in_place(choice.mv)?;
        moves.push(choice.mv);
        pis.push(choice.pi);
    }
    Ok(GameRecord {
        board,
        moves,
        pis,
        result: state.score()?,
        black_agent,
        white_agent,
    })
}

/// A scheduled game with its own random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GameJob {
    pub black: AgentId,
    pub white: AgentId,
    pub seed: u64,
}

/// Plays `job` with MCTS players; `nets[id]` is agent `id`'s network.
pub fn run_game_job(
    job: GameJob,
    nets: &[&NetworkWeights<f32>],
    search: &SearchConfig,
    board: BoardConfig,
) -> Result<GameRecord, SelfPlayError> {
    let mut rng = seeds::rng(job.seed, &[]);
    let mut black = MctsPlayer::new(nets[job.black], *search);
    let mut white = MctsPlayer::new(nets[job.white], *search);
    play_game(board, &mut black, &mut white, job.black, job.white, &mut rng)
}

/// Color assignment within a pair: even games have `a` as Black.
pub fn pair_jobs(a: AgentId, b: AgentId, n_games: usize, seed: u64) -> Result<Vec<GameJob>, SelfPlayError> {
    if n_games % 2 != 0 {
        return Err(SelfPlayError::OddGameCount(n_games));
    }
    Ok((0..n_games)
        .map(|g| {
            let (black, white) = if g % 2 == 0 { (a, b) } else { (b, a) };
            GameJob {
                black,
                white,
                seed: seeds::derive(seed, &[g as u64]),
            }
        })
        .collect())
}

/// `n_games` games between `a` and `b`, half with each as Black.
#[allow(clippy::too_many_arguments)]
pub fn play_pair_games<E: Executor>(
    a: AgentId,
    b: AgentId,
    nets: &[&NetworkWeights<f32>],
    n_games: usize,
    search: &SearchConfig,
    board: BoardConfig,
    seed: u64,
    exec: &E,
) -> Result<Vec<GameRecord>, SelfPlayError> {
    let jobs = pair_jobs(a, b, n_games, seed)?;
    exec.map(jobs, |job| run_game_job(job, nets, search, board)).into_iter().collect()
}

/// One example per move, with outcomes from the mover's side. A multi-komi
/// head gets one target per komi from the final area margin; those targets
/// must be non-increasing in komi from Black's side.
pub fn to_examples(record: &GameRecord, head: &ValueHead, iteration: u32) -> Result<Vec<TrainingExample>, SelfPlayError> {
    if record.moves.len() != record.pis.len() {
        return Err(SelfPlayError::IncompleteRecord("policy count differs from move count"));
    }
    let n = record.board.board_size;
    let mut state = GameState::new(record.board)?;
    let mut examples = Vec::with_capacity(record.moves.len());
    for (i, (&mv, pi)) in record.moves.iter().zip(&record.pis).enumerate() {
        if pi.len() != n * n + 1 {
            return Err(SelfPlayError::IncompleteRecord("policy target has wrong length"));
        }
        let mover = state.to_move();
        let z = match head {
            ValueHead::Single => vec![outcome_value(record.result.winner, mover)],
            ValueHead::MultiKomi { komi_values } => {
                let black_view: Vec<f32> = komi_values
                    .iter()
                    .map(|&k| outcome_value(record.result.winner_at_komi(k), Color::Black))
                    .collect();
                if black_view.windows(2).any(|w| w[1] > w[0]) {
                    return Err(SelfPlayError::NonMonotoneKomiTargets(i));
                }
                match mover {
                    Color::Black => black_view,
                    Color::White => black_view.into_iter().map(|z| -z).collect(),
                }
            }
        };
        examples.push(TrainingExample {
            features: state.encode_features(),
            pi: pi.clone(),
            z,
            source_agent: record.agent_playing(mover),
            iteration,
        });
        state.play_in_place(mv)?;
    }
    if !state.is_terminal() {
        return Err(SelfPlayError::IncompleteRecord("game did not finish"));
    }
    if state.score()? != record.result {
        return Err(SelfPlayError::InconsistentRecord);
    }
    Ok(examples)
}
