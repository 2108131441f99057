//! The iteration loop: self-play, optimization on the shared buffer,
//! round-robin evaluation, then exploit and explore.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::evaluation::{self, EvaluationError, TournamentResult};
use crate::exec::Executor;
use crate::game::BoardConfig;
use crate::mcts::{MctsError, SearchConfig};
use crate::nnet::{Hyperparams, LossBreakdown, NetworkConfig, NetworkWeights, NnetError};
use crate::pbt::{self, AgentSlot, HpBounds, PbtError, PerturbFactor, PopulationState, RngState};
use crate::replay::{ReplayBuffer, ReplayError};
use crate::selfplay::{self, GameRecord, SelfPlayError};
use crate::seeds::{self, phase};
use crate::AgentId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("population size {0} is not valid for this mode")]
    PopulationSize(usize),
    #[error("state does not match the config: {0}")]
    StateMismatch(&'static str),
    #[error("agent {agent}: {source}")]
    Optimize { agent: AgentId, source: NnetError },
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error(transparent)]
    Game(#[from] crate::game::GameError),
    #[error(transparent)]
    Search(#[from] MctsError),
    #[error(transparent)]
    SelfPlay(#[from] SelfPlayError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Pbt(#[from] PbtError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Exploit and explore after every evaluation.
    Pbt,
    /// One agent, no evaluation; it plays itself with the latest weights.
    Baseline,
    /// Exploit only.
    AblationReplaceOnly,
    /// Evaluation without exploit or explore.
    AblationNeither,
}

impl Mode {
    pub fn exploits(self) -> bool {
        matches!(self, Mode::Pbt | Mode::AblationReplaceOnly)
    }

    pub fn explores(self) -> bool {
        self == Mode::Pbt
    }

    pub fn evaluates(self) -> bool {
        self != Mode::Baseline
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepsPerIteration {
    Fixed(usize),
    /// `ceil(new_examples * reuse / batch_size)`.
    Auto { reuse: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub board: BoardConfig,
    pub network: NetworkConfig,
    /// Self-play search; evaluation reuses it with noise and sampling off.
    pub search: SearchConfig,
    pub population_size: usize,
    pub games_per_iteration: usize,
    pub iterations: u32,
    pub batch_size: usize,
    pub steps_per_iteration: StepsPerIteration,
    /// Iterations kept in the replay buffer.
    pub replay_window: usize,
    pub eval_games_per_pairing: usize,
    pub exploit_percent: u32,
    pub bounds: HpBounds,
    pub mode: Mode,
    /// Initial hyperparameters; agent `i` gets entry `i % len`.
    pub initial_hp: Vec<Hyperparams>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.board.validate()?;
        self.network.validate()?;
        self.search.validate()?;
        self.bounds.validate()?;
        if self.network.board_size != self.board.board_size {
            return Err(TrainError::InvalidConfig("network and board sizes differ"));
        }
        if let crate::nnet::ValueHead::MultiKomi { .. } = &self.network.value_head {
            self.network.value_head.index_of(self.board.komi)?;
        }
        let p = self.population_size;
        match self.mode {
            Mode::Baseline if p != 1 => return Err(TrainError::PopulationSize(p)),
            Mode::Baseline => {}
            _ if p < 2 || p % 2 != 0 => return Err(TrainError::PopulationSize(p)),
            _ => {}
        }
        if self.games_per_iteration == 0 || self.games_per_iteration % 2 != 0 {
            return Err(TrainError::InvalidConfig("games_per_iteration must be even and positive"));
        }
        if self.mode != Mode::Baseline && self.games_per_iteration < p {
            return Err(TrainError::InvalidConfig("games_per_iteration must give every pair a game"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive"));
        }
        match self.steps_per_iteration {
            StepsPerIteration::Fixed(0) => return Err(TrainError::InvalidConfig("steps_per_iteration must be positive")),
            StepsPerIteration::Auto { reuse } if !(reuse.is_finite() && reuse > 0.0) => {
                return Err(TrainError::InvalidConfig("sample reuse must be positive"))
            }
            _ => {}
        }
        if self.replay_window == 0 {
            return Err(TrainError::InvalidConfig("replay_window must be positive"));
        }
        if self.mode.evaluates() && (self.eval_games_per_pairing == 0 || self.eval_games_per_pairing % 2 != 0) {
            return Err(TrainError::InvalidConfig("eval_games_per_pairing must be even and positive"));
        }
        if self.exploit_percent > 50 {
            return Err(TrainError::InvalidConfig("exploit_percent must be at most 50"));
        }
        if self.initial_hp.is_empty() {
            return Err(TrainError::InvalidConfig("initial_hp is empty"));
        }
        for hp in &self.initial_hp {
            hp.validate()?;
            if !self.bounds.contains(hp) {
                return Err(TrainError::InvalidConfig("initial hyperparameters lie outside the bounds"));
            }
        }
        Ok(())
    }

    pub fn steps_for(&self, new_examples: usize) -> usize {
        match self.steps_per_iteration {
            StepsPerIteration::Fixed(n) => n,
            StepsPerIteration::Auto { reuse } => libm::ceil(new_examples as f64 * reuse / self.batch_size as f64).max(1.0) as usize,
        }
    }
}

/// Iteration-0 population: independently initialized networks and the
/// configured hyperparameter grid.
pub fn init_population(config: &TrainConfig) -> Result<PopulationState, TrainError> {
    config.validate()?;
    let slots = (0..config.population_size)
        .map(|id| {
            Ok(AgentSlot {
                id,
                weights: NetworkWeights::init(config.network.clone(), seeds::derive(config.seed, &[phase::INIT, id as u64]))?,
                hp: config.initial_hp[id % config.initial_hp.len()],
                lineage: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>, NnetError>>()?;
    let master = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, &[phase::INIT]));
    Ok(PopulationState::new(slots, RngState::of(&master))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentReport {
    pub id: AgentId,
    /// Hyperparameters used for this iteration's optimization.
    pub hp: Hyperparams,
    /// Learning rate actually applied (after any schedule).
    pub learning_rate: f64,
    /// Hyperparameters after exploit/explore.
    pub next_hp: Hyperparams,
    pub win_rate: Option<f64>,
    pub loss: LossBreakdown,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub iteration: u32,
    pub agents: Vec<AgentReport>,
    /// `(replaced, source)`.
    pub replaced: Vec<(AgentId, AgentId)>,
    /// `(agent, lr factor, ratio factor)`.
    pub perturbed: Vec<(AgentId, PerturbFactor, PerturbFactor)>,
    pub ranking: Vec<AgentId>,
    pub selfplay_games: usize,
    pub new_examples: usize,
    pub buffer_examples: usize,
    pub mean_game_length: f64,
}

impl IterationReport {
    pub fn replaced_ids(&self) -> Vec<AgentId> {
        self.replaced.iter().map(|&(r, _)| r).collect()
    }

    pub fn mean_learning_rate(&self) -> f64 {
        mean(self.agents.iter().map(|a| a.learning_rate))
    }

    pub fn mean_value_loss_ratio(&self) -> f64 {
        mean(self.agents.iter().map(|a| a.hp.value_loss_ratio))
    }

    pub fn is_finite(&self) -> bool {
        self.agents.iter().all(|a| {
            let l = &a.loss;
            a.learning_rate.is_finite()
                && a.hp.value_loss_ratio.is_finite()
                && a.win_rate.is_none_or(f64::is_finite)
                && [l.value_term, l.policy_term, l.reg_term, l.total].iter().all(|v| v.is_finite())
        }) && self.mean_game_length.is_finite()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Everything one iteration produced. The inputs are left untouched, so a
/// failed iteration leaves the caller at its previous state.
#[derive(Clone, Debug)]
pub struct IterationOutput {
    pub state: PopulationState,
    pub buffer: ReplayBuffer,
    pub report: IterationReport,
    pub selfplay_games: Vec<GameRecord>,
    pub tournament: Option<TournamentResult>,
}

pub fn run_iteration<E: Executor>(
    state: &PopulationState,
    buffer: &ReplayBuffer,
    config: &TrainConfig,
    exec: &E,
) -> Result<IterationOutput, TrainError> {
    config.validate()?;
    if state.size() != config.population_size {
        return Err(TrainError::StateMismatch("population size"));
    }
    if state.slots.iter().any(|s| *s.weights.config() != config.network) {
        return Err(TrainError::StateMismatch("network config"));
    }
    let mut state = state.clone();
    let mut buffer = buffer.clone();
    let iteration = state.iteration + 1;
    let base = state.next_seed();

    // Self-play.
    let p = state.size();
    let pairs = if p == 1 {
        vec![(0, 0)]
    } else {
        let plan = selfplay::make_pairings(&(0..p).collect::<Vec<_>>(), &mut seeds::rng(base, &[phase::PAIRING]))?;
        plan.pairs
    };
    let counts = selfplay::split_games(config.games_per_iteration, pairs.len())?;
    let mut jobs = Vec::with_capacity(config.games_per_iteration);
    for (i, (&(a, b), &n)) in pairs.iter().zip(&counts).enumerate() {
        jobs.extend(selfplay::pair_jobs(a, b, n, seeds::derive(base, &[phase::SELF_PLAY, i as u64]))?);
    }
    let games = {
        let nets: Vec<&NetworkWeights<f32>> = state.slots.iter().map(|s| &s.weights).collect();
        exec.map(jobs, |job| selfplay::run_game_job(job, &nets, &config.search, config.board))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut examples = Vec::new();
    for record in &games {
        examples.extend(selfplay::to_examples(record, &config.network.value_head, iteration)?);
    }
    let new_examples = examples.len();
    let mean_game_length = if games.is_empty() {
        0.0
    } else {
        games.iter().map(|g| g.moves.len()).sum::<usize>() as f64 / games.len() as f64
    };
    buffer.append_iteration(iteration, examples)?;

    // Optimization on the shared buffer; each agent owns its weights.
    let steps = config.steps_for(new_examples);
    let items: Vec<(AgentId, NetworkWeights<f32>, Hyperparams)> = state
        .slots
        .iter()
        .map(|s| (s.id, s.weights.clone(), s.hp))
        .collect();
    let trained = exec.map(items, |(id, mut weights, hp)| {
        let mut rng = seeds::rng(base, &[phase::OPTIMIZE, id as u64]);
        let step_hp = Hyperparams {
            learning_rate: hp.learning_rate_at(iteration),
            ..hp
        };
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let batch = buffer.sample_batch(config.batch_size, &mut rng).expect("buffer holds this iteration's games");
            match weights.train_step(&batch, &step_hp) {
                Ok(l) => losses.push(l),
                Err(source) => return Err(TrainError::Optimize { agent: id, source }),
            }
        }
        Ok((weights, step_hp.learning_rate, LossBreakdown::mean(&losses)))
    });
    let mut agents = Vec::with_capacity(p);
    for (slot, result) in state.slots.iter_mut().zip(trained) {
        let (weights, learning_rate, loss) = result?;
        slot.weights = weights;
        agents.push(AgentReport {
            id: slot.id,
            hp: slot.hp,
            learning_rate,
            next_hp: slot.hp,
            win_rate: None,
            loss,
            steps,
        });
    }

    // Evaluation.
    let tournament = if config.mode.evaluates() {
        let nets: Vec<&NetworkWeights<f32>> = state.slots.iter().map(|s| &s.weights).collect();
        let (result, _) = evaluation::run_round_robin(
            &nets,
            config.eval_games_per_pairing,
            &config.search,
            config.board,
            seeds::derive(base, &[phase::EVALUATE]),
            exec,
        )?;
        for a in &mut agents {
            a.win_rate = result.win_rate_of(a.id);
        }
        state.ranking = result.ranking.clone();
        Some(result)
    } else {
        None
    };

    // Exploit and explore.
    let mut replaced = Vec::new();
    let mut perturbed = Vec::new();
    if config.mode.exploits() {
        replaced = pbt::exploit(&mut state.slots, &state.ranking, config.exploit_percent, iteration)?;
    }
    if config.mode.explores() {
        let ids: Vec<AgentId> = replaced.iter().map(|&(r, _)| r).collect();
        perturbed = pbt::explore(&mut state.slots, &ids, &config.bounds, iteration, &mut seeds::rng(base, &[phase::EXPLORE]))?;
    }
    for (a, slot) in agents.iter_mut().zip(&state.slots) {
        a.next_hp = slot.hp;
    }

    state.iteration = iteration;
    let report = IterationReport {
        iteration,
        agents,
        replaced,
        perturbed,
        ranking: state.ranking.clone(),
        selfplay_games: games.len(),
        new_examples,
        buffer_examples: buffer.len(),
        mean_game_length,
    };
    Ok(IterationOutput {
        state,
        buffer,
        report,
        selfplay_games: games,
        tournament,
    })
}
