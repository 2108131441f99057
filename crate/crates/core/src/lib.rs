//! AlphaZero training with population based training (PBT) on small Go boards.
//!
//! Everything in this crate is pure computation over `alloc` collections:
//! the Go engine, the policy/value network with its hand-written backward
//! pass, PUCT search, the shared replay buffer, self-play and round-robin
//! scheduling, the exploit/explore controller, and the iteration driver.
//! File formats, the CLI and thread pools live in the `azpbt` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod evaluation;
pub mod exec;
pub mod game;
pub mod mcts;
pub mod nnet;
pub mod pbt;
pub mod replay;
pub mod seeds;
pub mod selfplay;
pub mod trainer;

pub use evaluation::{MatchResult, TournamentResult};
pub use exec::{Executor, Sequential};
pub use game::{BoardConfig, Color, GameResult, GameState, Komi, Move, Winner};
pub use mcts::{SearchConfig, SearchResult};
pub use nnet::{Hyperparams, LossBreakdown, NetworkConfig, NetworkWeights, ValueHead};
pub use pbt::{AgentSlot, PopulationState};
pub use replay::{ReplayBuffer, TrainingExample};
pub use trainer::{IterationReport, Mode, TrainConfig};

/// Index of an agent within its population.
pub type AgentId = usize;
