//! File formats, worker pools, the on-disk run driver and cross-run
//! tournaments around `azpbt-core`.

pub mod checkpoint;
pub mod config;
pub mod executor;
pub mod metrics;
pub mod run;
pub mod sgf;
pub mod tournament;

pub use executor::Workers;
