//! Training runs on disk.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.cfg              effective configuration, every key
//! 0/                      initial population
//! <iter>/agent_<id>.ckpt  weights after the iteration (post exploit/explore)
//! <iter>/population.meta  iteration, master rng, ranking, hyperparameters, lineage
//! <iter>/report.json      iteration summary and metrics rows
//! <iter>/examples.bin     the iteration's self-play examples (kept for the replay window)
//! <iter>/games.sgf        self-play games, when run.sgf is on
//! metrics.csv, metrics.jsonl, lineage.jsonl
//! timing.jsonl            wall-clock seconds per iteration (not deterministic)
//! ```
//!
//! An iteration is written to `<iter>.tmp/` and renamed into place, so a
//! directory named by a number is always complete. Resuming picks up the
//! newest such directory; a failed iteration leaves nothing behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use azpbt_core::trainer::{self, IterationOutput, TrainError};
use azpbt_core::{Executor, PopulationState, ReplayBuffer};

use crate::checkpoint::{self, CheckpointError, EXAMPLES_FILE, META_FILE};
use crate::config::{RunConfig, Settings};
use crate::metrics::{self, IterationSummary, MetricsError, MetricsStream, LINEAGE_FILE, REPORT_FILE, TIMING_FILE};
use crate::sgf;

pub const CONFIG_FILE: &str = "config.cfg";
pub const SGF_FILE: &str = "games.sgf";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("iteration {iteration} failed: {source} (last durable checkpoint: iteration {last_durable})")]
    Iteration {
        iteration: u32,
        last_durable: u32,
        source: TrainError,
    },
    #[error(transparent)]
    Setup(#[from] TrainError),
    #[error("{}: {reason}", dir.display())]
    Incompatible { dir: PathBuf, reason: String },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn iteration_dir(run_dir: &Path, iteration: u32) -> PathBuf {
    run_dir.join(iteration.to_string())
}

/// Newest iteration with a complete checkpoint.
pub fn latest_iteration(run_dir: &Path) -> Result<Option<u32>, RunError> {
    if !run_dir.is_dir() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(run_dir).map_err(io_at(run_dir))? {
        let entry = entry.map_err(io_at(run_dir))?;
        if let Some(it) = entry.file_name().to_str().and_then(|n| n.parse::<u32>().ok()) {
            if entry.path().join(META_FILE).is_file() {
                best = best.max(Some(it));
            }
        }
    }
    Ok(best)
}

/// Everything but the iteration count must match to resume.
fn resumable(stored: &str, current: &str) -> bool {
    let strip = |s: &str| s.lines().filter(|l| !l.starts_with("train.iterations ")).map(str::to_owned).collect::<Vec<_>>();
    strip(stored) == strip(current)
}

pub struct Iteration<'a> {
    pub output: &'a IterationOutput,
    pub summary: &'a IterationSummary,
    pub seconds: f64,
}

pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
    canonical: String,
}

impl Run {
    /// Opens `dir` for `settings`. An existing run must have been started
    /// with the same configuration up to `train.iterations`.
    pub fn open(dir: &Path, settings: &Settings) -> Result<Run, RunError> {
        let config = settings.resolve().map_err(|e| RunError::Incompatible {
            dir: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        let canonical = settings.canonical();
        let stored_path = dir.join(CONFIG_FILE);
        if stored_path.is_file() {
            let stored = fs::read_to_string(&stored_path).map_err(io_at(&stored_path))?;
            if !resumable(&stored, &canonical) {
                return Err(RunError::Incompatible {
                    dir: dir.to_path_buf(),
                    reason: "run was started with a different configuration".into(),
                });
            }
        }
        Ok(Run {
            dir: dir.to_path_buf(),
            config,
            canonical,
        })
    }

    /// Loads the stored configuration of an existing run.
    pub fn existing(dir: &Path) -> Result<Run, RunError> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(io_at(&path))?;
        let settings = Settings::parse(&text).map_err(|e| RunError::Incompatible {
            dir: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        Run::open(dir, &settings)
    }

    fn remove_partial(&self) -> Result<(), RunError> {
        for entry in fs::read_dir(&self.dir).map_err(io_at(&self.dir))? {
            let entry = entry.map_err(io_at(&self.dir))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "tmp") {
                if path.is_dir() {
                    fs::remove_dir_all(&path).map_err(io_at(&path))?;
                } else {
                    fs::remove_file(&path).map_err(io_at(&path))?;
                }
            }
        }
        Ok(())
    }

    /// Moves a fully written `<iter>.tmp` into place.
    fn commit(&self, iteration: u32, write: impl FnOnce(&Path) -> Result<(), RunError>) -> Result<(), RunError> {
        let tmp = self.dir.join(format!("{iteration}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_at(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_at(&tmp))?;
        write(&tmp)?;
        let dest = iteration_dir(&self.dir, iteration);
        fs::rename(&tmp, &dest).map_err(io_at(&dest))
    }

    pub fn load_state(&self, iteration: u32) -> Result<PopulationState, RunError> {
        let state = checkpoint::load_checkpoint(&iteration_dir(&self.dir, iteration))?;
        let cfg = &self.config.train;
        if state.size() != cfg.population_size || state.slots.iter().any(|s| *s.weights.config() != cfg.network) {
            return Err(RunError::Incompatible {
                dir: self.dir.clone(),
                reason: format!("checkpoint {iteration} does not match the configured population"),
            });
        }
        Ok(state)
    }

    /// The buffer as it stood after `iteration`, rebuilt from the window's
    /// example files.
    fn load_buffer(&self, iteration: u32) -> Result<ReplayBuffer, RunError> {
        let window = self.config.train.replay_window;
        let mut buffer = ReplayBuffer::new(window).map_err(TrainError::from)?;
        let first = iteration.saturating_sub(window as u32 - 1).max(1);
        for it in first..=iteration {
            let examples = checkpoint::load_examples(&iteration_dir(&self.dir, it).join(EXAMPLES_FILE))?;
            buffer.append_iteration(it, examples).map_err(TrainError::from)?;
        }
        Ok(buffer)
    }

    fn write_lineage(&self, state: &PopulationState) -> Result<(), RunError> {
        let records = metrics::lineage_records(state, &self.config.train.initial_hp);
        let tmp = self.dir.join(format!("{LINEAGE_FILE}.tmp"));
        metrics::write_lineage(&tmp, &records)?;
        let dest = self.dir.join(LINEAGE_FILE);
        fs::rename(&tmp, &dest).map_err(io_at(&dest))
    }

    /// Runs (or continues) until `train.iterations` iterations are committed
    /// and returns the final population. `observe` sees every iteration
    /// after it is durable.
    pub fn train<E: Executor>(&self, exec: &E, mut observe: impl FnMut(&Iteration)) -> Result<PopulationState, RunError> {
        fs::create_dir_all(&self.dir).map_err(io_at(&self.dir))?;
        self.remove_partial()?;
        let config_path = self.dir.join(CONFIG_FILE);
        checkpoint::write_atomic(&config_path, self.canonical.as_bytes())?;
        let cfg = &self.config.train;

        let (mut state, mut buffer) = match latest_iteration(&self.dir)? {
            Some(it) => (self.load_state(it)?, self.load_buffer(it)?),
            None => {
                let state = trainer::init_population(cfg)?;
                self.commit(0, |dir| Ok(checkpoint::save_checkpoint(&state, dir)?))?;
                (state, ReplayBuffer::new(cfg.replay_window).map_err(TrainError::from)?)
            }
        };
        let stream = MetricsStream::rebuild(&self.dir)?;
        self.write_lineage(&state)?;

        while state.iteration < cfg.iterations {
            let iteration = state.iteration + 1;
            let started = Instant::now();
            let output = trainer::run_iteration(&state, &buffer, cfg, exec).map_err(|source| RunError::Iteration {
                iteration,
                last_durable: state.iteration,
                source,
            })?;
            let summary = metrics::summarize(&output.report);
            let examples = output.buffer.iteration_examples(iteration).unwrap_or(&[]);
            self.commit(iteration, |dir| {
                checkpoint::save_checkpoint(&output.state, dir)?;
                checkpoint::save_examples(examples, &dir.join(EXAMPLES_FILE))?;
                let report = serde_json::to_string_pretty(&summary).expect("summary serializes");
                checkpoint::write_atomic(&dir.join(REPORT_FILE), report.as_bytes())?;
                if self.config.sgf {
                    let path = dir.join(SGF_FILE);
                    fs::write(&path, sgf::games_to_sgf(&output.selfplay_games)).map_err(io_at(&path))?;
                }
                Ok(())
            })?;
            // Example files older than the window are never read again.
            if let Some(old) = iteration.checked_sub(cfg.replay_window as u32).filter(|&it| it > 0) {
                let stale = iteration_dir(&self.dir, old).join(EXAMPLES_FILE);
                if stale.exists() {
                    fs::remove_file(&stale).map_err(io_at(&stale))?;
                }
            }
            stream.append(&summary)?;
            self.write_lineage(&output.state)?;
            let seconds = started.elapsed().as_secs_f64();
            let timing = self.dir.join(TIMING_FILE);
            let mut file = fs::OpenOptions::new().create(true).append(true).open(&timing).map_err(io_at(&timing))?;
            writeln!(file, "{{\"iteration\":{iteration},\"wall_seconds\":{seconds}}}").map_err(io_at(&timing))?;
            observe(&Iteration {
                output: &output,
                summary: &summary,
                seconds,
            });
            state = output.state;
            buffer = output.buffer;
        }
        Ok(state)
    }
}
