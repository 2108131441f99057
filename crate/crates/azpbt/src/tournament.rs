//! Matches between the checkpoints of different runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use azpbt_core::evaluation::{self, EvaluationError, MatchSide};
use azpbt_core::seeds::{self, phase};
use azpbt_core::{BoardConfig, Executor, NetworkWeights, SearchConfig};

use crate::checkpoint::{self, CheckpointError};
use crate::run::{latest_iteration, Run, RunError};

#[derive(Debug, thiserror::Error)]
pub enum TournamentError {
    #[error("a tournament needs at least two runs")]
    TooFewRuns,
    #[error("games per matchup must be even and positive, got {0}")]
    Games(usize),
    #[error("incompatible runs: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Play(#[from] EvaluationError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Default number of opening moves sampled from the visit distribution in
/// tournament games, so repeated games between two fixed networks differ.
pub fn default_opening_moves(board_size: usize) -> usize {
    (board_size * board_size / 12).max(1)
}

/// Search used in matches: no root noise, sampled opening, argmax after.
pub fn match_search(base: &SearchConfig, opening_moves: usize, simulations: Option<u32>) -> SearchConfig {
    SearchConfig {
        dirichlet_epsilon: 0.0,
        temperature_moves: opening_moves,
        simulations: simulations.unwrap_or(base.simulations),
        ..*base
    }
}

#[derive(Clone, Debug)]
pub struct TournamentOptions {
    pub games_per_matchup: usize,
    /// Sample iterations every, 2 * every, ...
    pub every: u32,
    pub simulations: Option<u32>,
    pub opening_moves: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TournamentRow {
    pub iteration: u32,
    pub run: String,
    /// Agent that represented the run: the evaluation's top agent for a
    /// population, agent 0 for a baseline.
    pub agent: usize,
    /// Win rate against every other run, in run order (self omitted).
    pub versus: Vec<(String, f64)>,
    pub min_win_rate: f64,
    pub avg_win_rate: f64,
}

pub struct Entrant {
    pub name: String,
    run: Run,
    last: u32,
}

impl Entrant {
    pub fn open(dir: &Path) -> Result<Entrant, TournamentError> {
        let run = Run::existing(dir)?;
        let last = latest_iteration(dir)?.unwrap_or(0);
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Entrant { name, run, last })
    }

    pub fn board(&self) -> BoardConfig {
        self.run.config.train.board
    }

    /// The representative network at `iteration`.
    pub fn representative(&self, iteration: u32) -> Result<(usize, NetworkWeights<f32>), TournamentError> {
        let dir = self.run.dir.join(iteration.to_string());
        let meta = checkpoint::load_meta(&dir)?;
        let agent = meta.ranking.first().copied().unwrap_or(0);
        Ok((agent, checkpoint::load_network(&checkpoint::agent_file(&dir, agent))?))
    }
}

/// Round robin between runs at every sampled iteration. With `n` runs and
/// `g` games per matchup, each run plays `(n - 1) * g` games per sampled
/// iteration, half of them as Black.
pub fn cross_run_tournament<E: Executor>(
    run_dirs: &[PathBuf],
    options: &TournamentOptions,
    exec: &E,
) -> Result<Vec<TournamentRow>, TournamentError> {
    if run_dirs.len() < 2 {
        return Err(TournamentError::TooFewRuns);
    }
    if options.games_per_matchup == 0 || options.games_per_matchup % 2 != 0 {
        return Err(TournamentError::Games(options.games_per_matchup));
    }
    let entrants = run_dirs.iter().map(|d| Entrant::open(d)).collect::<Result<Vec<_>, _>>()?;
    let board = entrants[0].board();
    for e in &entrants[1..] {
        let b = e.board();
        if (b.board_size, b.komi) != (board.board_size, board.komi) {
            return Err(TournamentError::Incompatible(format!(
                "{} plays {}x{} at komi {}, {} plays {}x{} at komi {}",
                entrants[0].name,
                board.board_size,
                board.board_size,
                board.komi.points(),
                e.name,
                b.board_size,
                b.board_size,
                b.komi.points()
            )));
        }
    }
    let opening = options.opening_moves.unwrap_or_else(|| default_opening_moves(board.board_size));
    let last = entrants.iter().map(|e| e.last).min().unwrap_or(0);
    let every = options.every.max(1);
    let n = entrants.len();
    let mut rows = Vec::new();
    for iteration in (1..=last / every).map(|k| k * every) {
        let reps = entrants.iter().map(|e| e.representative(iteration)).collect::<Result<Vec<_>, _>>()?;
        let mut rate = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let side = |k: usize| MatchSide::Network {
                    net: &reps[k].1,
                    search: match_search(&entrants[k].run.config.train.search, opening, options.simulations),
                };
                let seed = seeds::derive(options.seed, &[phase::MATCH, u64::from(iteration), i as u64, j as u64]);
                let (result, _) = evaluation::play_match(side(i), side(j), options.games_per_matchup, board, seed, exec)?;
                rate[i][j] = result.a_win_rate();
                rate[j][i] = result.b_win_rate();
            }
        }
        for i in 0..n {
            let versus: Vec<(String, f64)> = (0..n).filter(|&j| j != i).map(|j| (entrants[j].name.clone(), rate[i][j])).collect();
            let min_win_rate = versus.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
            let avg_win_rate = versus.iter().map(|v| v.1).sum::<f64>() / versus.len() as f64;
            rows.push(TournamentRow {
                iteration,
                run: entrants[i].name.clone(),
                agent: reps[i].0,
                versus,
                min_win_rate,
                avg_win_rate,
            });
        }
    }
    Ok(rows)
}

/// CSV with columns `iteration, run, agent, min_win_rate, avg_win_rate,
/// vs_<run>...`; a run's own column is empty.
pub fn write_table<W: Write>(rows: &[TournamentRow], out: W) -> Result<(), csv::Error> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.run.as_str()) {
            names.push(&r.run);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string(), "run".into(), "agent".into(), "min_win_rate".into(), "avg_win_rate".into()];
    header.extend(names.iter().map(|n| format!("vs_{n}")));
    w.write_record(&header)?;
    for r in rows {
        let mut record = vec![r.iteration.to_string(), r.run.clone(), r.agent.to_string(), r.min_win_rate.to_string(), r.avg_win_rate.to_string()];
        for name in &names {
            record.push(r.versus.iter().find(|v| v.0 == *name).map(|v| v.1.to_string()).unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
