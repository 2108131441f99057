//! Per-iteration metrics rows, lineage records and their CSV / JSON-lines
//! files.
//!
//! Each iteration contributes one row per agent followed by one `mean` row.
//! Column meanings are listed in [`COLUMNS`] order in the README.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use azpbt_core::pbt::LineageEvent;
use azpbt_core::trainer::IterationReport;
use azpbt_core::{Hyperparams, PopulationState};
use serde::{Deserialize, Serialize};

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const LINEAGE_FILE: &str = "lineage.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";

pub const COLUMNS: [&str; 19] = [
    "iteration",
    "agent",
    "learning_rate",
    "base_learning_rate",
    "decay_from",
    "decay_learning_rate",
    "value_loss_ratio",
    "next_learning_rate",
    "next_value_loss_ratio",
    "win_rate",
    "rank",
    "loss_total",
    "loss_value",
    "loss_policy",
    "loss_reg",
    "steps",
    "replaced_by",
    "lr_factor",
    "ratio_factor",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u32,
    /// Agent id, or `mean` for the population average.
    pub agent: String,
    /// Rate used by this iteration's SGD steps.
    pub learning_rate: f64,
    pub base_learning_rate: f64,
    pub decay_from: Option<u32>,
    pub decay_learning_rate: Option<f64>,
    pub value_loss_ratio: f64,
    /// Hyperparameters after exploit and explore.
    pub next_learning_rate: f64,
    pub next_value_loss_ratio: f64,
    pub win_rate: Option<f64>,
    /// 1-based position in this iteration's ranking.
    pub rank: Option<usize>,
    pub loss_total: f64,
    /// Unscaled value error; the total uses value_loss_ratio times this.
    pub loss_value: f64,
    pub loss_policy: f64,
    pub loss_reg: f64,
    pub steps: usize,
    pub replaced_by: Option<usize>,
    pub lr_factor: Option<f64>,
    pub ratio_factor: Option<f64>,
}

/// Contents of `<run>/<iter>/report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u32,
    pub selfplay_games: usize,
    pub new_examples: usize,
    pub buffer_examples: usize,
    pub mean_game_length: f64,
    /// Best first; empty when the mode has no evaluation.
    pub ranking: Vec<usize>,
    /// `(replaced, source)`.
    pub replaced: Vec<(usize, usize)>,
    pub rows: Vec<MetricsRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn summarize(report: &IterationReport) -> IterationSummary {
    let mut rows: Vec<MetricsRow> = report
        .agents
        .iter()
        .map(|a| {
            let perturbed = report.perturbed.iter().find(|&&(id, _, _)| id == a.id);
            MetricsRow {
                iteration: report.iteration,
                agent: a.id.to_string(),
                learning_rate: a.learning_rate,
                base_learning_rate: a.hp.learning_rate,
                decay_from: a.hp.lr_decay.map(|d| d.from_iteration),
                decay_learning_rate: a.hp.lr_decay.map(|d| d.learning_rate),
                value_loss_ratio: a.hp.value_loss_ratio,
                next_learning_rate: a.next_hp.learning_rate,
                next_value_loss_ratio: a.next_hp.value_loss_ratio,
                win_rate: a.win_rate,
                rank: report.ranking.iter().position(|&id| id == a.id).filter(|_| a.win_rate.is_some()).map(|r| r + 1),
                loss_total: a.loss.total,
                loss_value: a.loss.value_term,
                loss_policy: a.loss.policy_term,
                loss_reg: a.loss.reg_term,
                steps: a.steps,
                replaced_by: report.replaced.iter().find(|&&(r, _)| r == a.id).map(|&(_, s)| s),
                lr_factor: perturbed.map(|p| p.1.value()),
                ratio_factor: perturbed.map(|p| p.2.value()),
            }
        })
        .collect();
    let avg = |f: fn(&MetricsRow) -> f64| mean(rows.iter().map(f));
    let win_rate = if rows.iter().all(|r| r.win_rate.is_some()) {
        Some(mean(rows.iter().map(|r| r.win_rate.unwrap())))
    } else {
        None
    };
    let mean_row = MetricsRow {
        iteration: report.iteration,
        agent: "mean".into(),
        learning_rate: avg(|r| r.learning_rate),
        base_learning_rate: avg(|r| r.base_learning_rate),
        decay_from: None,
        decay_learning_rate: None,
        value_loss_ratio: avg(|r| r.value_loss_ratio),
        next_learning_rate: avg(|r| r.next_learning_rate),
        next_value_loss_ratio: avg(|r| r.next_value_loss_ratio),
        win_rate,
        rank: None,
        loss_total: avg(|r| r.loss_total),
        loss_value: avg(|r| r.loss_value),
        loss_policy: avg(|r| r.loss_policy),
        loss_reg: avg(|r| r.loss_reg),
        steps: rows.first().map_or(0, |r| r.steps),
        replaced_by: None,
        lr_factor: None,
        ratio_factor: None,
    };
    rows.push(mean_row);
    IterationSummary {
        iteration: report.iteration,
        selfplay_games: report.selfplay_games,
        new_examples: report.new_examples,
        buffer_examples: report.buffer_examples,
        mean_game_length: report.mean_game_length,
        ranking: report.ranking.clone(),
        replaced: report.replaced.clone(),
        rows,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpRecord {
    pub learning_rate: f64,
    pub value_loss_ratio: f64,
    pub l2: f64,
    pub decay_from: Option<u32>,
    pub decay_learning_rate: Option<f64>,
}

impl From<&Hyperparams> for HpRecord {
    fn from(hp: &Hyperparams) -> HpRecord {
        HpRecord {
            learning_rate: hp.learning_rate,
            value_loss_ratio: hp.value_loss_ratio,
            l2: hp.l2_coefficient,
            decay_from: hp.lr_decay.map(|d| d.from_iteration),
            decay_learning_rate: hp.lr_decay.map(|d| d.learning_rate),
        }
    }
}

/// One line of `lineage.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LineageRecord {
    Init {
        agent: usize,
        hp: HpRecord,
    },
    ReplacedBy {
        agent: usize,
        iteration: u32,
        source: usize,
        before: HpRecord,
        after: HpRecord,
    },
    Perturbed {
        agent: usize,
        iteration: u32,
        lr_factor: f64,
        ratio_factor: f64,
        before: HpRecord,
        after: HpRecord,
    },
}

/// Initial hyperparameters of every agent followed by all events, ordered by
/// iteration, then replacement before perturbation, then agent.
pub fn lineage_records(state: &PopulationState, initial_hp: &[Hyperparams]) -> Vec<LineageRecord> {
    let mut out: Vec<LineageRecord> = (0..state.size())
        .map(|agent| LineageRecord::Init {
            agent,
            hp: (&initial_hp[agent % initial_hp.len()]).into(),
        })
        .collect();
    let mut events: Vec<(u32, u8, usize, LineageRecord)> = Vec::new();
    for slot in &state.slots {
        for e in &slot.lineage {
            let (order, record) = match e {
                LineageEvent::ReplacedBy {
                    iteration,
                    source,
                    before,
                    after,
                } => (
                    0,
                    LineageRecord::ReplacedBy {
                        agent: slot.id,
                        iteration: *iteration,
                        source: *source,
                        before: before.into(),
                        after: after.into(),
                    },
                ),
                LineageEvent::Perturbed {
                    iteration,
                    lr_factor,
                    ratio_factor,
                    before,
                    after,
                } => (
                    1,
                    LineageRecord::Perturbed {
                        agent: slot.id,
                        iteration: *iteration,
                        lr_factor: lr_factor.value(),
                        ratio_factor: ratio_factor.value(),
                        before: before.into(),
                        after: after.into(),
                    },
                ),
            };
            events.push((e.iteration(), order, slot.id, record));
        }
    }
    events.sort_by_key(|&(it, order, agent, _)| (it, order, agent));
    out.extend(events.into_iter().map(|(_, _, _, r)| r));
    out
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("no run at {}", .0.display())]
    MissingRun(PathBuf),
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

/// Iteration directories (`1`, `2`, ...) holding a committed report, in
/// order.
pub fn load_summaries(run_dir: &Path) -> Result<Vec<IterationSummary>, MetricsError> {
    if !run_dir.is_dir() {
        return Err(MetricsError::MissingRun(run_dir.to_path_buf()));
    }
    let mut iterations: Vec<u32> = Vec::new();
    for entry in fs::read_dir(run_dir).map_err(io_at(run_dir))? {
        let entry = entry.map_err(io_at(run_dir))?;
        if let Some(it) = entry.file_name().to_str().and_then(|n| n.parse::<u32>().ok()) {
            if it > 0 && entry.path().join(REPORT_FILE).is_file() {
                iterations.push(it);
            }
        }
    }
    iterations.sort_unstable();
    iterations
        .into_iter()
        .map(|it| {
            let path = run_dir.join(it.to_string()).join(REPORT_FILE);
            let text = fs::read_to_string(&path).map_err(io_at(&path))?;
            serde_json::from_str(&text).map_err(|source| MetricsError::Json { path, source })
        })
        .collect()
}

pub fn write_rows<W: Write>(rows: &[MetricsRow], format: Format, header: bool, out: W) -> Result<(), MetricsError> {
    let path = PathBuf::from("<metrics>");
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            let err = |source| MetricsError::Csv { path: path.clone(), source };
            if header {
                w.write_record(COLUMNS).map_err(err)?;
            }
            for row in rows {
                w.serialize(row).map_err(err)?;
            }
            w.flush().map_err(io_at(&path))
        }
        Format::JsonLines => {
            let mut out = BufWriter::new(out);
            for row in rows {
                serde_json::to_writer(&mut out, row).map_err(|source| MetricsError::Json { path: path.clone(), source })?;
                out.write_all(b"\n").map_err(io_at(&path))?;
            }
            out.flush().map_err(io_at(&path))
        }
    }
}

/// Writes every row of the run to `out`; a run without iterations gives a
/// header-only CSV or an empty JSON-lines file.
pub fn export_metrics(run_dir: &Path, format: Format, out: &Path) -> Result<usize, MetricsError> {
    let rows: Vec<MetricsRow> = load_summaries(run_dir)?.into_iter().flat_map(|s| s.rows).collect();
    let file = File::create(out).map_err(io_at(out))?;
    write_rows(&rows, format, true, file)?;
    Ok(rows.len())
}

/// The run's live `metrics.csv` and `metrics.jsonl`, appended once per
/// committed iteration.
pub struct MetricsStream {
    run_dir: PathBuf,
}

impl MetricsStream {
    /// Rewrites both files from the committed reports, dropping anything
    /// written for an iteration that did not commit.
    pub fn rebuild(run_dir: &Path) -> Result<MetricsStream, MetricsError> {
        for format in [Format::Csv, Format::JsonLines] {
            export_metrics(run_dir, format, &run_dir.join(file_for(format)))?;
        }
        Ok(MetricsStream {
            run_dir: run_dir.to_path_buf(),
        })
    }

    pub fn append(&self, summary: &IterationSummary) -> Result<(), MetricsError> {
        for format in [Format::Csv, Format::JsonLines] {
            let path = self.run_dir.join(file_for(format));
            let file = OpenOptions::new().append(true).open(&path).map_err(io_at(&path))?;
            write_rows(&summary.rows, format, false, file)?;
        }
        Ok(())
    }
}

fn file_for(format: Format) -> &'static str {
    match format {
        Format::Csv => METRICS_CSV,
        Format::JsonLines => METRICS_JSONL,
    }
}

pub fn write_lineage(path: &Path, records: &[LineageRecord]) -> Result<(), MetricsError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|source| MetricsError::Json {
            path: path.to_path_buf(),
            source,
        })?);
        text.push('\n');
    }
    fs::write(path, text).map_err(io_at(path))
}
