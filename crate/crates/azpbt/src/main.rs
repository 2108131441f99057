use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use azpbt::checkpoint::{self, CheckpointError};
use azpbt::config::{self, ConfigError, Settings};
use azpbt::metrics::{self, Format};
use azpbt::run::{self, Iteration, Run, RunError};
use azpbt::tournament::{self, TournamentError, TournamentOptions};
use azpbt::Workers;
use azpbt_core::Mode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "azpbt", version, about = "AlphaZero with population based training on small Go boards")]
#[command(after_help = config::key_table())]
struct Cli {
    /// Worker threads for self-play, optimization and evaluation. Results do
    /// not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set population=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; an existing run with the same config is resumed.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    ReplaceOnly,
    Neither,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
    Jsonl,
}

#[derive(Subcommand)]
enum Command {
    /// Train a population with exploit and explore.
    Train(RunArgs),
    /// Train one agent with fixed hyperparameters and no evaluation phase.
    Baseline(RunArgs),
    /// Train a population without perturbation.
    Ablation {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_enum)]
        variant: Variant,
    },
    /// Cross-run tournament between the checkpoints of several runs.
    Tournament {
        /// Run directories (at least two).
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Sample every n-th iteration.
        #[arg(long, default_value_t = 5)]
        every: u32,
        /// Games per matchup, half with each colour.
        #[arg(long, default_value_t = 100)]
        games: usize,
        /// Simulations per move; defaults to each run's own setting.
        #[arg(long)]
        simulations: Option<u32>,
        /// Opening moves sampled from visit counts; default max(1, size^2 / 12).
        #[arg(long)]
        opening_moves: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a run's metrics as CSV or JSON lines.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe a run directory, checkpoint directory or checkpoint file.
    Inspect { path: PathBuf },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Incompatible(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Incompatible(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Failure {
        Failure::Config(e.into())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Failure {
        match e {
            RunError::Incompatible { .. } | RunError::Checkpoint(CheckpointError::Incompatible { .. }) => Failure::Incompatible(e.into()),
            e => Failure::Runtime(e.into()),
        }
    }
}

impl From<TournamentError> for Failure {
    fn from(e: TournamentError) -> Failure {
        match e {
            TournamentError::Incompatible(_) | TournamentError::Run(RunError::Incompatible { .. }) => Failure::Incompatible(e.into()),
            TournamentError::TooFewRuns | TournamentError::Games(_) => Failure::Config(e.into()),
            e => Failure::Runtime(e.into()),
        }
    }
}

fn settings(args: &RunArgs, mode: Mode) -> Result<Settings, ConfigError> {
    let mut s = match &args.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    for o in &args.overrides {
        s.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        s.set("train.seed", &seed.to_string())?;
    }
    s.require_mode(mode)?;
    Ok(s)
}

fn progress(it: &Iteration) {
    let mean = it.summary.rows.last().expect("mean row");
    eprintln!(
        "iteration {:>4}  games {:>5}  examples {:>7}  lr {:.3e}  ratio {:.3}  loss {:.4}  replaced {:?}  {:.1}s",
        it.summary.iteration,
        it.summary.selfplay_games,
        it.summary.buffer_examples,
        mean.learning_rate,
        mean.value_loss_ratio,
        mean.loss_total,
        it.summary.replaced,
        it.seconds
    );
}

fn train(args: &RunArgs, mode: Mode, workers: &Workers) -> Result<(), Failure> {
    let settings = settings(args, mode)?;
    settings.resolve()?;
    let run = Run::open(&args.run, &settings)?;
    let state = run.train(workers, progress)?;
    eprintln!(
        "{}: {} iterations, top agent {}, {} distinct hyperparameter sets",
        args.run.display(),
        state.iteration,
        state.top_agent(),
        state.distinct_hyperparams()
    );
    Ok(())
}

fn inspect(path: &Path) -> Result<(), Failure> {
    let runtime = |e: CheckpointError| Failure::Runtime(e.into());
    if path.is_file() {
        let net = checkpoint::load_network(path).map_err(runtime)?;
        let c = net.config();
        println!(
            "network: {}x{} board, {} blocks, {} filters, {} value outputs, {} parameters",
            c.board_size,
            c.board_size,
            c.residual_blocks,
            c.filters,
            c.value_outputs(),
            net.parameter_count()
        );
        return Ok(());
    }
    if path.join(checkpoint::META_FILE).is_file() {
        let state = checkpoint::load_checkpoint(path).map_err(runtime)?;
        println!("iteration {}, {} agents, ranking {:?}", state.iteration, state.size(), state.ranking);
        for slot in &state.slots {
            let hp = slot.hp;
            println!(
                "  agent {:>2}: lr {:.4e}  ratio {:.4}  decay {:?}  {} lineage events",
                slot.id,
                hp.learning_rate,
                hp.value_loss_ratio,
                hp.lr_decay.map(|d| (d.from_iteration, d.learning_rate)),
                slot.lineage.len()
            );
        }
        return Ok(());
    }
    let latest = run::latest_iteration(path)?.ok_or_else(|| Failure::Runtime(anyhow::anyhow!("{}: not a run or checkpoint", path.display())))?;
    let run = Run::existing(path)?;
    let t = &run.config.train;
    println!(
        "run {}: mode {}, {} agents, {}/{} iterations committed",
        path.display(),
        config::mode_name(t.mode),
        t.population_size,
        latest,
        t.iterations
    );
    if let Some(last) = metrics::load_summaries(path).map_err(|e| Failure::Runtime(e.into()))?.last() {
        println!("latest ranking {:?}, replaced {:?}", last.ranking, last.replaced);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let workers = Workers::new(cli.workers).context("building worker pool").map_err(Failure::Runtime)?;
    match cli.command {
        Command::Train(args) => train(&args, Mode::Pbt, &workers),
        Command::Baseline(args) => train(&args, Mode::Baseline, &workers),
        Command::Ablation { args, variant } => {
            let mode = match variant {
                Variant::ReplaceOnly => Mode::AblationReplaceOnly,
                Variant::Neither => Mode::AblationNeither,
            };
            train(&args, mode, &workers)
        }
        Command::Tournament {
            runs,
            every,
            games,
            simulations,
            opening_moves,
            seed,
            out,
        } => {
            let options = TournamentOptions {
                games_per_matchup: games,
                every,
                simulations,
                opening_moves,
                seed,
            };
            let rows = tournament::cross_run_tournament(&runs, &options, &workers)?;
            let written = match &out {
                Some(path) => std::fs::File::create(path)
                    .with_context(|| path.display().to_string())
                    .and_then(|f| tournament::write_table(&rows, f).map_err(Into::into)),
                None => tournament::write_table(&rows, std::io::stdout()).map_err(Into::into),
            };
            written.map_err(Failure::Runtime)
        }
        Command::Export { run, format, out } => {
            let format = match format {
                ExportFormat::Csv => Format::Csv,
                ExportFormat::Jsonl => Format::JsonLines,
            };
            let rows = metrics::export_metrics(&run, format, &out).map_err(|e| Failure::Runtime(e.into()))?;
            eprintln!("{rows} rows written to {}", out.display());
            Ok(())
        }
        Command::Inspect { path } => inspect(&path),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Runtime(e) | Failure::Incompatible(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
