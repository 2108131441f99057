//! `key = value` run configuration.
//!
//! Keys are dotted (`train.population`); a key's last segment is accepted on
//! its own when unambiguous (`population = 16`). `#` starts a comment.
//! Unknown keys and ill-typed values are errors. `auto` selects a value
//! derived from other keys where a key documents one.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use azpbt_core::pbt::HpBounds;
use azpbt_core::trainer::{StepsPerIteration, TrainError};
use azpbt_core::{BoardConfig, Hyperparams, Komi, Mode, NetworkConfig, SearchConfig, TrainConfig, ValueHead};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// Stated for the 9x9 experiments.
    Paper,
    /// Not given for the experiments; chosen here.
    Invented,
}

pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub source: Source,
    pub help: &'static str,
}

const fn key(key: &'static str, default: &'static str, source: Source, help: &'static str) -> KeyDoc {
    KeyDoc { key, default, source, help }
}

use Source::{Invented, Paper};

pub const KEYS: &[KeyDoc] = &[
    key("board.size", "9", Paper, "board size"),
    key("board.komi", "7", Paper, "komi in points, a multiple of 0.5; integers allow draws"),
    key("board.superko", "true", Invented, "positional superko"),
    key("board.max_moves", "auto", Invented, "move cap; auto = 2 * size^2"),
    key("net.blocks", "3", Paper, "residual blocks"),
    key("net.filters", "64", Paper, "filters per convolution"),
    key("net.value_head", "single", Paper, "single | multi (one value output per komi)"),
    key("net.komi_min", "2", Paper, "lowest komi of a multi value head"),
    key("net.komi_max", "12", Paper, "highest komi of a multi value head"),
    key("search.simulations", "64", Invented, "MCTS simulations per move"),
    key("search.c_puct", "1.5", Invented, "PUCT exploration constant"),
    key("search.dirichlet_alpha", "auto", Invented, "root noise concentration; auto = 10 / size^2"),
    key("search.dirichlet_epsilon", "0.25", Invented, "root noise weight in self-play"),
    key("search.temperature_moves", "auto", Invented, "opening moves sampled from visits; auto = size^2 / 4"),
    key("train.mode", "pbt", Paper, "pbt | baseline | replace-only | neither"),
    key("train.population", "16", Paper, "agents; 1 for baseline, even otherwise"),
    key("train.games_per_iteration", "5000", Paper, "self-play games per iteration, whole population"),
    key("train.iterations", "200", Paper, "iterations to run"),
    key("train.batch_size", "256", Invented, "examples per SGD step"),
    key("train.steps_per_iteration", "auto", Invented, "SGD steps per agent; auto = new examples * sample_reuse / batch_size"),
    key("train.sample_reuse", "1", Invented, "passes over fresh data when steps_per_iteration = auto"),
    key("train.replay_window", "4", Invented, "iterations of games kept in the shared buffer"),
    key("train.eval_games_per_pairing", "6", Paper, "round-robin games per pair of agents"),
    key("train.exploit_percent", "20", Paper, "share of the ranking replaced (bottom) and copied (top)"),
    key("train.seed", "1", Invented, "master seed"),
    key("hp.learning_rate", "0.02", Paper, "initial learning rate"),
    key("hp.value_loss_ratio", "1", Paper, "initial value loss ratio"),
    key("hp.l2", "0.0001", Paper, "L2 weight regularization coefficient"),
    key("hp.decay_from", "none", Invented, "first iteration of the decayed learning rate, or none"),
    key("hp.decay_lr", "none", Invented, "learning rate from decay_from on"),
    key("hp.grid", "none", Invented, "initial rows 'lr,ratio[,decay_from,decay_lr]; ...'; agent i takes row i mod rows"),
    key("bounds.lr_min", "0.000001", Invented, "learning-rate clamp after perturbation"),
    key("bounds.lr_max", "1", Invented, "learning-rate clamp after perturbation"),
    key("bounds.ratio_min", "0.01", Invented, "value-loss-ratio clamp after perturbation"),
    key("bounds.ratio_max", "100", Invented, "value-loss-ratio clamp after perturbation"),
    key("run.sgf", "false", Invented, "write each iteration's self-play games as SGF"),
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected 'key = value', found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?} is ambiguous: {candidates:?}")]
    AmbiguousKey { key: String, candidates: Vec<&'static str> },
    #[error("{key} = {value:?}: expected {expected}")]
    BadValue {
        key: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("train.mode is {found} but this command runs {wanted}")]
    ModeConflict { found: String, wanted: &'static str },
    #[error(transparent)]
    Invalid(#[from] TrainError),
}

pub fn resolve_key(name: &str) -> Result<&'static str, ConfigError> {
    if let Some(doc) = KEYS.iter().find(|d| d.key == name) {
        return Ok(doc.key);
    }
    let candidates: Vec<&'static str> = KEYS
        .iter()
        .filter(|d| d.key.rsplit('.').next() == Some(name))
        .map(|d| d.key)
        .collect();
    match candidates.len() {
        0 => Err(ConfigError::UnknownKey(name.to_string())),
        1 => Ok(candidates[0]),
        _ => Err(ConfigError::AmbiguousKey {
            key: name.to_string(),
            candidates,
        }),
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Pbt => "pbt",
        Mode::Baseline => "baseline",
        Mode::AblationReplaceOnly => "replace-only",
        Mode::AblationNeither => "neither",
    }
}

/// Explicitly set values, by full key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        s.apply_text(text)?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Settings::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// `key=value`, as given to `--set`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.to_string(),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = resolve_key(key)?;
        self.values.insert(key, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &'static str) -> &str {
        match self.values.get(key) {
            Some(v) => v,
            None => KEYS.iter().find(|d| d.key == key).expect("documented key").default,
        }
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Pins `train.mode`; an explicit conflicting mode is an error.
    pub fn require_mode(&mut self, mode: Mode) -> Result<(), ConfigError> {
        let wanted = mode_name(mode);
        if let Some(found) = self.values.get("train.mode") {
            if found != wanted {
                return Err(ConfigError::ModeConflict {
                    found: found.clone(),
                    wanted,
                });
            }
        }
        self.values.insert("train.mode", wanted.to_string());
        Ok(())
    }

    /// Every key with its effective value, in documentation order.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for doc in KEYS {
            writeln!(out, "{} = {}", doc.key, self.get(doc.key)).unwrap();
        }
        out
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &'static str, expected: &'static str) -> Result<T, ConfigError> {
        let value = self.get(key);
        value.parse().map_err(|_| ConfigError::BadValue {
            key,
            value: value.to_string(),
            expected,
        })
    }

    fn usize(&self, key: &'static str) -> Result<usize, ConfigError> {
        self.parse_as(key, "a non-negative integer")
    }

    fn f64(&self, key: &'static str) -> Result<f64, ConfigError> {
        let v: f64 = self.parse_as(key, "a number")?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ConfigError::BadValue {
                key,
                value: self.get(key).to_string(),
                expected: "a finite number",
            })
        }
    }

    fn auto_or<T>(&self, key: &'static str, parse: impl FnOnce(&Self) -> Result<T, ConfigError>) -> Result<Option<T>, ConfigError> {
        if self.get(key) == "auto" {
            Ok(None)
        } else {
            parse(self).map(Some)
        }
    }

    fn bad(&self, key: &'static str, expected: &'static str) -> ConfigError {
        ConfigError::BadValue {
            key,
            value: self.get(key).to_string(),
            expected,
        }
    }

    fn hyperparams(&self) -> Result<Vec<Hyperparams>, ConfigError> {
        let l2 = self.f64("hp.l2")?;
        let with_l2 = |hp: Hyperparams| Hyperparams { l2_coefficient: l2, ..hp };
        if self.get("hp.grid") != "none" {
            let expected = "rows 'lr,ratio[,decay_from,decay_lr]' separated by ';'";
            let mut rows = Vec::new();
            for row in self.get("hp.grid").split(';').map(str::trim).filter(|r| !r.is_empty()) {
                let fields: Vec<&str> = row.split(',').map(str::trim).collect();
                let num = |i: usize| fields[i].parse::<f64>().ok().filter(|v| v.is_finite());
                let hp = match fields.len() {
                    2 => Hyperparams::new(num(0).ok_or(self.bad("hp.grid", expected))?, num(1).ok_or(self.bad("hp.grid", expected))?),
                    4 => {
                        let from: u32 = fields[2].parse().map_err(|_| self.bad("hp.grid", expected))?;
                        Hyperparams::new(num(0).ok_or(self.bad("hp.grid", expected))?, num(1).ok_or(self.bad("hp.grid", expected))?)
                            .with_decay(from, num(3).ok_or(self.bad("hp.grid", expected))?)
                    }
                    _ => return Err(self.bad("hp.grid", expected)),
                };
                rows.push(with_l2(hp));
            }
            if rows.is_empty() {
                return Err(self.bad("hp.grid", expected));
            }
            return Ok(rows);
        }
        let mut hp = with_l2(Hyperparams::new(self.f64("hp.learning_rate")?, self.f64("hp.value_loss_ratio")?));
        match (self.get("hp.decay_from"), self.get("hp.decay_lr")) {
            ("none", "none") => {}
            (_, "none") => return Err(self.bad("hp.decay_lr", "a number when hp.decay_from is set")),
            ("none", _) => return Err(self.bad("hp.decay_from", "an iteration when hp.decay_lr is set")),
            _ => hp = hp.with_decay(self.parse_as("hp.decay_from", "an iteration number")?, self.f64("hp.decay_lr")?),
        }
        Ok(vec![hp])
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let size = self.usize("board.size")?;
        let komi_points = self.f64("board.komi")?;
        let komi = Komi::from_points(komi_points).map_err(|_| self.bad("board.komi", "a multiple of 0.5"))?;
        let superko = self.parse_as("board.superko", "true or false")?;
        let mut board = BoardConfig::new(size, komi)
            .map_err(|_| self.bad("board.size", "a supported board size"))?
            .with_superko(superko);
        if let Some(cap) = self.auto_or("board.max_moves", |s| s.usize("board.max_moves"))? {
            board = board.with_max_moves(cap);
        }

        let value_head = match self.get("net.value_head") {
            "single" => ValueHead::Single,
            "multi" => {
                let low: i32 = self.parse_as("net.komi_min", "an integer")?;
                let high: i32 = self.parse_as("net.komi_max", "an integer")?;
                ValueHead::komi_range(low, high)
            }
            _ => return Err(self.bad("net.value_head", "single or multi")),
        };
        let network = NetworkConfig::new(size, self.usize("net.blocks")?, self.usize("net.filters")?).with_value_head(value_head);

        let simulations = self.parse_as("search.simulations", "a positive integer")?;
        let mut search = SearchConfig::self_play(size, simulations);
        search.c_puct = self.f64("search.c_puct")?;
        search.dirichlet_epsilon = self.f64("search.dirichlet_epsilon")?;
        if let Some(alpha) = self.auto_or("search.dirichlet_alpha", |s| s.f64("search.dirichlet_alpha"))? {
            search.dirichlet_alpha = alpha;
        }
        if let Some(moves) = self.auto_or("search.temperature_moves", |s| s.usize("search.temperature_moves"))? {
            search.temperature_moves = moves;
        }

        let mode = match self.get("train.mode") {
            "pbt" => Mode::Pbt,
            "baseline" => Mode::Baseline,
            "replace-only" => Mode::AblationReplaceOnly,
            "neither" => Mode::AblationNeither,
            _ => return Err(self.bad("train.mode", "pbt, baseline, replace-only or neither")),
        };
        let reuse = self.f64("train.sample_reuse")?;
        let steps_per_iteration = match self.auto_or("train.steps_per_iteration", |s| s.usize("train.steps_per_iteration"))? {
            Some(n) => StepsPerIteration::Fixed(n),
            None => StepsPerIteration::Auto { reuse },
        };
        let bounds = HpBounds {
            lr_min: self.f64("bounds.lr_min")?,
            lr_max: self.f64("bounds.lr_max")?,
            ratio_min: self.f64("bounds.ratio_min")?,
            ratio_max: self.f64("bounds.ratio_max")?,
        };
        let train = TrainConfig {
            board,
            network,
            search,
            population_size: self.usize("train.population")?,
            games_per_iteration: self.usize("train.games_per_iteration")?,
            iterations: self.parse_as("train.iterations", "a non-negative integer")?,
            batch_size: self.usize("train.batch_size")?,
            steps_per_iteration,
            replay_window: self.usize("train.replay_window")?,
            eval_games_per_pairing: self.usize("train.eval_games_per_pairing")?,
            exploit_percent: self.parse_as("train.exploit_percent", "a percentage")?,
            bounds,
            mode,
            initial_hp: self.hyperparams()?,
            seed: self.parse_as("train.seed", "an unsigned 64-bit integer")?,
        };
        train.validate()?;
        Ok(RunConfig {
            train,
            sgf: self.parse_as("run.sgf", "true or false")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sgf: bool,
}

/// The key table shown by `--help`.
pub fn key_table() -> String {
    let width = KEYS.iter().map(|d| d.key.len() + 3 + d.default.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (key = default, source, meaning):\n");
    for d in KEYS {
        let source = match d.source {
            Source::Paper => "paper",
            Source::Invented => "invented",
        };
        let assignment = format!("{} = {}", d.key, d.default);
        let tag = format!("[{source}]");
        writeln!(out, "  {assignment:width$}  {tag:10}  {}", d.help).unwrap();
    }
    out
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        Settings::default().resolve().expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use azpbt_core::nnet::DEFAULT_L2;

    #[test]
    fn defaults_are_the_9x9_protocol() {
        let c = RunConfig::default().train;
        assert_eq!((c.board.board_size, c.board.komi), (9, Komi::from_int(7)));
        assert_eq!((c.network.residual_blocks, c.network.filters), (3, 64));
        assert_eq!((c.population_size, c.games_per_iteration, c.iterations), (16, 5000, 200));
        assert_eq!(c.initial_hp, vec![Hyperparams::new(0.02, 1.0)]);
        assert_eq!(c.initial_hp[0].l2_coefficient, DEFAULT_L2);
    }

    #[test]
    fn aliases_and_unknown_keys() {
        let mut s = Settings::default();
        s.apply_override("population=8").unwrap();
        assert_eq!(s.get("train.population"), "8");
        assert!(matches!(s.set("populace", "3"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(s.apply_override("seed"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn odd_population_is_rejected() {
        let mut s = Settings::default();
        s.set("population", "15").unwrap();
        assert!(matches!(s.resolve(), Err(ConfigError::Invalid(TrainError::PopulationSize(15)))));
    }

    #[test]
    fn grid_rows_and_decay() {
        let s = Settings::parse("grid = 0.02,1,101,0.002; 0.02,0.5  # two rows\nl2 = 0.001").unwrap();
        let hp = s.resolve().unwrap().train.initial_hp;
        assert_eq!(hp[0].learning_rate_at(100), 0.02);
        assert_eq!(hp[0].learning_rate_at(101), 0.002);
        assert_eq!(hp[1], Hyperparams { l2_coefficient: 0.001, ..Hyperparams::new(0.02, 0.5) });
        assert!(Settings::parse("grid = 0.02").unwrap().resolve().is_err());
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = Settings::parse("simulations = many").unwrap().resolve().unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { key: "search.simulations", .. }));
    }

    #[test]
    fn mode_conflicts() {
        let mut s = Settings::parse("mode = baseline").unwrap();
        assert!(s.require_mode(Mode::Pbt).is_err());
        assert!(s.require_mode(Mode::Baseline).is_ok());
    }

    #[test]
    fn every_key_is_reachable_by_its_last_segment() {
        for d in KEYS {
            assert_eq!(resolve_key(d.key.rsplit('.').next().unwrap()).unwrap(), d.key);
        }
    }
}
