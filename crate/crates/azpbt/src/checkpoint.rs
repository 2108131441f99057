//! Versioned binary containers for networks, population metadata and
//! per-iteration training examples.
//!
//! Every file is `magic (8) | version u32 | payload length u64 | payload |
//! crc32 u32`, all little-endian, with the checksum covering everything
//! before it. Serialization is canonical, so equal values give equal bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use azpbt_core::game::FeatureTensor;
use azpbt_core::nnet::LrDecay;
use azpbt_core::pbt::{LineageEvent, PerturbFactor, RngState};
use azpbt_core::{AgentSlot, Hyperparams, Komi, NetworkConfig, NetworkWeights, PopulationState, TrainingExample, ValueHead};

pub const FORMAT_VERSION: u32 = 1;

pub const NETWORK_MAGIC: &[u8; 8] = b"AZPBTNET";
pub const POPULATION_MAGIC: &[u8; 8] = b"AZPBTPOP";
pub const EXAMPLES_MAGIC: &[u8; 8] = b"AZPBTEXS";

pub const META_FILE: &str = "population.meta";
pub const EXAMPLES_FILE: &str = "examples.bin";

const HEADER: usize = 8 + 4 + 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FormatError {
    #[error("file is truncated")]
    Truncated,
    #[error("not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("format version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch")]
    Checksum,
    #[error("malformed payload: {0}")]
    Malformed(String),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("{}: {reason}", path.display())]
    Incompatible { path: PathBuf, reason: String },
}

fn kind(magic: &[u8; 8]) -> &'static str {
    match magic {
        NETWORK_MAGIC => "network checkpoint",
        POPULATION_MAGIC => "population metadata",
        _ => "training examples",
    }
}

fn seal(magic: &[u8; 8], payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + payload.len() + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks framing and returns the payload.
fn open<'a>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<&'a [u8], FormatError> {
    if bytes.len() < 8 {
        return Err(FormatError::Truncated);
    }
    if &bytes[..8] != magic {
        return Err(FormatError::BadMagic { expected: kind(magic) });
    }
    if bytes.len() < HEADER {
        return Err(FormatError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let end = usize::try_from(len).ok().and_then(|l| l.checked_add(HEADER)).ok_or(FormatError::Truncated)?;
    if bytes.len() < end + 4 {
        return Err(FormatError::Truncated);
    }
    if bytes.len() > end + 4 {
        return Err(FormatError::Malformed("trailing bytes".into()));
    }
    let stored = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
    if crc32fast::hash(&bytes[..end]) != stored {
        return Err(FormatError::Checksum);
    }
    Ok(&bytes[HEADER..end])
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("collection too large for the format"));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() < n {
            return Err(FormatError::Malformed("payload ends early".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.array::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128, FormatError> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    /// A length prefix, sanity-checked against the bytes left so corrupt
    /// input cannot trigger a huge allocation.
    fn len(&mut self, min_item: usize) -> Result<usize, FormatError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.bytes.len() {
            return Err(FormatError::Malformed("length prefix exceeds payload".into()));
        }
        Ok(n)
    }
    fn finish(self) -> Result<(), FormatError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(FormatError::Malformed("unread bytes at end of payload".into()))
        }
    }
}

fn malformed(e: impl std::fmt::Display) -> FormatError {
    FormatError::Malformed(e.to_string())
}

fn write_network_config(w: &mut Writer, config: &NetworkConfig) {
    w.len(config.board_size);
    w.len(config.residual_blocks);
    w.len(config.filters);
    match &config.value_head {
        ValueHead::Single => w.u8(0),
        ValueHead::MultiKomi { komi_values } => {
            w.u8(1);
            w.len(komi_values.len());
            for k in komi_values {
                w.i32(k.half_points());
            }
        }
    }
}

fn read_network_config(r: &mut Reader) -> Result<NetworkConfig, FormatError> {
    let board_size = r.u32()? as usize;
    let blocks = r.u32()? as usize;
    let filters = r.u32()? as usize;
    let value_head = match r.u8()? {
        0 => ValueHead::Single,
        1 => {
            let n = r.len(4)?;
            let komi_values = (0..n).map(|_| r.i32().map(Komi::from_half_points)).collect::<Result<_, _>>()?;
            ValueHead::MultiKomi { komi_values }
        }
        t => return Err(malformed(format!("unknown value head tag {t}"))),
    };
    let config = NetworkConfig::new(board_size, blocks, filters).with_value_head(value_head);
    config.validate().map_err(malformed)?;
    Ok(config)
}

pub fn encode_network(net: &NetworkWeights<f32>) -> Vec<u8> {
    let mut w = Writer::default();
    write_network_config(&mut w, net.config());
    w.u64(net.params().len() as u64);
    for &p in net.params() {
        w.f32(p);
    }
    seal(NETWORK_MAGIC, w.0)
}

pub fn decode_network(bytes: &[u8]) -> Result<NetworkWeights<f32>, FormatError> {
    let mut r = Reader {
        bytes: open(NETWORK_MAGIC, bytes)?,
    };
    let config = read_network_config(&mut r)?;
    let n = r.u64()? as usize;
    if n != config.parameter_count() {
        return Err(malformed(format!("{n} parameters stored, config needs {}", config.parameter_count())));
    }
    if n.saturating_mul(4) > r.bytes.len() {
        return Err(malformed("parameter vector ends early"));
    }
    let params = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    NetworkWeights::from_params(config, params).map_err(malformed)
}

fn write_hp(w: &mut Writer, hp: &Hyperparams) {
    w.f64(hp.learning_rate);
    w.f64(hp.value_loss_ratio);
    w.f64(hp.l2_coefficient);
    match hp.lr_decay {
        None => w.u8(0),
        Some(d) => {
            w.u8(1);
            w.u32(d.from_iteration);
            w.f64(d.learning_rate);
        }
    }
}

fn read_hp(r: &mut Reader) -> Result<Hyperparams, FormatError> {
    let learning_rate = r.f64()?;
    let value_loss_ratio = r.f64()?;
    let l2_coefficient = r.f64()?;
    let lr_decay = match r.u8()? {
        0 => None,
        1 => Some(LrDecay {
            from_iteration: r.u32()?,
            learning_rate: r.f64()?,
        }),
        t => return Err(malformed(format!("unknown decay tag {t}"))),
    };
    let hp = Hyperparams {
        learning_rate,
        value_loss_ratio,
        l2_coefficient,
        lr_decay,
    };
    hp.validate().map_err(malformed)?;
    Ok(hp)
}

fn factor_byte(f: PerturbFactor) -> u8 {
    match f {
        PerturbFactor::Down => 0,
        PerturbFactor::Up => 1,
    }
}

fn read_factor(r: &mut Reader) -> Result<PerturbFactor, FormatError> {
    match r.u8()? {
        0 => Ok(PerturbFactor::Down),
        1 => Ok(PerturbFactor::Up),
        t => Err(malformed(format!("unknown perturbation factor tag {t}"))),
    }
}

fn write_event(w: &mut Writer, event: &LineageEvent) {
    match event {
        LineageEvent::ReplacedBy {
            iteration,
            source,
            before,
            after,
        } => {
            w.u8(0);
            w.u32(*iteration);
            w.len(*source);
            write_hp(w, before);
            write_hp(w, after);
        }
        LineageEvent::Perturbed {
            iteration,
            lr_factor,
            ratio_factor,
            before,
            after,
        } => {
            w.u8(1);
            w.u32(*iteration);
            w.u8(factor_byte(*lr_factor));
            w.u8(factor_byte(*ratio_factor));
            write_hp(w, before);
            write_hp(w, after);
        }
    }
}

fn read_event(r: &mut Reader) -> Result<LineageEvent, FormatError> {
    Ok(match r.u8()? {
        0 => LineageEvent::ReplacedBy {
            iteration: r.u32()?,
            source: r.u32()? as usize,
            before: read_hp(r)?,
            after: read_hp(r)?,
        },
        1 => LineageEvent::Perturbed {
            iteration: r.u32()?,
            lr_factor: read_factor(r)?,
            ratio_factor: read_factor(r)?,
            before: read_hp(r)?,
            after: read_hp(r)?,
        },
        t => return Err(malformed(format!("unknown lineage tag {t}"))),
    })
}

/// Everything in a population except the network weights.
pub fn encode_meta(state: &PopulationState) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(state.iteration);
    let rng = state.rng_state();
    w.0.extend_from_slice(&rng.seed);
    w.u64(rng.stream);
    w.u128(rng.word_pos);
    w.len(state.size());
    w.len(state.ranking.len());
    for &id in &state.ranking {
        w.len(id);
    }
    for slot in &state.slots {
        write_hp(&mut w, &slot.hp);
        w.len(slot.lineage.len());
        for event in &slot.lineage {
            write_event(&mut w, event);
        }
    }
    seal(POPULATION_MAGIC, w.0)
}

/// Population metadata: iteration, master rng, ranking, and per-agent
/// hyperparameters with lineage.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationMeta {
    pub iteration: u32,
    pub rng: RngState,
    pub ranking: Vec<usize>,
    pub agents: Vec<(Hyperparams, Vec<LineageEvent>)>,
}

pub fn decode_meta(bytes: &[u8]) -> Result<PopulationMeta, FormatError> {
    let mut r = Reader {
        bytes: open(POPULATION_MAGIC, bytes)?,
    };
    let iteration = r.u32()?;
    let rng = RngState {
        seed: r.array()?,
        stream: r.u64()?,
        word_pos: r.u128()?,
    };
    let p = r.len(1)?;
    let ranked = r.len(4)?;
    let ranking = (0..ranked).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
    let mut agents = Vec::with_capacity(p);
    for _ in 0..p {
        let hp = read_hp(&mut r)?;
        let n = r.len(1)?;
        let lineage = (0..n).map(|_| read_event(&mut r)).collect::<Result<_, _>>()?;
        agents.push((hp, lineage));
    }
    r.finish()?;
    Ok(PopulationMeta {
        iteration,
        rng,
        ranking,
        agents,
    })
}

pub fn encode_examples(examples: &[TrainingExample]) -> Vec<u8> {
    let mut w = Writer::default();
    w.u64(examples.len() as u64);
    for e in examples {
        w.len(e.features.board_size);
        w.len(e.features.data.len());
        w.0.extend_from_slice(&e.features.data);
        w.len(e.pi.len());
        e.pi.iter().for_each(|&v| w.f32(v));
        w.len(e.z.len());
        e.z.iter().for_each(|&v| w.f32(v));
        w.len(e.source_agent);
        w.u32(e.iteration);
    }
    seal(EXAMPLES_MAGIC, w.0)
}

pub fn decode_examples(bytes: &[u8]) -> Result<Vec<TrainingExample>, FormatError> {
    let mut r = Reader {
        bytes: open(EXAMPLES_MAGIC, bytes)?,
    };
    let n = r.u64()? as usize;
    if n > r.bytes.len() {
        return Err(malformed("example count exceeds payload"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let board_size = r.u32()? as usize;
        let len = r.len(1)?;
        let data = r.take(len)?.to_vec();
        let pi_len = r.len(4)?;
        let pi = (0..pi_len).map(|_| r.f32()).collect::<Result<_, _>>()?;
        let z_len = r.len(4)?;
        let z = (0..z_len).map(|_| r.f32()).collect::<Result<_, _>>()?;
        out.push(TrainingExample {
            features: FeatureTensor { board_size, data },
            pi,
            z,
            source_agent: r.u32()? as usize,
            iteration: r.u32()?,
        });
    }
    r.finish()?;
    Ok(out)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(bytes).map_err(io)?;
    file.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_at(path: &Path) -> impl FnOnce(FormatError) -> CheckpointError + '_ {
    move |source| CheckpointError::Format {
        path: path.to_path_buf(),
        source,
    }
}

pub fn agent_file(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("agent_{id}.ckpt"))
}

pub fn save_network(net: &NetworkWeights<f32>, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &encode_network(net))
}

pub fn load_network(path: &Path) -> Result<NetworkWeights<f32>, CheckpointError> {
    decode_network(&read_file(path)?).map_err(format_at(path))
}

/// Writes `agent_<id>.ckpt` for every agent plus `population.meta` into `dir`.
pub fn save_checkpoint(state: &PopulationState, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for slot in &state.slots {
        save_network(&slot.weights, &agent_file(dir, slot.id))?;
    }
    write_atomic(&dir.join(META_FILE), &encode_meta(state))
}

pub fn load_meta(dir: &Path) -> Result<PopulationMeta, CheckpointError> {
    let path = dir.join(META_FILE);
    decode_meta(&read_file(&path)?).map_err(format_at(&path))
}

pub fn load_checkpoint(dir: &Path) -> Result<PopulationState, CheckpointError> {
    let meta = load_meta(dir)?;
    let mut slots = Vec::with_capacity(meta.agents.len());
    for (id, (hp, lineage)) in meta.agents.into_iter().enumerate() {
        let path = agent_file(dir, id);
        let weights = load_network(&path)?;
        if let Some(first) = slots.first().map(|s: &AgentSlot| s.weights.config()) {
            if first != weights.config() {
                return Err(CheckpointError::Incompatible {
                    path,
                    reason: "network config differs from agent 0".into(),
                });
            }
        }
        slots.push(AgentSlot { id, weights, hp, lineage });
    }
    let meta_path = dir.join(META_FILE);
    PopulationState::from_parts(meta.iteration, slots, meta.rng, meta.ranking).map_err(|e| CheckpointError::Format {
        path: meta_path,
        source: malformed(e),
    })
}

pub fn save_examples(examples: &[TrainingExample], path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &encode_examples(examples))
}

pub fn load_examples(path: &Path) -> Result<Vec<TrainingExample>, CheckpointError> {
    decode_examples(&read_file(path)?).map_err(format_at(path))
}
