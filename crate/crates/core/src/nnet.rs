//! Residual policy/value network with a hand-written backward pass.
//!
//! Architecture (all convolutions "same" padded, activations stored
//! position-major with channels innermost):
//!
//! * stem: 3x3 conv, `FEATURE_PLANES -> F`, bias, ReLU
//! * `B` residual blocks: 3x3 conv `F -> F`, ReLU, 3x3 conv `F -> F`, skip add, ReLU
//! * policy head: 1x1 conv `F -> 2`, ReLU, linear `2n^2 -> n^2 + 1`, softmax
//! * value head: 1x1 conv `F -> 1`, ReLU, linear `n^2 -> K`, tanh
//!
//! `K` is 1 for a single value head and the number of komi values for a
//! multi-komi head. With `C = FEATURE_PLANES = 3` the parameter count is
//!
//! ```text
//! (9CF + F) + B(2(9F^2 + F)) + (2F + 2) + (2n^2 + 1)(n^2 + 1) + (F + 1) + (n^2 + 1)K
//! ```
//!
//! Weight layouts: 3x3 kernels are `[tap][in][out]`, 1x1 kernels `[in][out]`
//! and linear layers `[in][out]`, so the innermost loops run over outputs.
//!
//! Training minimises `x (z - v)^2 - pi^T log p + c ||theta||^2` with plain
//! SGD, where `x` is the value loss ratio and `c` the L2 coefficient. With a
//! multi-komi head the value term is the mean over komi outputs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{AddAssign, MulAssign, SubAssign};
use core::ops::Range;

use num_traits::Float;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::game::{FeatureTensor, Komi, FEATURE_PLANES};
use crate::replay::TrainingExample;

pub const POLICY_CHANNELS: usize = 2;
pub const VALUE_CHANNELS: usize = 1;
pub const DEFAULT_L2: f64 = 1e-4;

/// Floating point type the network can be evaluated and trained in.
/// Self-play uses `f32`; gradient checks use `f64`.
pub trait Scalar: Float + Default + AddAssign + SubAssign + MulAssign + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> f32 {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> f64 {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(&'static str),
    #[error("input has {actual} values, network expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("parameter vector has {actual} entries, config needs {expected}")]
    ParameterCount { expected: usize, actual: usize },
    #[error("policy target sums to {0}, expected 1")]
    UnnormalizedPolicy(f64),
    #[error("value target has {actual} entries, head has {expected}")]
    ValueTargetLength { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty training batch")]
    EmptyBatch,
    #[error("komi {0} is not one of the value head's komi values")]
    KomiNotInList(Komi),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ValueHead {
    Single,
    MultiKomi { komi_values: Vec<Komi> },
}

impl ValueHead {
    pub fn outputs(&self) -> usize {
        match self {
            ValueHead::Single => 1,
            ValueHead::MultiKomi { komi_values } => komi_values.len(),
        }
    }

    /// Index of the output that predicts the game at `komi`. A single head
    /// always answers with its only output.
    pub fn index_of(&self, komi: Komi) -> Result<usize, NnetError> {
        match self {
            ValueHead::Single => Ok(0),
            ValueHead::MultiKomi { komi_values } => komi_values
                .iter()
                .position(|&k| k == komi)
                .ok_or(NnetError::KomiNotInList(komi)),
        }
    }

    /// Komi 2, 3, ..., 12.
    pub fn komi_range(low: i32, high: i32) -> ValueHead {
        ValueHead::MultiKomi {
            komi_values: (low..=high).map(Komi::from_int).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    pub board_size: usize,
    pub residual_blocks: usize,
    pub filters: usize,
    pub value_head: ValueHead,
}

impl NetworkConfig {
    pub fn new(board_size: usize, residual_blocks: usize, filters: usize) -> NetworkConfig {
        NetworkConfig {
            board_size,
            residual_blocks,
            filters,
            value_head: ValueHead::Single,
        }
    }

    pub fn with_value_head(mut self, value_head: ValueHead) -> NetworkConfig {
        self.value_head = value_head;
        self
    }

    pub fn validate(&self) -> Result<(), NnetError> {
        if self.board_size < 2 {
            return Err(NnetError::InvalidConfig("board_size must be at least 2"));
        }
        if self.residual_blocks < 1 {
            return Err(NnetError::InvalidConfig("residual_blocks must be at least 1"));
        }
        if self.filters < 1 {
            return Err(NnetError::InvalidConfig("filters must be at least 1"));
        }
        if let ValueHead::MultiKomi { komi_values } = &self.value_head {
            if komi_values.is_empty() {
                return Err(NnetError::InvalidConfig("komi list is empty"));
            }
            if komi_values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(NnetError::InvalidConfig("komi list must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.board_size * self.board_size
    }

    pub fn policy_size(&self) -> usize {
        self.points() + 1
    }

    pub fn input_size(&self) -> usize {
        self.points() * FEATURE_PLANES
    }

    pub fn value_outputs(&self) -> usize {
        self.value_head.outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
}

/// Where each layer lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub stem_w: Range<usize>,
    pub stem_b: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub policy_conv_w: Range<usize>,
    pub policy_conv_b: Range<usize>,
    pub policy_fc_w: Range<usize>,
    pub policy_fc_b: Range<usize>,
    pub value_conv_w: Range<usize>,
    pub value_conv_b: Range<usize>,
    pub value_fc_w: Range<usize>,
    pub value_fc_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(config: &NetworkConfig) -> Layout {
        let f = config.filters;
        let points = config.points();
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let stem_w = take(9 * FEATURE_PLANES * f);
        let stem_b = take(f);
        let blocks = (0..config.residual_blocks)
            .map(|_| BlockLayout {
                conv1_w: take(9 * f * f),
                conv1_b: take(f),
                conv2_w: take(9 * f * f),
                conv2_b: take(f),
            })
            .collect();
        let policy_conv_w = take(f * POLICY_CHANNELS);
        let policy_conv_b = take(POLICY_CHANNELS);
        let policy_fc_w = take(POLICY_CHANNELS * points * config.policy_size());
        let policy_fc_b = take(config.policy_size());
        let value_conv_w = take(f * VALUE_CHANNELS);
        let value_conv_b = take(VALUE_CHANNELS);
        let value_fc_w = take(VALUE_CHANNELS * points * config.value_outputs());
        let value_fc_b = take(config.value_outputs());
        Layout {
            stem_w,
            stem_b,
            blocks,
            policy_conv_w,
            policy_conv_b,
            policy_fc_w,
            policy_fc_b,
            value_conv_w,
            value_conv_b,
            value_fc_w,
            value_fc_b,
            total: at,
        }
    }

    /// Weight ranges with their fan-in, for initialization. Biases excluded.
    fn weight_fans(&self, config: &NetworkConfig) -> Vec<(Range<usize>, usize)> {
        let f = config.filters;
        let mut fans = vec![(self.stem_w.clone(), 9 * FEATURE_PLANES)];
        for block in &self.blocks {
            fans.push((block.conv1_w.clone(), 9 * f));
            fans.push((block.conv2_w.clone(), 9 * f));
        }
        fans.push((self.policy_conv_w.clone(), f));
        fans.push((self.policy_fc_w.clone(), POLICY_CHANNELS * config.points()));
        fans.push((self.value_conv_w.clone(), f));
        fans.push((self.value_fc_w.clone(), VALUE_CHANNELS * config.points()));
        fans
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrDecay {
    /// First iteration (1-based) that uses the decayed rate.
    pub from_iteration: u32,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub value_loss_ratio: f64,
    pub l2_coefficient: f64,
    /// Step schedule used by baselines; PBT agents run without one.
    pub lr_decay: Option<LrDecay>,
}

impl Hyperparams {
    pub fn new(learning_rate: f64, value_loss_ratio: f64) -> Hyperparams {
        Hyperparams {
            learning_rate,
            value_loss_ratio,
            l2_coefficient: DEFAULT_L2,
            lr_decay: None,
        }
    }

    pub fn with_decay(mut self, from_iteration: u32, learning_rate: f64) -> Hyperparams {
        self.lr_decay = Some(LrDecay {
            from_iteration,
            learning_rate,
        });
        self
    }

    pub fn validate(&self) -> Result<(), NnetError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.learning_rate) {
            return Err(NnetError::InvalidHyperparams("learning rate must be finite and non-negative"));
        }
        if !(self.value_loss_ratio.is_finite() && self.value_loss_ratio > 0.0) {
            return Err(NnetError::InvalidHyperparams("value loss ratio must be finite and positive"));
        }
        if !ok(self.l2_coefficient) {
            return Err(NnetError::InvalidHyperparams("L2 coefficient must be finite and non-negative"));
        }
        if let Some(decay) = self.lr_decay {
            if !ok(decay.learning_rate) {
                return Err(NnetError::InvalidHyperparams("decayed learning rate must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: u32) -> f64 {
        match self.lr_decay {
            Some(decay) if iteration >= decay.from_iteration => decay.learning_rate,
            _ => self.learning_rate,
        }
    }
}

/// Per-batch mean loss. The value term is stored unscaled so that
/// `total == value_loss_ratio * value_term + policy_term + reg_term`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub value_term: f64,
    pub value_loss_ratio: f64,
    pub policy_term: f64,
    pub reg_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(value_term: f64, value_loss_ratio: f64, policy_term: f64, reg_term: f64) -> LossBreakdown {
        LossBreakdown {
            value_term,
            value_loss_ratio,
            policy_term,
            reg_term,
            total: value_loss_ratio * value_term + policy_term + reg_term,
        }
    }

    pub fn scaled_value_term(&self) -> f64 {
        self.value_loss_ratio * self.value_term
    }

    /// Arithmetic mean of several breakdowns (zero for an empty slice).
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            value_term: sum(|l| l.value_term),
            value_loss_ratio: sum(|l| l.value_loss_ratio),
            policy_term: sum(|l| l.policy_term),
            reg_term: sum(|l| l.reg_term),
            total: sum(|l| l.total),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput<S> {
    /// Move probabilities, pass last.
    pub policy: Vec<S>,
    /// One value per head output, each in [-1, 1], from the mover's side.
    pub value: Vec<S>,
}

impl<S: Scalar> NetworkOutput<S> {
    pub fn value_for_komi(&self, head: &ValueHead, komi: Komi) -> Result<S, NnetError> {
        Ok(self.value[head.index_of(komi)?])
    }
}

/// Loss of one prediction against its targets. `theta` is the parameter
/// vector the L2 term is computed over.
pub fn loss<S: Scalar>(
    output: &NetworkOutput<S>,
    target_pi: &[S],
    z: &[S],
    hp: &Hyperparams,
    theta: &[S],
) -> Result<LossBreakdown, NnetError> {
    check_targets(output.policy.len(), output.value.len(), target_pi, z)?;
    if output.policy.iter().chain(&output.value).any(|v| !v.is_finite()) {
        return Err(NnetError::NonFinite("network output"));
    }
    let policy_term = -target_pi
        .iter()
        .zip(&output.policy)
        .filter(|(pi, _)| **pi > S::zero())
        .map(|(pi, p)| pi.as_f64() * p.as_f64().ln())
        .sum::<f64>();
    let value_term = squared_error(&output.value, z);
    let reg_term = hp.l2_coefficient * sum_of_squares(theta);
    let breakdown = LossBreakdown::assemble(value_term, hp.value_loss_ratio, policy_term, reg_term);
    if !breakdown.total.is_finite() {
        return Err(NnetError::NonFinite("loss"));
    }
    Ok(breakdown)
}

fn squared_error<S: Scalar>(v: &[S], z: &[S]) -> f64 {
    v.iter()
        .zip(z)
        .map(|(v, z)| {
            let d = z.as_f64() - v.as_f64();
            d * d
        })
        .sum::<f64>()
        / v.len() as f64
}

fn sum_of_squares<S: Scalar>(theta: &[S]) -> f64 {
    theta.iter().map(|t| t.as_f64() * t.as_f64()).sum()
}

fn check_targets<S: Scalar>(policy_len: usize, value_len: usize, pi: &[S], z: &[S]) -> Result<(), NnetError> {
    if pi.len() != policy_len {
        return Err(NnetError::DimensionMismatch {
            expected: policy_len,
            actual: pi.len(),
        });
    }
    if z.len() != value_len {
        return Err(NnetError::ValueTargetLength {
            expected: value_len,
            actual: z.len(),
        });
    }
    if pi.iter().chain(z).any(|v| !v.is_finite()) {
        return Err(NnetError::NonFinite("targets"));
    }
    let sum: f64 = pi.iter().map(|p| p.as_f64()).sum();
    if (sum - 1.0).abs() > 1e-4 || pi.iter().any(|p| *p < S::zero()) {
        return Err(NnetError::UnnormalizedPolicy(sum));
    }
    Ok(())
}

/// Activations of one forward pass, kept for the backward pass. Reusing one
/// across calls avoids reallocating every buffer.
#[derive(Clone, Debug, Default)]
pub struct Workspace<S> {
    input: Vec<S>,
    /// Stem output followed by (inner, output) per block; all post-ReLU.
    trunk: Vec<Vec<S>>,
    policy_hidden: Vec<S>,
    log_policy: Vec<S>,
    value_hidden: Vec<S>,
    value: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights<S> {
    config: NetworkConfig,
    layout: Layout,
    params: Vec<S>,
}

impl<S: Scalar> NetworkWeights<S> {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<NetworkWeights<S>, NnetError> {
        let mut weights = NetworkWeights::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (range, fan_in) in weights.layout.weight_fans(&weights.config) {
            let bound = libm::sqrt(6.0 / fan_in as f64);
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for p in &mut weights.params[range] {
                *p = S::of(dist.sample(&mut rng));
            }
        }
        Ok(weights)
    }

    pub fn zeros(config: NetworkConfig) -> Result<NetworkWeights<S>, NnetError> {
        config.validate()?;
        let layout = config.layout();
        let params = vec![S::zero(); layout.total];
        Ok(NetworkWeights { config, layout, params })
    }

    pub fn from_params(config: NetworkConfig, params: Vec<S>) -> Result<NetworkWeights<S>, NnetError> {
        config.validate()?;
        let layout = config.layout();
        if params.len() != layout.total {
            return Err(NnetError::ParameterCount {
                expected: layout.total,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NnetError::NonFinite("parameters"));
        }
        Ok(NetworkWeights { config, layout, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Direct parameter access for tests and finite-difference checks.
    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn cast<T: Scalar>(&self) -> NetworkWeights<T> {
        NetworkWeights {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| T::of(p.as_f64())).collect(),
        }
    }

    pub fn forward(&self, features: &FeatureTensor) -> Result<NetworkOutput<S>, NnetError> {
        let mut ws = Workspace::default();
        self.forward_with(features, &mut ws)
    }

    pub fn forward_with(&self, features: &FeatureTensor, ws: &mut Workspace<S>) -> Result<NetworkOutput<S>, NnetError> {
        self.load_input(features, ws)?;
        self.run_forward(ws);
        Ok(NetworkOutput {
            policy: ws.log_policy.iter().map(|l| l.exp()).collect(),
            value: ws.value.clone(),
        })
    }

    fn load_input(&self, features: &FeatureTensor, ws: &mut Workspace<S>) -> Result<(), NnetError> {
        let expected = self.config.input_size();
        if features.board_size != self.config.board_size || features.data.len() != expected {
            return Err(NnetError::DimensionMismatch {
                expected,
                actual: features.data.len(),
            });
        }
        ws.input.clear();
        ws.input.extend(features.data.iter().map(|&b| if b == 0 { S::zero() } else { S::of(f64::from(b)) }));
        Ok(())
    }

    fn run_forward(&self, ws: &mut Workspace<S>) {
        let n = self.config.board_size;
        let points = n * n;
        let f = self.config.filters;
        let l = &self.layout;
        let p = &self.params;

        let blocks = self.config.residual_blocks;
        ws.trunk.resize_with(1 + 2 * blocks, Vec::new);
        for buf in ws.trunk.iter_mut() {
            buf.resize(points * f, S::zero());
        }

        conv3x3(n, FEATURE_PLANES, f, &ws.input, &p[l.stem_w.clone()], &p[l.stem_b.clone()], &mut ws.trunk[0]);
        relu(&mut ws.trunk[0]);
        for (b, block) in l.blocks.iter().enumerate() {
            let (done, rest) = ws.trunk.split_at_mut(1 + 2 * b);
            let prev = &done[2 * b];
            let (inner, out) = rest.split_at_mut(1);
            let (inner, out) = (&mut inner[0], &mut out[0]);
            conv3x3(n, f, f, prev, &p[block.conv1_w.clone()], &p[block.conv1_b.clone()], inner);
            relu(inner);
            conv3x3(n, f, f, inner, &p[block.conv2_w.clone()], &p[block.conv2_b.clone()], out);
            for (o, x) in out.iter_mut().zip(prev.iter()) {
                *o += *x;
            }
            relu(out);
        }
        let trunk = ws.trunk.last().expect("trunk has a stem");

        ws.policy_hidden.resize(points * POLICY_CHANNELS, S::zero());
        conv1x1(f, POLICY_CHANNELS, trunk, &p[l.policy_conv_w.clone()], &p[l.policy_conv_b.clone()], &mut ws.policy_hidden);
        relu(&mut ws.policy_hidden);
        ws.log_policy.resize(self.config.policy_size(), S::zero());
        linear(&ws.policy_hidden, &p[l.policy_fc_w.clone()], &p[l.policy_fc_b.clone()], &mut ws.log_policy);
        log_softmax(&mut ws.log_policy);

        ws.value_hidden.resize(points * VALUE_CHANNELS, S::zero());
        conv1x1(f, VALUE_CHANNELS, trunk, &p[l.value_conv_w.clone()], &p[l.value_conv_b.clone()], &mut ws.value_hidden);
        relu(&mut ws.value_hidden);
        ws.value.resize(self.config.value_outputs(), S::zero());
        linear(&ws.value_hidden, &p[l.value_fc_w.clone()], &p[l.value_fc_b.clone()], &mut ws.value);
        for v in ws.value.iter_mut() {
            *v = v.tanh();
        }
    }

    /// Mean loss over a batch evaluated through the inference path
    /// ([`NetworkWeights::forward`] followed by [`loss`]).
    pub fn batch_loss(&self, batch: &[&TrainingExample], hp: &Hyperparams) -> Result<LossBreakdown, NnetError> {
        if batch.is_empty() {
            return Err(NnetError::EmptyBatch);
        }
        let mut value_term = 0.0;
        let mut policy_term = 0.0;
        let no_reg = Hyperparams {
            l2_coefficient: 0.0,
            ..*hp
        };
        for example in batch {
            let out = self.forward(&example.features)?;
            let pi: Vec<S> = example.pi.iter().map(|&x| S::of(f64::from(x))).collect();
            let z: Vec<S> = example.z.iter().map(|&x| S::of(f64::from(x))).collect();
            let l = loss(&out, &pi, &z, &no_reg, &[])?;
            value_term += l.value_term;
            policy_term += l.policy_term;
        }
        let n = batch.len() as f64;
        let reg_term = hp.l2_coefficient * sum_of_squares(&self.params);
        Ok(LossBreakdown::assemble(value_term / n, hp.value_loss_ratio, policy_term / n, reg_term))
    }

    /// Analytic gradient of the mean batch loss, plus the loss itself.
    pub fn gradient(&self, batch: &[&TrainingExample], hp: &Hyperparams) -> Result<(Vec<S>, LossBreakdown), NnetError> {
        if batch.is_empty() {
            return Err(NnetError::EmptyBatch);
        }
        hp.validate()?;
        let mut grad = vec![S::zero(); self.params.len()];
        let mut ws = Workspace::default();
        let mut scratch = BackwardScratch::new(self);
        let ratio = S::of(hp.value_loss_ratio);
        let mut value_term = 0.0;
        let mut policy_term = 0.0;

        for example in batch {
            self.load_input(&example.features, &mut ws)?;
            let pi: Vec<S> = example.pi.iter().map(|&x| S::of(f64::from(x))).collect();
            let z: Vec<S> = example.z.iter().map(|&x| S::of(f64::from(x))).collect();
            check_targets(self.config.policy_size(), self.config.value_outputs(), &pi, &z)?;
            self.run_forward(&mut ws);

            // d/dlogit of -sum(t * log p) is p * sum(t) - t; sum(t) is only
            // approximately 1 for f32 targets.
            let mass = pi.iter().fold(S::zero(), |acc, t| acc + *t);
            let mut d_logits = vec![S::zero(); pi.len()];
            for ((d, lp), t) in d_logits.iter_mut().zip(&ws.log_policy).zip(&pi) {
                if *t > S::zero() {
                    policy_term -= t.as_f64() * lp.as_f64();
                }
                *d = lp.exp() * mass - *t;
            }
            let k = S::of(z.len() as f64);
            let two = S::of(2.0);
            let mut d_value = vec![S::zero(); z.len()];
            for ((d, v), t) in d_value.iter_mut().zip(&ws.value).zip(&z) {
                *d = ratio * two * (*v - *t) / k * (S::one() - *v * *v);
            }
            value_term += squared_error(&ws.value, &z);
            self.backward(&ws, &d_logits, &d_value, &mut scratch, &mut grad);
        }

        let n = batch.len() as f64;
        let inv = S::of(1.0 / n);
        let l2 = S::of(2.0 * hp.l2_coefficient);
        for (g, t) in grad.iter_mut().zip(&self.params) {
            *g = *g * inv + l2 * *t;
        }
        let reg_term = hp.l2_coefficient * sum_of_squares(&self.params);
        let breakdown = LossBreakdown::assemble(value_term / n, hp.value_loss_ratio, policy_term / n, reg_term);
        if !breakdown.total.is_finite() {
            return Err(NnetError::NonFinite("loss"));
        }
        Ok((grad, breakdown))
    }

    /// One SGD step on the mean batch loss at `hp.learning_rate`. Returns the
    /// loss before the update; on error the weights are left untouched.
    pub fn train_step(&mut self, batch: &[&TrainingExample], hp: &Hyperparams) -> Result<LossBreakdown, NnetError> {
        let (grad, breakdown) = self.gradient(batch, hp)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NnetError::NonFinite("gradient"));
        }
        if hp.learning_rate == 0.0 {
            return Ok(breakdown);
        }
        let lr = S::of(hp.learning_rate);
        let updated: Vec<S> = self.params.iter().zip(&grad).map(|(t, g)| *t - lr * *g).collect();
        if updated.iter().any(|t| !t.is_finite()) {
            return Err(NnetError::NonFinite("updated parameters"));
        }
        self.params = updated;
        Ok(breakdown)
    }

    /// Accumulates the gradient of one example into `grad`.
    fn backward(&self, ws: &Workspace<S>, d_logits: &[S], d_value: &[S], s: &mut BackwardScratch<S>, grad: &mut [S]) {
        let n = self.config.board_size;
        let f = self.config.filters;
        let l = &self.layout;
        let p = &self.params;
        let trunk = ws.trunk.last().expect("trunk has a stem");

        // Value head.
        s.d_value_hidden.fill(S::zero());
        {
            let (w_grad, b_grad) = two_ranges(grad, &l.value_fc_w, &l.value_fc_b);
            linear_backward(&ws.value_hidden, &p[l.value_fc_w.clone()], d_value, w_grad, b_grad, &mut s.d_value_hidden);
        }
        relu_mask(&mut s.d_value_hidden, &ws.value_hidden);
        s.d_trunk.fill(S::zero());
        {
            let (w_grad, b_grad) = two_ranges(grad, &l.value_conv_w, &l.value_conv_b);
            conv1x1_backward(f, VALUE_CHANNELS, trunk, &p[l.value_conv_w.clone()], &s.d_value_hidden, w_grad, b_grad, &mut s.d_trunk);
        }

        // Policy head.
        s.d_policy_hidden.fill(S::zero());
        {
            let (w_grad, b_grad) = two_ranges(grad, &l.policy_fc_w, &l.policy_fc_b);
            linear_backward(&ws.policy_hidden, &p[l.policy_fc_w.clone()], d_logits, w_grad, b_grad, &mut s.d_policy_hidden);
        }
        relu_mask(&mut s.d_policy_hidden, &ws.policy_hidden);
        {
            let (w_grad, b_grad) = two_ranges(grad, &l.policy_conv_w, &l.policy_conv_b);
            conv1x1_backward(f, POLICY_CHANNELS, trunk, &p[l.policy_conv_w.clone()], &s.d_policy_hidden, w_grad, b_grad, &mut s.d_trunk);
        }

        // Residual blocks, last to first. `d_trunk` holds the gradient with
        // respect to the current block's output.
        for (b, block) in l.blocks.iter().enumerate().rev() {
            let prev = &ws.trunk[2 * b];
            let inner = &ws.trunk[2 * b + 1];
            let out = &ws.trunk[2 * b + 2];
            relu_mask(&mut s.d_trunk, out);
            s.d_inner.fill(S::zero());
            {
                let (w_grad, b_grad) = two_ranges(grad, &block.conv2_w, &block.conv2_b);
                conv3x3_backward(n, f, f, inner, &s.transposed[2 * b + 1], &s.d_trunk, w_grad, b_grad, Some(&mut s.d_inner));
            }
            relu_mask(&mut s.d_inner, inner);
            // Skip connection passes d_trunk through unchanged.
            {
                let (w_grad, b_grad) = two_ranges(grad, &block.conv1_w, &block.conv1_b);
                conv3x3_backward(n, f, f, prev, &s.transposed[2 * b], &s.d_inner, w_grad, b_grad, Some(&mut s.d_trunk));
            }
        }

        relu_mask(&mut s.d_trunk, &ws.trunk[0]);
        let (w_grad, b_grad) = two_ranges(grad, &l.stem_w, &l.stem_b);
        conv3x3_backward(n, FEATURE_PLANES, f, &ws.input, &[], &s.d_trunk, w_grad, b_grad, None);
    }
}

struct BackwardScratch<S> {
    d_trunk: Vec<S>,
    d_inner: Vec<S>,
    d_policy_hidden: Vec<S>,
    d_value_hidden: Vec<S>,
    /// Block kernels re-laid out as `[tap][out][in]` for input gradients.
    transposed: Vec<Vec<S>>,
}

impl<S: Scalar> BackwardScratch<S> {
    fn new(net: &NetworkWeights<S>) -> BackwardScratch<S> {
        let points = net.config.points();
        let f = net.config.filters;
        let mut transposed = Vec::new();
        for block in &net.layout.blocks {
            transposed.push(transpose_taps(&net.params[block.conv1_w.clone()], f, f));
            transposed.push(transpose_taps(&net.params[block.conv2_w.clone()], f, f));
        }
        BackwardScratch {
            d_trunk: vec![S::zero(); points * f],
            d_inner: vec![S::zero(); points * f],
            d_policy_hidden: vec![S::zero(); points * POLICY_CHANNELS],
            d_value_hidden: vec![S::zero(); points * VALUE_CHANNELS],
            transposed,
        }
    }
}

/// Splits out two disjoint, ordered sub-slices (weights then bias).
fn two_ranges<'a, S>(grad: &'a mut [S], first: &Range<usize>, second: &Range<usize>) -> (&'a mut [S], &'a mut [S]) {
    debug_assert!(first.end <= second.start);
    let (head, tail) = grad.split_at_mut(second.start);
    (&mut head[first.clone()], &mut tail[..second.len()])
}

fn transpose_taps<S: Scalar>(w: &[S], cin: usize, cout: usize) -> Vec<S> {
    let mut t = vec![S::zero(); w.len()];
    for tap in 0..9 {
        for ci in 0..cin {
            for co in 0..cout {
                t[tap * cin * cout + co * cin + ci] = w[tap * cin * cout + ci * cout + co];
            }
        }
    }
    t
}

#[inline]
fn axpy<S: Scalar>(y: &mut [S], a: S, x: &[S]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * *x;
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

fn relu<S: Scalar>(x: &mut [S]) {
    for v in x {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Zeroes gradient entries whose (post-ReLU) activation is not positive.
fn relu_mask<S: Scalar>(grad: &mut [S], activation: &[S]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= S::zero() {
            *g = S::zero();
        }
    }
}

fn log_softmax<S: Scalar>(x: &mut [S]) {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let sum = x.iter().fold(S::zero(), |acc, v| acc + (*v - max).exp());
    let lse = max + sum.ln();
    for v in x {
        *v = *v - lse;
    }
}

/// Taps that stay on the board for output coordinate `i`: (tap offset, input coordinate).
#[inline]
fn taps(i: usize, n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..3).filter_map(move |k| {
        let j = i + k;
        (j >= 1 && j <= n).then(|| (k, j - 1))
    })
}

fn conv3x3<S: Scalar>(n: usize, cin: usize, cout: usize, input: &[S], w: &[S], b: &[S], out: &mut [S]) {
    for o in out.chunks_exact_mut(cout) {
        o.copy_from_slice(b);
    }
    for y in 0..n {
        for x in 0..n {
            let o = &mut out[(y * n + x) * cout..][..cout];
            for (ky, yy) in taps(y, n) {
                for (kx, xx) in taps(x, n) {
                    let src = &input[(yy * n + xx) * cin..][..cin];
                    let wk = &w[(ky * 3 + kx) * cin * cout..][..cin * cout];
                    for (a, row) in src.iter().zip(wk.chunks_exact(cout)) {
                        if *a != S::zero() {
                            axpy(o, *a, row);
                        }
                    }
                }
            }
        }
    }
}

/// `w_t` is the kernel in `[tap][out][in]` order; it may be empty when no
/// input gradient is requested.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<S: Scalar>(
    n: usize,
    cin: usize,
    cout: usize,
    input: &[S],
    w_t: &[S],
    d_out: &[S],
    w_grad: &mut [S],
    b_grad: &mut [S],
    mut d_in: Option<&mut [S]>,
) {
    for g in d_out.chunks_exact(cout) {
        for (b, g) in b_grad.iter_mut().zip(g) {
            *b += *g;
        }
    }
    for y in 0..n {
        for x in 0..n {
            let g = &d_out[(y * n + x) * cout..][..cout];
            if g.iter().all(|v| *v == S::zero()) {
                continue;
            }
            for (ky, yy) in taps(y, n) {
                for (kx, xx) in taps(x, n) {
                    let tap = ky * 3 + kx;
                    let q = yy * n + xx;
                    let src = &input[q * cin..][..cin];
                    let wg = &mut w_grad[tap * cin * cout..][..cin * cout];
                    for (a, row) in src.iter().zip(wg.chunks_exact_mut(cout)) {
                        if *a != S::zero() {
                            axpy(row, *a, g);
                        }
                    }
                    if let Some(d_in) = d_in.as_deref_mut() {
                        let dq = &mut d_in[q * cin..][..cin];
                        let wt = &w_t[tap * cout * cin..][..cout * cin];
                        for (gv, row) in g.iter().zip(wt.chunks_exact(cin)) {
                            if *gv != S::zero() {
                                axpy(dq, *gv, row);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv1x1<S: Scalar>(cin: usize, cout: usize, input: &[S], w: &[S], b: &[S], out: &mut [S]) {
    for (o, src) in out.chunks_exact_mut(cout).zip(input.chunks_exact(cin)) {
        o.copy_from_slice(b);
        for (a, row) in src.iter().zip(w.chunks_exact(cout)) {
            if *a != S::zero() {
                axpy(o, *a, row);
            }
        }
    }
}

/// Accumulates into `d_in` rather than overwriting it.
fn conv1x1_backward<S: Scalar>(
    cin: usize,
    cout: usize,
    input: &[S],
    w: &[S],
    d_out: &[S],
    w_grad: &mut [S],
    b_grad: &mut [S],
    d_in: &mut [S],
) {
    for ((src, g), dq) in input.chunks_exact(cin).zip(d_out.chunks_exact(cout)).zip(d_in.chunks_exact_mut(cin)) {
        for (b, gv) in b_grad.iter_mut().zip(g) {
            *b += *gv;
        }
        for ((a, wg), (wrow, d)) in src.iter().zip(w_grad.chunks_exact_mut(cout)).zip(w.chunks_exact(cout).zip(dq.iter_mut())) {
            if *a != S::zero() {
                axpy(wg, *a, g);
            }
            *d += dot(wrow, g);
        }
    }
}

fn linear<S: Scalar>(input: &[S], w: &[S], b: &[S], out: &mut [S]) {
    let outs = out.len();
    out.copy_from_slice(b);
    for (a, row) in input.iter().zip(w.chunks_exact(outs)) {
        if *a != S::zero() {
            axpy(out, *a, row);
        }
    }
}

fn linear_backward<S: Scalar>(input: &[S], w: &[S], d_out: &[S], w_grad: &mut [S], b_grad: &mut [S], d_in: &mut [S]) {
    let outs = d_out.len();
    for (b, g) in b_grad.iter_mut().zip(d_out) {
        *b += *g;
    }
    for ((a, wg), (wrow, d)) in input.iter().zip(w_grad.chunks_exact_mut(outs)).zip(w.chunks_exact(outs).zip(d_in.iter_mut())) {
        if *a != S::zero() {
            axpy(wg, *a, d_out);
        }
        *d += dot(wrow, d_out);
    }
}
