//! Exploit (truncation selection) and explore (multiplicative perturbation).

use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nnet::{Hyperparams, NetworkWeights};
use crate::AgentId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PbtError {
    #[error("population size {0} must be even and positive")]
    InvalidPopulation(usize),
    #[error("agent ids must be 0..P in slot order")]
    BadIds,
    #[error("ranking is not a permutation of the population")]
    BadRanking,
    #[error("agent {0} is not in the population")]
    UnknownAgent(AgentId),
    #[error("invalid bounds: {0}")]
    InvalidBounds(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PerturbFactor {
    Down,
    Up,
}

impl PerturbFactor {
    pub fn value(self) -> f64 {
        match self {
            PerturbFactor::Down => 0.8,
            PerturbFactor::Up => 1.2,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> PerturbFactor {
        if rng.random_bool(0.5) {
            PerturbFactor::Up
        } else {
            PerturbFactor::Down
        }
    }
}

/// Clamps applied after every perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HpBounds {
    pub lr_min: f64,
    pub lr_max: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl Default for HpBounds {
    fn default() -> HpBounds {
        HpBounds {
            lr_min: 1e-6,
            lr_max: 1.0,
            ratio_min: 0.01,
            ratio_max: 100.0,
        }
    }
}

impl HpBounds {
    pub fn validate(&self) -> Result<(), PbtError> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !ok(self.lr_min, self.lr_max) {
            return Err(PbtError::InvalidBounds("learning rate bounds"));
        }
        if !ok(self.ratio_min, self.ratio_max) {
            return Err(PbtError::InvalidBounds("value loss ratio bounds"));
        }
        Ok(())
    }

    pub fn contains(&self, hp: &Hyperparams) -> bool {
        let lr_ok = |lr: f64| lr >= self.lr_min && lr <= self.lr_max;
        lr_ok(hp.learning_rate)
            && hp.lr_decay.is_none_or(|d| lr_ok(d.learning_rate))
            && hp.value_loss_ratio >= self.ratio_min
            && hp.value_loss_ratio <= self.ratio_max
    }
}

/// Multiplies the learning rate (both phases of a schedule) and the value
/// loss ratio by their factors, then clamps.
pub fn perturb(hp: &Hyperparams, lr: PerturbFactor, ratio: PerturbFactor, bounds: &HpBounds) -> Hyperparams {
    let scale_lr = |v: f64| (v * lr.value()).clamp(bounds.lr_min, bounds.lr_max);
    let mut out = *hp;
    out.learning_rate = scale_lr(hp.learning_rate);
    if let Some(decay) = out.lr_decay.as_mut() {
        decay.learning_rate = scale_lr(decay.learning_rate);
    }
    out.value_loss_ratio = (hp.value_loss_ratio * ratio.value()).clamp(bounds.ratio_min, bounds.ratio_max);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum LineageEvent {
    /// Weights and hyperparameters overwritten by those of `source`.
    ReplacedBy {
        iteration: u32,
        source: AgentId,
        before: Hyperparams,
        after: Hyperparams,
    },
    Perturbed {
        iteration: u32,
        lr_factor: PerturbFactor,
        ratio_factor: PerturbFactor,
        before: Hyperparams,
        after: Hyperparams,
    },
}

impl LineageEvent {
    pub fn iteration(&self) -> u32 {
        match self {
            LineageEvent::ReplacedBy { iteration, .. } | LineageEvent::Perturbed { iteration, .. } => *iteration,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSlot {
    pub id: AgentId,
    pub weights: NetworkWeights<f32>,
    pub hp: Hyperparams,
    /// Append-only.
    pub lineage: Vec<LineageEvent>,
}

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> RngState {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct PopulationState {
    /// Completed iterations.
    pub iteration: u32,
    /// Slot `i` holds agent `i`.
    pub slots: Vec<AgentSlot>,
    rng: ChaCha8Rng,
    /// Latest evaluation ranking, best first; empty before the first one.
    pub ranking: Vec<AgentId>,
}

impl PartialEq for PopulationState {
    fn eq(&self, other: &PopulationState) -> bool {
        self.iteration == other.iteration
            && self.slots == other.slots
            && self.rng_state() == other.rng_state()
            && self.ranking == other.ranking
    }
}

impl PopulationState {
    pub fn new(slots: Vec<AgentSlot>, rng: RngState) -> Result<PopulationState, PbtError> {
        PopulationState::from_parts(0, slots, rng, Vec::new())
    }

    pub fn from_parts(iteration: u32, slots: Vec<AgentSlot>, rng: RngState, ranking: Vec<AgentId>) -> Result<PopulationState, PbtError> {
        let p = slots.len();
        if p == 0 || (p != 1 && p % 2 != 0) {
            return Err(PbtError::InvalidPopulation(p));
        }
        if slots.iter().enumerate().any(|(i, s)| s.id != i) {
            return Err(PbtError::BadIds);
        }
        if !ranking.is_empty() && !is_permutation(&ranking, p) {
            return Err(PbtError::BadRanking);
        }
        Ok(PopulationState {
            iteration,
            slots,
            rng: rng.restore(),
            ranking,
        })
    }

    pub fn size(&self) -> usize {
        self.slots.len()
    }

    pub fn rng_state(&self) -> RngState {
        RngState::of(&self.rng)
    }

    /// Base seed for the next iteration; advances the master stream.
    pub fn next_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn top_agent(&self) -> AgentId {
        self.ranking.first().copied().unwrap_or(0)
    }

    pub fn distinct_hyperparams(&self) -> usize {
        let mut seen: Vec<Hyperparams> = Vec::new();
        for s in &self.slots {
            if !seen.contains(&s.hp) {
                seen.push(s.hp);
            }
        }
        seen.len()
    }
}

fn is_permutation(ranking: &[AgentId], p: usize) -> bool {
    let mut seen = alloc::vec![false; p];
    ranking.len() == p && ranking.iter().all(|&id| id < p && !core::mem::replace(&mut seen[id], true))
}

/// `floor(P * percent / 100)`.
pub fn truncation_size(population: usize, percent: u32) -> usize {
    population * percent as usize / 100
}

/// Overwrites the bottom k agents with the top k (worst from best, second
/// worst from second best, ...). Returns `(replaced, source)` pairs.
pub fn exploit(
    slots: &mut [AgentSlot],
    ranking: &[AgentId],
    percent: u32,
    iteration: u32,
) -> Result<Vec<(AgentId, AgentId)>, PbtError> {
    let p = slots.len();
    if slots.iter().enumerate().any(|(i, s)| s.id != i) {
        return Err(PbtError::BadIds);
    }
    if !is_permutation(ranking, p) {
        return Err(PbtError::BadRanking);
    }
    let k = truncation_size(p, percent).min(p / 2);
    let mut pairs = Vec::with_capacity(k);
    for i in 0..k {
        let source = ranking[i];
        let target = ranking[p - 1 - i];
        let (weights, hp) = (slots[source].weights.clone(), slots[source].hp);
        let slot = &mut slots[target];
        slot.lineage.push(LineageEvent::ReplacedBy {
            iteration,
            source,
            before: slot.hp,
            after: hp,
        });
        slot.weights = weights;
        slot.hp = hp;
        pairs.push((target, source));
    }
    Ok(pairs)
}

/// Perturbs only the listed agents. Each hyperparameter draws its own factor.
pub fn explore<R: Rng + ?Sized>(
    slots: &mut [AgentSlot],
    replaced: &[AgentId],
    bounds: &HpBounds,
    iteration: u32,
    rng: &mut R,
) -> Result<Vec<(AgentId, PerturbFactor, PerturbFactor)>, PbtError> {
    let mut events = Vec::with_capacity(replaced.len());
    for &id in replaced {
        let slot = slots.get_mut(id).filter(|s| s.id == id).ok_or(PbtError::UnknownAgent(id))?;
        let lr_factor = PerturbFactor::sample(rng);
        let ratio_factor = PerturbFactor::sample(rng);
        let after = perturb(&slot.hp, lr_factor, ratio_factor, bounds);
        slot.lineage.push(LineageEvent::Perturbed {
            iteration,
            lr_factor,
            ratio_factor,
            before: slot.hp,
            after,
        });
        slot.hp = after;
        events.push((id, lr_factor, ratio_factor));
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::NetworkConfig;
    use alloc::vec;

    fn slots(p: usize) -> Vec<AgentSlot> {
        let config = NetworkConfig::new(2, 1, 1);
        (0..p)
            .map(|id| AgentSlot {
                id,
                weights: NetworkWeights::init(config.clone(), id as u64).unwrap(),
                hp: Hyperparams::new(0.01 * (id + 1) as f64, 1.0),
                lineage: Vec::new(),
            })
            .collect()
    }

    #[test]
    fn sixteen_replaces_three() {
        let mut s = slots(16);
        let original = s.clone();
        let ranking: Vec<AgentId> = (0..16).rev().collect();
        let pairs = exploit(&mut s, &ranking, 20, 1).unwrap();
        assert_eq!(pairs, vec![(0, 15), (1, 14), (2, 13)]);
        for &(target, source) in &pairs {
            assert_eq!(s[target].weights, original[source].weights);
            assert_eq!(s[target].hp, original[source].hp);
        }
        for id in 3..16 {
            assert_eq!(s[id], original[id]);
        }
    }

    #[test]
    fn four_replaces_none() {
        let mut s = slots(4);
        assert!(exploit(&mut s, &[0, 1, 2, 3], 20, 1).unwrap().is_empty());
        assert_eq!(truncation_size(16, 20), 3);
        assert_eq!(truncation_size(8, 20), 1);
    }

    #[test]
    fn exploit_twice_same_content() {
        let mut once = slots(8);
        let ranking = [3, 1, 4, 0, 5, 2, 7, 6];
        exploit(&mut once, &ranking, 20, 1).unwrap();
        let mut twice = once.clone();
        exploit(&mut twice, &ranking, 20, 1).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!((&a.weights, a.hp), (&b.weights, b.hp));
        }
    }

    #[test]
    fn bad_ranking_rejected() {
        let mut s = slots(4);
        assert_eq!(exploit(&mut s, &[0, 1, 1, 3], 20, 1), Err(PbtError::BadRanking));
        assert_eq!(exploit(&mut s, &[0, 1, 2], 20, 1), Err(PbtError::BadRanking));
    }

    #[test]
    fn perturb_arithmetic() {
        let hp = Hyperparams::new(0.02, 1.0);
        let out = perturb(&hp, PerturbFactor::Up, PerturbFactor::Down, &HpBounds::default());
        assert!((out.learning_rate - 0.024).abs() < 1e-15);
        assert!((out.value_loss_ratio - 0.8).abs() < 1e-15);
        let low = Hyperparams::new(1e-6, 100.0);
        let out = perturb(&low, PerturbFactor::Down, PerturbFactor::Up, &HpBounds::default());
        assert_eq!(out.learning_rate, 1e-6);
        assert_eq!(out.value_loss_ratio, 100.0);
    }

    #[test]
    fn perturb_scales_schedule() {
        let hp = Hyperparams::new(0.02, 1.0).with_decay(101, 0.002);
        let out = perturb(&hp, PerturbFactor::Down, PerturbFactor::Down, &HpBounds::default());
        let decay = out.lr_decay.unwrap();
        assert_eq!(decay.from_iteration, 101);
        assert!((decay.learning_rate - 0.0016).abs() < 1e-15);
    }

    #[test]
    fn explore_only_listed() {
        let mut s = slots(6);
        let original = s.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let events = explore(&mut s, &[4], &HpBounds::default(), 2, &mut rng).unwrap();
        assert_eq!(events.len(), 1);
        for id in [0, 1, 2, 3, 5] {
            assert_eq!(s[id], original[id]);
        }
        assert_eq!(s[4].lineage.len(), 1);
        assert!(explore(&mut s, &[9], &HpBounds::default(), 2, &mut rng).is_err());
    }

    #[test]
    fn rng_state_round_trip() {
        let mut state = PopulationState::new(slots(2), RngState::of(&ChaCha8Rng::seed_from_u64(5))).unwrap();
        state.next_seed();
        let copy = PopulationState::from_parts(state.iteration, state.slots.clone(), state.rng_state(), Vec::new()).unwrap();
        let mut a = state.clone();
        let mut b = copy;
        assert_eq!(a.next_seed(), b.next_seed());
        assert_eq!(a, b);
    }

    #[test]
    fn population_shape_checked() {
        let rng = RngState::of(&ChaCha8Rng::seed_from_u64(0));
        assert_eq!(PopulationState::new(slots(3), rng).unwrap_err(), PbtError::InvalidPopulation(3));
        assert!(PopulationState::new(slots(1), rng).is_ok());
        let mut bad = slots(2);
        bad[1].id = 7;
        assert_eq!(PopulationState::new(bad, rng).unwrap_err(), PbtError::BadIds);
    }
}
