//! PUCT Monte-Carlo tree search.
//!
//! The root is expanded before the simulation budget starts, so every
//! simulation visits exactly one root child and the root visit counts always
//! sum to `simulations`. Child statistics are stored from the perspective of
//! the player who made the move into the child; a leaf evaluated at `v` for
//! its side to move contributes `-v` to its own edge, `+v` one level up, and
//! so on. Trees are not reused between moves.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::game::{outcome_value, GameError, GameState, Move};
use crate::nnet::{NetworkWeights, NnetError, Workspace};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub simulations: u32,
    pub c_puct: f64,
    pub dirichlet_alpha: f64,
    /// Weight of root noise; 0 disables noise and consumes no randomness.
    pub dirichlet_epsilon: f64,
    /// Moves (counted from the start of the game) that are sampled from the
    /// visit distribution; later moves take the most visited child.
    pub temperature_moves: usize,
}

impl SearchConfig {
    /// Self-play defaults: alpha `10 / size^2`, epsilon 0.25 and sampling for
    /// the first `size^2 / 4` moves.
    pub fn self_play(board_size: usize, simulations: u32) -> SearchConfig {
        let points = (board_size * board_size) as f64;
        SearchConfig {
            simulations,
            c_puct: 1.5,
            dirichlet_alpha: 10.0 / points,
            dirichlet_epsilon: 0.25,
            temperature_moves: board_size * board_size / 4,
        }
    }

    /// Same budget, no noise, always the most visited move.
    pub fn evaluation(&self) -> SearchConfig {
        SearchConfig {
            dirichlet_epsilon: 0.0,
            temperature_moves: 0,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), MctsError> {
        if self.simulations == 0 {
            return Err(MctsError::InvalidConfig("simulations must be at least 1"));
        }
        if !(self.c_puct.is_finite() && self.c_puct > 0.0) {
            return Err(MctsError::InvalidConfig("c_puct must be positive"));
        }
        if !(self.dirichlet_alpha.is_finite() && self.dirichlet_alpha > 0.0) {
            return Err(MctsError::InvalidConfig("dirichlet_alpha must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dirichlet_epsilon) {
            return Err(MctsError::InvalidConfig("dirichlet_epsilon must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MctsError {
    #[error("cannot search a finished game")]
    Terminal,
    #[error("invalid search config: {0}")]
    InvalidConfig(&'static str),
    #[error("all visit counts are zero")]
    NoVisits,
    #[error("temperature must be finite and non-negative")]
    InvalidTemperature,
    #[error("evaluator returned {0} policy entries")]
    PolicySize(usize),
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Evaluator output for one position.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Prior over every move, pass last; need not be normalized.
    pub policy: Vec<f32>,
    /// Expected outcome for the side to move, in [-1, 1].
    pub value: f32,
}

pub trait Evaluator {
    fn evaluate(&mut self, state: &GameState) -> Result<Evaluation, MctsError>;
}

/// Flat priors and a neutral value.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformEvaluator;

impl Evaluator for UniformEvaluator {
    fn evaluate(&mut self, state: &GameState) -> Result<Evaluation, MctsError> {
        Ok(Evaluation {
            policy: vec![1.0; state.config().policy_size()],
            value: 0.0,
        })
    }
}

/// Network evaluation with the value output matching the game's komi.
pub struct NetworkEvaluator<'a> {
    net: &'a NetworkWeights<f32>,
    workspace: Workspace<f32>,
}

impl<'a> NetworkEvaluator<'a> {
    pub fn new(net: &'a NetworkWeights<f32>) -> NetworkEvaluator<'a> {
        NetworkEvaluator {
            net,
            workspace: Workspace::default(),
        }
    }
}

impl Evaluator for NetworkEvaluator<'_> {
    fn evaluate(&mut self, state: &GameState) -> Result<Evaluation, MctsError> {
        let out = self.net.forward_with(&state.encode_features(), &mut self.workspace)?;
        let value = out.value_for_komi(&self.net.config().value_head, state.config().komi)?;
        Ok(Evaluation {
            policy: out.policy,
            value,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChildStats {
    pub mv: Move,
    pub prior: f32,
    pub visits: u32,
    /// Mean value for the player at the root; 0 when unvisited.
    pub q: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Root visit distribution over every move (pass last).
    pub pi: Vec<f32>,
    pub chosen_move: Move,
    /// Visit-weighted value for the player at the root.
    pub root_value: f32,
    pub visit_counts: Vec<u32>,
    pub children: Vec<ChildStats>,
}

struct Node {
    mv: Move,
    prior: f32,
    visits: u32,
    value_sum: f64,
    first_child: u32,
    child_count: u32,
    expanded: bool,
}

impl Node {
    fn new(mv: Move, prior: f32) -> Node {
        Node {
            mv,
            prior,
            visits: 0,
            value_sum: 0.0,
            first_child: 0,
            child_count: 0,
            expanded: false,
        }
    }

    fn q(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            (self.value_sum / f64::from(self.visits)).clamp(-1.0, 1.0)
        }
    }
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn children(&self, node: usize) -> core::ops::Range<usize> {
        let n = &self.nodes[node];
        n.first_child as usize..(n.first_child + n.child_count) as usize
    }

    /// Adds children for every legal move with priors renormalized over them.
    fn expand(&mut self, node: usize, state: &GameState, eval: &Evaluation) -> Result<(), MctsError> {
        let n = state.board_size();
        if eval.policy.len() != n * n + 1 {
            return Err(MctsError::PolicySize(eval.policy.len()));
        }
        let moves = state.legal_moves()?;
        let raw: Vec<f32> = moves
            .iter()
            .map(|m| {
                let p = eval.policy[m.policy_index(n)];
                if p.is_finite() && p > 0.0 {
                    p
                } else {
                    0.0
                }
            })
            .collect();
        let total: f32 = raw.iter().sum();
        let first = self.nodes.len() as u32;
        for (mv, p) in moves.iter().zip(&raw) {
            let prior = if total > 0.0 { p / total } else { 1.0 / moves.len() as f32 };
            self.nodes.push(Node::new(*mv, prior));
        }
        let parent = &mut self.nodes[node];
        parent.first_child = first;
        parent.child_count = moves.len() as u32;
        parent.expanded = true;
        Ok(())
    }

    fn select(&self, node: usize, c_puct: f64) -> usize {
        let range = self.children(node);
        let parent_visits: u32 = self.nodes[range.clone()].iter().map(|c| c.visits).sum();
        let sqrt_n = libm::sqrt(f64::from(parent_visits.max(1)));
        let mut best = range.start;
        let mut best_score = f64::NEG_INFINITY;
        for i in range {
            let c = &self.nodes[i];
            let score = c.q() + c_puct * f64::from(c.prior) * sqrt_n / (1.0 + f64::from(c.visits));
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        best
    }
}

fn add_root_noise<R: Rng + ?Sized>(tree: &mut Tree, config: &SearchConfig, rng: &mut R) -> Result<(), MctsError> {
    let range = tree.children(0);
    if range.len() < 2 {
        return Ok(());
    }
    let gamma = Gamma::new(config.dirichlet_alpha, 1.0).map_err(|_| MctsError::InvalidConfig("dirichlet_alpha"))?;
    let noise: Vec<f64> = range.clone().map(|_| gamma.sample(rng)).collect();
    let total: f64 = noise.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Ok(());
    }
    let eps = config.dirichlet_epsilon;
    for (i, eta) in range.zip(noise) {
        let node = &mut tree.nodes[i];
        node.prior = ((1.0 - eps) * f64::from(node.prior) + eps * eta / total) as f32;
    }
    Ok(())
}

pub fn search<E, R>(state: &GameState, evaluator: &mut E, config: &SearchConfig, rng: &mut R) -> Result<SearchResult, MctsError>
where
    E: Evaluator + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    if state.is_terminal() {
        return Err(MctsError::Terminal);
    }
    let mut tree = Tree {
        nodes: vec![Node::new(Move::Pass, 1.0)],
    };
    let root_eval = evaluator.evaluate(state)?;
    tree.expand(0, state, &root_eval)?;
    if config.dirichlet_epsilon > 0.0 {
        add_root_noise(&mut tree, config, rng)?;
    }

    let mut path = Vec::new();
    for _ in 0..config.simulations {
        let mut sim = state.clone();
        path.clear();
        path.push(0usize);
        let mut node = 0;
        while tree.nodes[node].expanded {
            node = tree.select(node, config.c_puct);
            sim.play_in_place(tree.nodes[node].mv)?;
            path.push(node);
            if sim.is_terminal() {
                break;
            }
        }
        // Value for the player to move at the leaf.
        let value = if sim.is_terminal() {
            f64::from(outcome_value(sim.score_now().winner, sim.to_move()))
        } else {
            let eval = evaluator.evaluate(&sim)?;
            tree.expand(node, &sim, &eval)?;
            f64::from(eval.value.clamp(-1.0, 1.0))
        };
        let mut edge_value = -value;
        for &i in path.iter().rev() {
            let n = &mut tree.nodes[i];
            n.visits += 1;
            n.value_sum += edge_value;
            edge_value = -edge_value;
        }
    }

    let n = state.board_size();
    let mut visit_counts = vec![0u32; n * n + 1];
    let mut children = Vec::with_capacity(tree.children(0).len());
    let mut weighted = 0.0;
    for i in tree.children(0) {
        let c = &tree.nodes[i];
        visit_counts[c.mv.policy_index(n)] = c.visits;
        weighted += c.value_sum;
        children.push(ChildStats {
            mv: c.mv,
            prior: c.prior,
            visits: c.visits,
            q: c.q() as f32,
        });
    }
    let total = f64::from(config.simulations);
    let pi: Vec<f32> = visit_counts.iter().map(|&v| (f64::from(v) / total) as f32).collect();
    let chosen_index = if state.move_count() < config.temperature_moves {
        sample_index(&visit_counts, rng)
    } else {
        argmax_lowest(&visit_counts)
    };
    Ok(SearchResult {
        pi,
        chosen_move: Move::from_policy_index(chosen_index, n),
        root_value: (weighted / total).clamp(-1.0, 1.0) as f32,
        visit_counts,
        children,
    })
}

fn argmax_lowest(visits: &[u32]) -> usize {
    let mut best = 0;
    for (i, &v) in visits.iter().enumerate() {
        if v > visits[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(visits: &[u32], rng: &mut R) -> usize {
    let total: u64 = visits.iter().map(|&v| u64::from(v)).sum();
    let mut pick = rng.random_range(0..total);
    for (i, &v) in visits.iter().enumerate() {
        if pick < u64::from(v) {
            return i;
        }
        pick -= u64::from(v);
    }
    unreachable!("pick is below the total")
}

/// Visit counts raised to `1 / temperature` and normalized. Temperature 0
/// gives a one-hot on the most visited move, lowest index on ties.
pub fn policy_target(visits: &[u32], temperature: f64) -> Result<Vec<f64>, MctsError> {
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(MctsError::InvalidTemperature);
    }
    if visits.iter().all(|&v| v == 0) {
        return Err(MctsError::NoVisits);
    }
    if temperature == 0.0 {
        let best = argmax_lowest(visits);
        return Ok(visits.iter().enumerate().map(|(i, _)| if i == best { 1.0 } else { 0.0 }).collect());
    }
    let max = f64::from(*visits.iter().max().expect("non-empty"));
    let weights: Vec<f64> = visits
        .iter()
        .map(|&v| if v == 0 { 0.0 } else { libm::pow(f64::from(v) / max, 1.0 / temperature) })
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{BoardConfig, Komi};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ConstantEvaluator(f32);

    impl Evaluator for ConstantEvaluator {
        fn evaluate(&mut self, state: &GameState) -> Result<Evaluation, MctsError> {
            let mut policy = vec![1.0; state.config().policy_size()];
            policy[4] = 5.0;
            Ok(Evaluation { policy, value: self.0 })
        }
    }

    fn empty(n: usize) -> GameState {
        GameState::new(BoardConfig::new(n, Komi::from_int(0)).unwrap()).unwrap()
    }

    fn quiet(simulations: u32) -> SearchConfig {
        SearchConfig {
            simulations,
            c_puct: 1.5,
            dirichlet_alpha: 1.0,
            dirichlet_epsilon: 0.0,
            temperature_moves: 0,
        }
    }

    #[test]
    fn policy_target_examples() {
        assert_eq!(policy_target(&[3, 1], 1.0).unwrap(), vec![0.75, 0.25]);
        assert_eq!(policy_target(&[3, 1], 0.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(policy_target(&[4, 4], 0.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(policy_target(&[0, 0], 1.0), Err(MctsError::NoVisits));
        let sharp = policy_target(&[2, 1], 0.5).unwrap();
        assert!((sharp[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn single_simulation_is_one_hot_on_highest_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = search(&empty(3), &mut ConstantEvaluator(0.5), &quiet(1), &mut rng).unwrap();
        assert_eq!(r.visit_counts.iter().sum::<u32>(), 1);
        assert_eq!(r.visit_counts[4], 1);
        assert_eq!(r.pi[4], 1.0);
        assert_eq!(r.chosen_move, Move::Place(4));
        // The child was evaluated at +0.5 for its mover, i.e. -0.5 for the root.
        let child = r.children.iter().find(|c| c.visits == 1).unwrap();
        assert_eq!(child.q, -0.5);
        assert_eq!(r.root_value, -0.5);
    }

    #[test]
    fn visits_sum_to_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut config = SearchConfig::self_play(5, 50);
        config.temperature_moves = 100;
        let r = search(&empty(5), &mut UniformEvaluator, &config, &mut rng).unwrap();
        assert_eq!(r.visit_counts.iter().sum::<u32>(), 50);
        assert!((r.pi.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(r.visit_counts[r.chosen_move.policy_index(5)] > 0);
        assert!(r.children.iter().all(|c| (-1.0..=1.0).contains(&c.q)));
    }

    #[test]
    fn noiseless_search_is_deterministic() {
        let state = empty(4);
        let a = search(&state, &mut UniformEvaluator, &quiet(80), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = search(&state, &mut UniformEvaluator, &quiet(80), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn terminal_state_is_rejected() {
        let done = empty(3).play(Move::Pass).unwrap().play(Move::Pass).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(search(&done, &mut UniformEvaluator, &quiet(4), &mut rng), Err(MctsError::Terminal));
    }

    #[test]
    fn finds_winning_pass() {
        // Black owns the whole board apart from one point; White just passed,
        // so passing ends the game with a Black win.
        let config = BoardConfig::new(3, Komi::from_int(0)).unwrap();
        let board = vec![Some(crate::game::Color::Black); 8].into_iter().chain([None]).collect();
        let state = GameState::from_setup(config, board, crate::game::Color::Black, 8, 1).unwrap();
        let r = search(&state, &mut UniformEvaluator, &quiet(64), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.chosen_move, Move::Pass);
    }
}
