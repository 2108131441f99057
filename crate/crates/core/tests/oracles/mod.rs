//! Independent reference implementations shared by the test targets.
#![allow(dead_code)]

use std::collections::VecDeque;

use azpbt_core::evaluation::TournamentResult;
use azpbt_core::nnet::{Hyperparams, NetworkConfig, NetworkWeights, ValueHead};
use azpbt_core::pbt::AgentSlot;
use azpbt_core::{AgentId, BoardConfig, Color, GameState, Komi, Move, TrainingExample, Winner};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn random_position(rng: &mut ChaCha8Rng, n: usize) -> GameState {
    let mut state = GameState::new(BoardConfig::new(n, Komi::from_int(0)).unwrap()).unwrap();
    let plies = rng.random_range(0..2 * n * n);
    for _ in 0..plies {
        if state.is_terminal() {
            break;
        }
        let moves = state.legal_moves().unwrap();
        let placing: Vec<_> = moves.iter().filter(|m| !m.is_pass()).copied().collect();
        let mv = if placing.is_empty() { moves[0] } else { placing[rng.random_range(0..placing.len())] };
        state.play_in_place(mv).unwrap();
    }
    state
}

pub fn random_example(rng: &mut ChaCha8Rng, config: &NetworkConfig) -> TrainingExample {
    let n = config.board_size;
    let state = random_position(rng, n);
    let mut pi: Vec<f32> = (0..n * n + 1).map(|_| if rng.random_bool(0.6) { rng.random::<f32>() } else { 0.0 }).collect();
    let hot = rng.random_range(0..pi.len());
    pi[hot] += 0.5;
    let sum: f32 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= sum);
    let z = (0..config.value_outputs()).map(|_| [-1.0, 0.0, 1.0][rng.random_range(0..3)]).collect();
    TrainingExample {
        features: state.encode_features(),
        pi,
        z,
        source_agent: 0,
        iteration: 0,
    }
}

pub fn configs() -> Vec<NetworkConfig> {
    vec![
        NetworkConfig::new(2, 1, 2),
        NetworkConfig::new(3, 1, 2),
        NetworkConfig::new(3, 1, 3),
        NetworkConfig::new(2, 2, 2),
        NetworkConfig::new(3, 1, 2).with_value_head(ValueHead::komi_range(-1, 1)),
        NetworkConfig::new(2, 1, 3).with_value_head(ValueHead::komi_range(0, 4)),
    ]
}

pub struct Report {
    pub max_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-6)`, with `n` the central
/// difference at the fixed step. A coordinate whose stencil straddles a ReLU
/// kink is skipped: there the central difference at half the step disagrees
/// with the one at the full step far beyond the smooth O(h^2) drift.
pub fn check(net: &NetworkWeights<f64>, batch: &[&TrainingExample], hp: &Hyperparams) -> Report {
    let (grad, _) = net.gradient(batch, hp).unwrap();
    let mut probe = net.clone();
    let mut central = |i: usize, h: f64| {
        let theta = net.params()[i];
        probe.params_mut()[i] = theta + h;
        let up = probe.batch_loss(batch, hp).unwrap().total;
        probe.params_mut()[i] = theta - h;
        let down = probe.batch_loss(batch, hp).unwrap().total;
        probe.params_mut()[i] = theta;
        (up - down) / (2.0 * h)
    };
    let mut report = Report {
        max_rel: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (i, &analytic) in grad.iter().enumerate() {
        let numeric = central(i, STEP);
        let half = central(i, STEP / 2.0);
        if (numeric - half).abs() > 1e-6 * numeric.abs().max(1.0) {
            report.skipped += 1;
            continue;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        report.max_rel = report.max_rel.max(rel);
        report.checked += 1;
    }
    report
}

pub fn neighbours(p: usize, n: usize) -> Vec<usize> {
    let (r, c) = (p / n, p % n);
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push(p - n);
    }
    if r + 1 < n {
        out.push(p + n);
    }
    if c > 0 {
        out.push(p - 1);
    }
    if c + 1 < n {
        out.push(p + 1);
    }
    out
}

/// Area score by breadth-first search over empty regions.
pub fn oracle_area(board: &[Option<Color>], n: usize) -> (usize, usize) {
    let mut black = board.iter().filter(|s| **s == Some(Color::Black)).count();
    let mut white = board.iter().filter(|s| **s == Some(Color::White)).count();
    let mut seen = vec![false; n * n];
    for start in 0..n * n {
        if board[start].is_some() || seen[start] {
            continue;
        }
        let (mut size, mut touches_black, mut touches_white) = (0, false, false);
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for q in neighbours(p, n) {
                match board[q] {
                    Some(Color::Black) => touches_black = true,
                    Some(Color::White) => touches_white = true,
                    None if !seen[q] => {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                    None => {}
                }
            }
        }
        match (touches_black, touches_white) {
            (true, false) => black += size,
            (false, true) => white += size,
            _ => {}
        }
    }
    (black, white)
}

/// Every stone's group reaches an empty point.
pub fn oracle_all_alive(board: &[Option<Color>], n: usize) -> bool {
    (0..n * n).filter(|&p| board[p].is_some()).all(|p| {
        let color = board[p];
        let mut seen = vec![false; n * n];
        let mut stack = vec![p];
        seen[p] = true;
        while let Some(x) = stack.pop() {
            for q in neighbours(x, n) {
                if board[q].is_none() {
                    return true;
                }
                if board[q] == color && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        false
    })
}

pub fn random_terminal(rng: &mut ChaCha8Rng) -> GameState {
    let n = rng.random_range(3..=7);
    let komi = Komi::from_half_points(rng.random_range(0..=2 * n as i32));
    let mut state = GameState::new(BoardConfig::new(n, komi).unwrap()).unwrap();
    let pass_chance = rng.random_range(0.0..0.15);
    while !state.is_terminal() {
        let moves = state.legal_moves().unwrap();
        let placing: Vec<Move> = moves.iter().copied().filter(|m| !m.is_pass()).collect();
        let mv = if placing.is_empty() || rng.random_bool(pass_chance) {
            Move::Pass
        } else {
            placing[rng.random_range(0..placing.len())]
        };
        state.play_in_place(mv).unwrap();
    }
    state
}

pub fn ko_position(superko: bool) -> GameState {
    // Black to capture at (1,2); White could then recapture at (1,1).
    let config = BoardConfig::new(4, Komi::from_int(0)).unwrap().with_superko(superko);
    GameState::from_diagram(
        config,
        ". X O .
         X O . O
         . X O .
         . . . .",
        Color::Black,
    )
    .unwrap()
}

/// Black to move. The white corner group has one liberty at (0,0); taking it
/// wins, anything else loses at komi 13.5. The cap ends the game after two
/// more moves, so the answer is exact at depth two.
pub fn capture_to_win() -> GameState {
    let config = BoardConfig::new(5, Komi::from_half_points(27)).unwrap().with_max_moves(2);
    GameState::from_diagram(
        config,
        ". O O X .
         O O O X .
         X X X X .
         . . . X .
         . . . X .",
        Color::Black,
    )
    .unwrap()
}

/// Moves after which Black wins against every reply.
pub fn two_ply_wins(state: &GameState) -> Vec<Move> {
    state
        .legal_moves()
        .unwrap()
        .into_iter()
        .filter(|&mv| {
            let after = state.play(mv).unwrap();
            after.legal_moves().unwrap().into_iter().all(|reply| {
                let end = after.play(reply).unwrap();
                assert!(end.is_terminal());
                end.score().unwrap().winner == Winner::Black
            })
        })
        .collect()
}

pub fn synthetic_tournament(p: usize, games: u32, rng: &mut ChaCha8Rng) -> TournamentResult {
    let agents: Vec<AgentId> = (0..p).collect();
    let mut outcomes = Vec::new();
    for a in 0..p {
        for b in a + 1..p {
            for g in 0..games {
                let (black, white) = if g % 2 == 0 { (a, b) } else { (b, a) };
                let winner = [Winner::Black, Winner::White, Winner::Draw][rng.random_range(0..3)];
                outcomes.push((black, white, winner));
            }
        }
    }
    TournamentResult::from_outcomes(&agents, &outcomes).unwrap()
}

pub fn slots(p: usize) -> Vec<AgentSlot> {
    (0..p)
        .map(|id| AgentSlot {
            id,
            weights: NetworkWeights::init(NetworkConfig::new(2, 1, 1), id as u64).unwrap(),
            hp: Hyperparams::new(0.001 * (id + 1) as f64, 0.5 + 0.1 * id as f64),
            lineage: Vec::new(),
        })
        .collect()
}

