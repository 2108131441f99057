//! PUCT search on hand-built positions with exact two-ply answers.

mod oracles;

use oracles::*;

use azpbt_core::mcts::{search, SearchConfig, UniformEvaluator};
use azpbt_core::{BoardConfig, GameState, Komi, Move};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn exhaustive_oracle_finds_one_winning_move() {
    let state = capture_to_win();
    assert_eq!(two_ply_wins(&state), vec![Move::at(0, 0, 5)]);
}

#[test]
fn search_prefers_the_capture() {
    let state = capture_to_win();
    let target = Move::at(0, 0, 5);
    let config = SearchConfig {
        temperature_moves: 0,
        ..SearchConfig::self_play(5, 200)
    };
    let mut hits = 0;
    for trial in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let result = search(&state, &mut UniformEvaluator, &config, &mut rng).unwrap();
        assert_eq!(result.visit_counts.iter().sum::<u32>(), 200);
        let best = result.children.iter().find(|c| c.mv == target).unwrap().visits;
        if result.children.iter().all(|c| c.mv == target || c.visits < best) {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn root_visits_equal_budget(seed in any::<u64>(), sims in 1u32..120, n in 2usize..=5, noisy in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = GameState::new(BoardConfig::new(n, Komi::from_half_points(1)).unwrap()).unwrap();
        for _ in 0..rng.random_range(0..n * n) {
            if state.is_terminal() {
                break;
            }
            let moves = state.legal_moves().unwrap();
            state.play_in_place(moves[rng.random_range(0..moves.len())]).unwrap();
        }
        prop_assume!(!state.is_terminal());
        let mut config = SearchConfig::self_play(n, sims);
        if !noisy {
            config = config.evaluation();
        }
        let result = search(&state, &mut UniformEvaluator, &config, &mut rng).unwrap();
        prop_assert_eq!(result.visit_counts.iter().sum::<u32>(), sims);
        let pi_sum: f32 = result.pi.iter().sum();
        prop_assert!((pi_sum - 1.0).abs() < 1e-5);
        prop_assert!(state.is_legal(result.chosen_move));
        prop_assert!(result.children.iter().all(|c| state.is_legal(c.mv)));
    }
}
