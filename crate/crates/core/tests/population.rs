//! Pairing, tournament accounting and the exploit/explore controller.

mod oracles;

use oracles::*;

use std::collections::HashMap;

use azpbt_core::evaluation::{rank_agents, run_round_robin, TournamentResult};
use azpbt_core::mcts::SearchConfig;
use azpbt_core::pbt::{self, HpBounds, LineageEvent, PerturbFactor};
use azpbt_core::selfplay::{make_pairings, play_pair_games};
use azpbt_core::{AgentId, BoardConfig, Hyperparams, Komi, NetworkConfig, NetworkWeights, Sequential, Winner};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Frequencies of the three perfect matchings of {0,1,2,3}, keyed by the
/// partner of agent 0.
fn matching_frequencies(samples: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0usize; 3];
    for _ in 0..samples {
        let plan = make_pairings(&[0, 1, 2, 3], &mut rng).unwrap();
        assert!(plan.is_perfect_matching(&[0, 1, 2, 3]));
        let partner = plan.pairs.iter().find_map(|&(a, b)| match (a, b) {
            (0, x) | (x, 0) => Some(x),
            _ => None,
        });
        counts[partner.unwrap() - 1] += 1;
    }
    counts.map(|c| c as f64 / samples as f64)
}

#[test]
fn matchings_of_four_are_uniform() {
    for freq in matching_frequencies(1000, 1) {
        assert!((freq - 1.0 / 3.0).abs() <= 0.05, "{freq}");
    }
    // sd is 0.0015 at this size.
    for freq in matching_frequencies(100_000, 2) {
        assert!((freq - 1.0 / 3.0).abs() <= 0.006, "{freq}");
    }
}

#[test]
fn sixteen_agents_always_perfectly_matched() {
    let ids: Vec<AgentId> = (0..16).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let plan = make_pairings(&ids, &mut rng).unwrap();
        assert_eq!(plan.pairs.len(), 8);
        assert!(plan.is_perfect_matching(&ids));
    }
}

fn tiny_net(seed: u64) -> NetworkWeights<f32> {
    NetworkWeights::init(NetworkConfig::new(3, 1, 2), seed).unwrap()
}

#[test]
fn identical_agents_are_color_symmetric() {
    let net = tiny_net(1);
    let nets = [&net, &net];
    let board = BoardConfig::new(3, Komi::from_half_points(3)).unwrap();
    let records = play_pair_games(0, 1, &nets, 200, &SearchConfig::self_play(3, 8), board, 9, &Sequential).unwrap();
    let black_wins = |agent| {
        records.iter().filter(|r| r.black_agent == agent && r.result.winner == Winner::Black).count() as f64 / 100.0
    };
    assert_eq!(records.iter().filter(|r| r.black_agent == 0).count(), 100);
    // Two independent binomials with n = 100: sd of the difference <= 0.071.
    assert!((black_wins(0) - black_wins(1)).abs() < 0.25, "{} vs {}", black_wins(0), black_wins(1));
}

#[test]
fn identical_population_scores_one_half_each() {
    let net = tiny_net(2);
    let nets = vec![&net; 6];
    let board = BoardConfig::new(3, Komi::from_half_points(3)).unwrap();
    let (result, records) = run_round_robin(&nets, 6, &SearchConfig::self_play(3, 4), board, 1, &Sequential).unwrap();
    assert_eq!(records.len(), 15 * 6);
    assert!(result.per_agent_win_rate.iter().all(|&r| r == 0.5));
}

#[test]
fn sixteen_agent_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let r = synthetic_tournament(16, 6, &mut rng);
        assert_eq!(r.total_games(), 720);
        assert!((0..16).all(|i| r.games_of(i) == 90));
        let half_points: u32 = (0..16).map(|i| r.half_points_of(i)).sum();
        assert_eq!(half_points, 2 * 720);
        let sum: f64 = r.per_agent_win_rate.iter().sum();
        assert!((sum - 8.0).abs() < 1e-12, "{sum}");
    }
}

#[test]
fn truncation_on_random_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..100 {
        let original = slots(16);
        let mut population = original.clone();
        let mut ranking: Vec<AgentId> = (0..16).collect();
        ranking.shuffle(&mut rng);
        let pairs = pbt::exploit(&mut population, &ranking, 20, trial).unwrap();
        let replaced: Vec<AgentId> = pairs.iter().map(|&(r, _)| r).collect();
        assert_eq!(replaced, vec![ranking[15], ranking[14], ranking[13]]);
        for &(target, source) in &pairs {
            assert_eq!(population[target].weights.params(), original[source].weights.params());
            assert_eq!(population[target].hp, original[source].hp);
        }
        pbt::explore(&mut population, &replaced, &HpBounds::default(), trial, &mut rng).unwrap();
        for (slot, before) in population.iter().zip(&original) {
            let perturbed = slot.lineage.iter().any(|e| matches!(e, LineageEvent::Perturbed { .. }));
            assert_eq!(perturbed, replaced.contains(&slot.id));
            if !replaced.contains(&slot.id) {
                assert_eq!(slot, before);
            }
        }
    }
}

#[test]
fn perturbation_factors_are_fair_coins() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut population = slots(2);
    let mut ups: HashMap<&str, usize> = HashMap::new();
    for i in 0..10_000 {
        population[0].hp = Hyperparams::new(0.01, 1.0);
        let events = pbt::explore(&mut population, &[0], &HpBounds::default(), i, &mut rng).unwrap();
        let (_, lr, ratio) = events[0];
        *ups.entry("lr").or_default() += usize::from(lr == PerturbFactor::Up);
        *ups.entry("ratio").or_default() += usize::from(ratio == PerturbFactor::Up);
    }
    for event in &population[0].lineage {
        let LineageEvent::Perturbed { lr_factor, ratio_factor, before, after, .. } = event else {
            panic!("unexpected event");
        };
        assert!([0.8, 1.2].contains(&lr_factor.value()) && [0.8, 1.2].contains(&ratio_factor.value()));
        assert_eq!(after.learning_rate, before.learning_rate * lr_factor.value());
    }
    for (name, count) in ups {
        let freq = count as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "{name}: {freq}");
    }
}

proptest! {
    #[test]
    fn ranking_is_a_permutation_and_sorted(seed in any::<u64>(), p in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = synthetic_tournament(p, 2, &mut rng);
        let mut sorted = r.ranking.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..p).collect::<Vec<_>>());
        for w in r.ranking.windows(2) {
            prop_assert!(r.win_rate_of(w[0]).unwrap() >= r.win_rate_of(w[1]).unwrap());
        }
        prop_assert_eq!(rank_agents(&r), r.ranking.clone());
    }

    #[test]
    fn ranking_survives_relabelling_order(seed in any::<u64>(), p in 2usize..8) {
        // Listing the agents in a different order leaves the ranking alone.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = synthetic_tournament(p, 2, &mut rng);
        let mut order: Vec<AgentId> = (0..p).collect();
        order.shuffle(&mut rng);
        let mut outcomes = Vec::new();
        for i in 0..p {
            for j in 0..p {
                let wdl = r.win_matrix[i][j];
                for _ in 0..wdl.wins {
                    outcomes.push((i, j, Winner::Black));
                }
                if i < j {
                    for _ in 0..wdl.draws {
                        outcomes.push((i, j, Winner::Draw));
                    }
                }
            }
        }
        let shuffled = TournamentResult::from_outcomes(&order, &outcomes).unwrap();
        prop_assert_eq!(shuffled.ranking, r.ranking);
    }

    #[test]
    fn clamps_hold_under_repeated_perturbation(seed in any::<u64>(), steps in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bounds = HpBounds::default();
        let mut population = slots(2);
        for i in 0..steps {
            pbt::explore(&mut population, &[1], &bounds, i as u32, &mut rng).unwrap();
            prop_assert!(bounds.contains(&population[1].hp));
        }
    }
}
