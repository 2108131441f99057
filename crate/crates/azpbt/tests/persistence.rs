//! Checkpoint containers and metrics files.

mod common;

use std::fs;

use azpbt::checkpoint::{self, CheckpointError, FormatError, FORMAT_VERSION};
use azpbt::metrics::{self, Format, COLUMNS};
use azpbt::run::Run;
use azpbt_core::{NetworkConfig, NetworkWeights, PopulationState, Sequential, ValueHead};
use common::tiny;
use proptest::prelude::*;

fn trained_population() -> (tempfile::TempDir, PopulationState) {
    let dir = tempfile::tempdir().unwrap();
    let state = Run::open(dir.path(), &tiny("")).unwrap().train(&Sequential, |_| {}).unwrap();
    (dir, state)
}

#[test]
fn population_round_trip_keeps_rng_ranking_and_lineage() {
    let (dir, state) = trained_population();
    assert!(state.slots.iter().any(|s| !s.lineage.is_empty()));
    let copy = dir.path().join("copy");
    checkpoint::save_checkpoint(&state, &copy).unwrap();
    let back = checkpoint::load_checkpoint(&copy).unwrap();
    assert_eq!(back, state);
    let mut a = back.clone();
    let mut b = state.clone();
    assert_eq!(a.next_seed(), b.next_seed());
    // Identical states serialize to identical bytes.
    assert_eq!(checkpoint::encode_meta(&back), checkpoint::encode_meta(&state));
    assert_eq!(fs::read(copy.join("population.meta")).unwrap(), fs::read(dir.path().join("3/population.meta")).unwrap());
}

#[test]
fn truncated_files_are_corruption_errors() {
    let (dir, _) = trained_population();
    let ckpt = dir.path().join("3");
    for name in ["population.meta", "agent_1.ckpt", "examples.bin"] {
        let path = ckpt.join(name);
        let bytes = fs::read(&path).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            fs::write(&path, &bytes[..cut]).unwrap();
            let err = if name == "examples.bin" {
                checkpoint::load_examples(&path).map(|_| ()).unwrap_err()
            } else {
                checkpoint::load_checkpoint(&ckpt).map(|_| ()).unwrap_err()
            };
            assert!(
                matches!(&err, CheckpointError::Format { source: FormatError::Truncated, .. }),
                "{name} cut at {cut}: {err}"
            );
        }
        fs::write(&path, &bytes).unwrap();
    }
    checkpoint::load_checkpoint(&ckpt).unwrap();
}

#[test]
fn flipped_bits_fail_the_checksum() {
    let (dir, _) = trained_population();
    let path = dir.path().join("2/agent_0.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    bytes[40] ^= 0x10;
    fs::write(&path, &bytes).unwrap();
    let err = checkpoint::load_checkpoint(&dir.path().join("2")).unwrap_err();
    assert!(matches!(err, CheckpointError::Format { source: FormatError::Checksum, .. }), "{err}");
}

#[test]
fn newer_format_is_an_explicit_version_error() {
    let (dir, _) = trained_population();
    let path = dir.path().join("1/population.meta");
    let mut bytes = fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    fs::write(&path, &bytes).unwrap();
    let err = checkpoint::load_checkpoint(&dir.path().join("1")).unwrap_err();
    assert!(matches!(
        err,
        CheckpointError::Format { source: FormatError::Version { found: 2, expected: 1 }, .. }
    ));
}

#[test]
fn examples_round_trip() {
    let (dir, _) = trained_population();
    let path = dir.path().join("3/examples.bin");
    let examples = checkpoint::load_examples(&path).unwrap();
    assert!(!examples.is_empty() && examples.iter().all(|e| e.iteration == 3));
    assert_eq!(checkpoint::encode_examples(&examples), fs::read(&path).unwrap());
}

#[test]
fn metrics_rows_and_means() {
    let (dir, _) = trained_population();
    let summaries = metrics::load_summaries(dir.path()).unwrap();
    assert_eq!(summaries.len(), 3);
    for s in &summaries {
        assert_eq!(s.rows.len(), 4 + 1);
        let (agents, mean) = s.rows.split_at(4);
        assert_eq!(mean[0].agent, "mean");
        let lr = agents.iter().map(|r| r.learning_rate).sum::<f64>() / 4.0;
        let ratio = agents.iter().map(|r| r.value_loss_ratio).sum::<f64>() / 4.0;
        assert!((mean[0].learning_rate - lr).abs() < 1e-12);
        assert!((mean[0].value_loss_ratio - ratio).abs() < 1e-12);
        assert!((mean[0].win_rate.unwrap() - 0.5).abs() < 1e-12);
        // Replacement and perturbation are visible row by row.
        for r in agents {
            if let Some(source) = r.replaced_by {
                let src = &agents[source];
                let lr_factor = r.lr_factor.unwrap();
                assert_eq!(r.next_learning_rate, src.base_learning_rate * lr_factor);
                assert_eq!(r.next_value_loss_ratio, src.value_loss_ratio * r.ratio_factor.unwrap());
            } else {
                assert_eq!((r.next_learning_rate, r.next_value_loss_ratio), (r.base_learning_rate, r.value_loss_ratio));
            }
        }
    }

    let csv_path = dir.path().join("out.csv");
    assert_eq!(metrics::export_metrics(dir.path(), Format::Csv, &csv_path).unwrap(), 15);
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), COLUMNS);
    let rows: Vec<metrics::MetricsRow> = reader.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows, summaries.into_iter().flat_map(|s| s.rows).collect::<Vec<_>>());
}

#[test]
fn empty_run_exports_a_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    assert_eq!(metrics::export_metrics(dir.path(), Format::Csv, &out).unwrap(), 0);
    assert_eq!(fs::read_to_string(&out).unwrap().trim_end(), COLUMNS.join(","));
    assert!(metrics::export_metrics(&dir.path().join("missing"), Format::Csv, &out).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_network_round_trips(seed in any::<u64>(), n in 2usize..6, blocks in 1usize..3, filters in 1usize..5, multi in any::<bool>()) {
        let mut config = NetworkConfig::new(n, blocks, filters);
        if multi {
            config = config.with_value_head(ValueHead::komi_range(-2, 3));
        }
        let net: NetworkWeights<f32> = NetworkWeights::init(config, seed).unwrap();
        let bytes = checkpoint::encode_network(&net);
        let back = checkpoint::decode_network(&bytes).unwrap();
        prop_assert_eq!(back.config(), net.config());
        prop_assert!(back.params().iter().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(checkpoint::encode_network(&back), bytes);
    }
}
