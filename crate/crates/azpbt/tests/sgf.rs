//! SGF export read back and replayed.

mod common;

use std::fs;

use azpbt::run::{Run, SGF_FILE};
use azpbt::sgf::{self, result_text};
use azpbt_core::selfplay::play_pair_games;
use azpbt_core::{BoardConfig, Komi, NetworkConfig, NetworkWeights, SearchConfig, Sequential};
use common::tiny;

#[test]
fn exported_games_replay_to_the_recorded_result() {
    let net = NetworkWeights::init(NetworkConfig::new(5, 1, 4), 3).unwrap();
    let board = BoardConfig::new(5, Komi::from_points(3.5).unwrap()).unwrap();
    let records = play_pair_games(0, 1, &[&net, &net], 20, &SearchConfig::self_play(5, 8), board, 4, &Sequential).unwrap();
    let text = sgf::games_to_sgf(&records);
    for property in ["FF[4]", "SZ[5]", "KM[3.5]", "RE[", ";B[", ";W["] {
        assert!(text.contains(property), "{property}");
    }
    let games = sgf::parse_sgf(&text).unwrap();
    assert_eq!(games.len(), records.len());
    for (game, record) in games.iter().zip(&records) {
        assert_eq!((game.size, game.komi), (5, board.komi));
        assert_eq!(game.moves.iter().map(|m| m.1).collect::<Vec<_>>(), record.moves);
        let end = game.replay().unwrap();
        assert!(end.is_terminal());
        assert_eq!(end.stones(), record.replay().unwrap().stones());
        assert_eq!(game.result.as_deref(), Some(result_text(&end.score().unwrap()).as_str()));
    }
}

#[test]
fn runs_can_keep_their_games() {
    let dir = tempfile::tempdir().unwrap();
    Run::open(dir.path(), &tiny("sgf = true\niterations = 1")).unwrap().train(&Sequential, |_| {}).unwrap();
    let games = sgf::parse_sgf(&fs::read_to_string(dir.path().join("1").join(SGF_FILE)).unwrap()).unwrap();
    assert_eq!(games.len(), 8);
    assert!(games.iter().all(|g| g.replay().unwrap().is_terminal()));
}
