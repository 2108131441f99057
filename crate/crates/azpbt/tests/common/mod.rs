#![allow(dead_code)]

use azpbt::config::Settings;

/// A population small enough to run several iterations in a second or two.
pub fn tiny(extra: &str) -> Settings {
    let mut s = Settings::parse(
        "size = 3
         komi = 1
         blocks = 1
         filters = 4
         simulations = 4
         population = 4
         games_per_iteration = 8
         iterations = 3
         batch_size = 8
         replay_window = 2
         eval_games_per_pairing = 2
         exploit_percent = 25
         grid = 0.02,1; 0.01,0.5",
    )
    .unwrap();
    s.apply_text(extra).unwrap();
    s
}
