//! Bundled worlds and scripted walkthroughs.

use crate::engine::{Engine, GameState, Observation};
use crate::world::WorldSpec;

/// The MiniGrue world document.
pub const MINIGRUE: &str = include_str!("../worlds/minigrue.toml");

/// A winning MiniGrue play-through.
pub const WALKTHROUGH: &[&str] = &[
    "open mailbox",
    "take leaflet",
    "read leaflet",
    "take egg",
    "east",
    "north",
    "take lamp",
    "turn on lamp",
    "south",
    "go down",
    "south",
    "take sceptre",
];

/// Score of a MiniGrue state that has the kitchen and egg rewards but has not
/// entered the cellar.
pub const MINIGRUE_BOTTLENECK_SCORE: i64 = 15;

pub fn minigrue() -> WorldSpec {
    WorldSpec::from_toml(MINIGRUE).expect("bundled world is valid")
}

/// Runs `script` from reset and returns the final state and observation.
///
/// Panics on unparsable commands or stepping a finished game; meant for tests
/// and scripted tooling.
pub fn play(engine: &Engine, script: &[&str]) -> (GameState, Observation) {
    let (mut state, mut obs) = engine.reset(0);
    for line in script {
        let action = engine
            .parse(line)
            .unwrap_or_else(|e| panic!("{line:?}: {e}"));
        (state, obs) = engine
            .step(&state, &action)
            .unwrap_or_else(|e| panic!("{line:?}: {e}"));
    }
    (state, obs)
}
