mod common;

use grue_core::agent::{Actor, Variant};
use grue_core::chain::{
    backtrack, freeze_and_restart, train_chained, Backtrack, BestTrajectory, BottleneckDetector, ChainConfig,
    ChainEvent, PolicyChain,
};
use grue_core::fixtures::{minigrue, MINIGRUE_BOTTLENECK_SCORE};
use grue_core::kg::Tracker;
use grue_core::{Engine, PolicyParams, TrainingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scripted(engine: &Engine, script: &[&str]) -> BestTrajectory {
    let actions = common::parse_all(engine, script);
    let (mut s, _) = engine.reset(0);
    let mut scores = Vec::new();
    for a in &actions {
        s = engine.step(&s, a).unwrap().0;
        scores.push(s.score);
    }
    BestTrajectory { actions, scores }
}

fn minigrue_chain(engine: &Engine) -> PolicyChain<f64> {
    let actor = Actor::new(engine.clone(), Variant::WithKg, 16);
    PolicyChain::new(actor.zero_params())
}

#[test]
fn dead_end_exhausts_after_forty_backtracks() {
    let summary = common::check_dead_end(0).unwrap();
    println!("{summary}");
}

#[test]
fn anchor_replays_and_frozen_params_stay_put() {
    let summary = common::check_anchor_and_freeze(0, 20_000).unwrap();
    println!("{summary}");
}

#[test]
fn bottleneck_anchor_replays_to_fifteen() {
    let engine = Engine::new(minigrue());
    let mut chain = minigrue_chain(&engine);
    let best = scripted(&engine, &["open mailbox", "take egg", "east", "look", "west"]);
    let buffer = freeze_and_restart(&mut chain, &best, &engine, 40).unwrap();
    // cut right after the step that reached the final score
    assert_eq!(chain.anchor_len(), 3);
    assert_eq!(chain.anchor_score(), MINIGRUE_BOTTLENECK_SCORE);
    assert_eq!(buffer.iter().map(|e| e.step).collect::<Vec<_>>(), [0, 1, 2]);
    let t = Tracker::replay(&engine, &chain.anchor_prefix()).unwrap();
    assert_eq!(t.state.score, MINIGRUE_BOTTLENECK_SCORE);
    assert!(chain.active.iter().all(|w| *w == 0.0));
}

#[test]
fn escape_at_depth_three_starts_a_new_segment() {
    let engine = Engine::new(minigrue());
    let mut chain = minigrue_chain(&engine);
    let stuck = scripted(&engine, &["look", "look", "look", "take egg", "east"]);
    let mut buffer = freeze_and_restart(&mut chain, &stuck, &engine, 40).unwrap();
    assert_eq!(buffer.len(), 5);

    let mut detector = BottleneckDetector::new(2);
    detector.observe(15);
    let mut moves = Vec::new();
    for _ in 0..3 {
        while !detector.observe(15).bottleneck {}
        detector.rearm();
        match backtrack(&mut chain, &mut buffer) {
            Backtrack::Moved { step, score } => moves.push((step, score)),
            Backtrack::Exhausted => panic!("buffer ran out early"),
        }
    }
    // first retreat is the state just before the best step
    assert_eq!(moves, [(4, 5), (3, 0), (2, 0)]);
    assert_eq!(chain.anchor_len(), 2);
    assert_eq!(chain.anchor_score(), 0);

    let escape = scripted(
        &engine,
        &["look", "look", "take egg", "east", "north", "take lamp", "turn on lamp", "south", "go down"],
    );
    let v = detector.observe(escape.final_score());
    assert!(v.new_best && !v.bottleneck);
    assert_eq!(detector.since_improvement(), 0);

    let buffer = freeze_and_restart(&mut chain, &escape, &engine, 40).unwrap();
    assert_eq!(chain.segments.len(), 2);
    assert_eq!(chain.segments[0].score, 0);
    assert_eq!(chain.segments[1].score, 40);
    // refilled around the new best, never reaching into the earlier segment
    assert_eq!(buffer.iter().map(|e| e.step).collect::<Vec<_>>(), (2..9).collect::<Vec<_>>());
    assert_eq!(chain.anchor_prefix(), escape.actions);
    let t = Tracker::replay(&engine, &chain.anchor_prefix()).unwrap();
    assert_eq!(t.state.score, 40);
}

#[test]
fn freeze_rejects_a_trajectory_off_the_anchor() {
    let engine = Engine::new(minigrue());
    let mut chain = minigrue_chain(&engine);
    let first = scripted(&engine, &["take egg", "east"]);
    freeze_and_restart(&mut chain, &first, &engine, 40).unwrap();
    let other = scripted(&engine, &["east", "west", "take egg"]);
    assert!(freeze_and_restart(&mut chain, &other, &engine, 40).is_err());
    assert_eq!(chain.segments.len(), 1);
}

#[test]
fn patience_one_freezes_on_the_first_stall() {
    let engine = Engine::new(minigrue());
    let actor = Actor::new(engine, Variant::WithKg, 64);
    let cfg = ChainConfig {
        patience: 1,
        step_budget: 5_000,
        ..ChainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let run = train_chained::<f64, _>(&actor, &TrainingConfig::default(), &cfg, None, &mut rng, |_| {}).unwrap();
    // every episode ends a patience window, so the first positive score is
    // frozen in the same episode that found it
    let first = run.records.iter().position(|r| r.score > 0).expect("some episode scores");
    assert!(run.records[first].events.contains(&ChainEvent::Freeze), "{:?}", run.records[first]);
}

#[test]
fn graph_chaining_freezes_before_passing_the_bottleneck() {
    let actor = Actor::new(Engine::new(minigrue()), Variant::WithKg, 256);
    let (mut passed, mut froze_first) = (0, 0);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let run = train_chained::<f64, _>(&actor, &TrainingConfig::default(), &ChainConfig::default(), None, &mut rng, |_| {})
            .unwrap();
        let Some(past) = run.records.iter().position(|r| r.score > MINIGRUE_BOTTLENECK_SCORE) else {
            continue;
        };
        passed += 1;
        // a lucky first segment can walk straight through before any stall
        if run.records[..=past].iter().any(|r| r.events.contains(&ChainEvent::Freeze)) {
            froze_first += 1;
        }
    }
    println!("{passed} of 5 passed, {froze_first} after a freeze");
    assert!(passed >= 4);
    assert!(froze_first >= 1);
}

#[test]
fn zero_initial_params_match_the_default() {
    let actor = Actor::new(Engine::new(minigrue()), Variant::TextOnly, 32);
    let cfg = ChainConfig {
        step_budget: 2_000,
        ..ChainConfig::default()
    };
    let go = |initial: Option<PolicyParams>| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        train_chained(&actor, &TrainingConfig::default(), &cfg, initial, &mut rng, |_| {}).unwrap().records
    };
    assert_eq!(go(None), go(Some(actor.zero_params())));
}
