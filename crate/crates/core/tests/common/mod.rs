// Shared fixtures and checks for the integration tests and the acceptance
// runner. Each check returns a one-line summary on success.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use grue_core::action::{self, admissible_actions, enumerate_actions};
use grue_core::agent::{self, EpisodeStart, Rollout, TrajectoryStep, Variant};
use grue_core::cells::{self, cell_key, ExploreConfig};
use grue_core::chain::{self, ChainConfig, ChainEvent, Termination};
use grue_core::fixtures::{minigrue, WALKTHROUGH};
use grue_core::kg::Tracker;
use grue_core::snapshot;
use grue_core::{Engine, GameState, TemplateAction, TemplateId, TrainingConfig, WordId, WorldSpec};

pub type Check = Result<String, String>;

/// Three rooms, a dark loft, a container and a light source: every verb the
/// engine knows has something to act on.
pub const SHED: &str = r#"
start_room = "yard"
max_steps = 200
templates = [
    "look", "inventory", "north", "south", "up", "down",
    "go __", "open __", "close __", "take __", "drop __", "examine __", "read __",
    "turn on __", "turn off __", "put __ in __", "get __ from __",
]

[vocabulary]
verb = ["look", "inventory", "go", "open", "close", "take", "drop", "examine", "read", "turn", "put", "get"]
preposition = ["in", "from", "on", "off"]
direction = ["north", "south", "up", "down"]
noun = ["chest", "coin", "lantern", "note", "hay", "shed", "loft", "yard", "ladder"]
adjective = ["rusty", "tin", "old"]

[[rooms]]
id = "yard"
name = "Yard"
description = "A muddy yard. An old shed stands to the north."
exits = { north = "shed" }

[[rooms]]
id = "shed"
name = "Shed"
description = "Tools hang on the walls. A ladder leads up to the loft."
exits = { south = "yard", up = "loft" }

[[rooms]]
id = "loft"
name = "Loft"
description = "A low loft full of hay."
dark = true
exits = { down = "shed" }

[[objects]]
id = "chest"
noun = "chest"
adjectives = ["rusty"]
location = "shed"
container = true
openable = true
description = "It is a rusty chest."

[[objects]]
id = "coin"
noun = "coin"
location = "chest"
portable = true
description = "It is a coin."

[[objects]]
id = "lantern"
noun = "lantern"
adjectives = ["tin"]
location = "yard"
portable = true
light_source = true
description = "It is a tin lantern."

[[objects]]
id = "note"
noun = "note"
location = "yard"
portable = true
description = "A scrap of paper."
text = "The coin is in the chest."

[[objects]]
id = "hay"
noun = "hay"
location = "loft"
description = "Plenty of hay."

[[rewards]]
points = 5
condition = { take = "coin" }

[[rewards]]
points = 1
condition = { flag = "lantern-lit" }

[[rewards]]
points = 3
condition = { enter_room = "loft" }

[[hazards]]
room = "loft"
penalty = 5
"#;

pub fn shed() -> Engine {
    Engine::new(WorldSpec::from_toml(SHED).expect("shed world parses"))
}

/// A straight corridor of `rooms` rooms walked with "east". Entering the last
/// room pays one point; a vault reward that nothing leads to keeps the
/// maximum score out of reach, so chaining can only stall.
pub fn corridor(rooms: usize) -> Engine {
    let mut doc = String::from(
        "start_room = \"r0\"\nmax_steps = 100000\ntemplates = [\"look\", \"east\"]\n\n\
         [vocabulary]\nverb = [\"look\"]\ndirection = [\"east\"]\nnoun = [\"corridor\"]\n",
    );
    for i in 0..rooms {
        doc += &format!(
            "\n[[rooms]]\nid = \"r{i}\"\nname = \"Corridor {i}\"\ndescription = \"A bare corridor.\"\n"
        );
        if i + 1 < rooms {
            doc += &format!("exits = {{ east = \"r{}\" }}\n", i + 1);
        }
    }
    doc += "\n[[rooms]]\nid = \"vault\"\nname = \"Vault\"\ndescription = \"Sealed.\"\n";
    doc += "\n[[objects]]\nid = \"dust\"\nnoun = \"corridor\"\nlocation = \"r0\"\ndescription = \"Dust.\"\n";
    doc += &format!(
        "\n[[rewards]]\npoints = 1\ncondition = {{ enter_room = \"r{}\" }}\n",
        rooms - 1
    );
    doc += "\n[[rewards]]\npoints = 5\ncondition = { enter_room = \"vault\" }\n";
    Engine::new(WorldSpec::from_toml(&doc).expect("corridor world parses"))
}

pub fn parse_all(engine: &Engine, script: &[&str]) -> Vec<TemplateAction> {
    script
        .iter()
        .map(|l| engine.parse(l).unwrap_or_else(|e| panic!("{l:?}: {e}")))
        .collect()
}

// ---- admissible oracle ------------------------------------------------------

/// Every distinct state reachable from reset, breadth first.
pub fn reachable_states(engine: &Engine, cap: usize) -> Vec<GameState> {
    let (start, _) = engine.reset(0);
    let mut seen = HashSet::from([engine.state_hash(&start)]);
    let mut queue = VecDeque::from([start]);
    let mut out = Vec::new();
    while let Some(s) = queue.pop_front() {
        if out.len() >= cap {
            break;
        }
        for a in admissible_actions(engine, &s) {
            let (next, _) = engine.step(&s, &a).expect("admissible actions step");
            if seen.insert(engine.state_hash(&next)) {
                queue.push_back(next);
            }
        }
        out.push(s);
    }
    out
}

/// Soundness and completeness of the oracle against the full template ×
/// vocabulary product, at every reachable state of the shed world.
pub fn check_admissible() -> Check {
    let t0 = std::time::Instant::now();
    let engine = shed();
    let world = engine.world();
    let everything: Vec<WordId> = world.vocab.ids().collect();
    let full = enumerate_actions(&world.templates, &everything);
    let states = reachable_states(&engine, usize::MAX);
    let mut violations = Vec::new();
    let mut admissible_total = 0;
    for s in &states {
        let listed = admissible_actions(&engine, s);
        admissible_total += listed.len();
        let set: HashSet<_> = listed.iter().cloned().collect();
        if set.len() != listed.len() {
            violations.push("duplicate entries".to_string());
        }
        let before = engine.state_hash(s);
        for a in &full {
            let changes = match engine.step(s, a) {
                Ok((next, obs)) => obs.reward != 0 || engine.state_hash(&next) != before,
                Err(_) => false,
            };
            if changes != set.contains(a) {
                violations.push(format!(
                    "{:?} at room {:?}: changes={changes}",
                    engine.render(a).unwrap_or_default(),
                    s.room
                ));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let summary = format!(
        "{} states x {} actions, {} admissible, {} violations, {secs:.1}s",
        states.len(),
        full.len(),
        admissible_total,
        violations.len()
    );
    if violations.is_empty() && secs < 60.0 && states.len() > 1 {
        Ok(summary)
    } else {
        Err(format!("{summary}; first: {:?}", violations.first()))
    }
}

// ---- knowledge graph -------------------------------------------------------

pub const GOLDEN_AFTER_DOWN: &str = include_str!("../golden/walkthrough-cellar.kg");
pub const GOLDEN_FINAL: &str = include_str!("../golden/walkthrough.kg");

pub fn check_kg_golden() -> Check {
    let engine = Engine::new(minigrue());
    let mut t = Tracker::reset(&engine, 0);
    let down = WALKTHROUGH.iter().position(|l| *l == "go down").expect("walkthrough goes down");
    for (i, a) in parse_all(&engine, WALKTHROUGH).iter().enumerate() {
        t.step(&engine, a).map_err(|e| e.to_string())?;
        if i == down {
            if !t.kg.contains("kitchen", "down", "cellar") {
                return Err("no (kitchen, down, cellar) after \"go down\"".into());
            }
            if t.kg.dump() != GOLDEN_AFTER_DOWN {
                return Err(format!("graph after \"go down\" differs:\n{}", t.kg.dump()));
            }
        }
    }
    let dump = t.kg.dump();
    if dump != GOLDEN_FINAL {
        return Err(format!("final graph differs:\n{dump}"));
    }
    Ok(format!("{} triples after {} commands, byte-identical", t.kg.len(), WALKTHROUGH.len()))
}

// ---- gradients -------------------------------------------------------------

const FEATURES: usize = 7;
const VOCAB: usize = 6;
const ARITIES: [u8; 4] = [0, 1, 2, 1];

fn uniform(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    rng.gen_range(-scale..scale)
}

fn random_features(rng: &mut ChaCha8Rng) -> agent::FeatureVector<f64> {
    agent::FeatureVector(
        (0..FEATURES)
            .map(|_| if rng.gen_bool(0.4) { 0.0 } else { uniform(rng, 1.0) })
            .collect(),
    )
}

/// Random parameters and a random rollout of 1 to 8 steps.
pub fn random_batch(seed: u64) -> (agent::PolicyParams<f64>, Rollout<f64>, TrainingConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = agent::PolicyParams::zeros(FEATURES, ARITIES.to_vec(), VOCAB);
    for w in p.iter_mut() {
        *w = uniform(&mut rng, 1.0);
    }
    let n = rng.gen_range(1..=8);
    let mut steps = Vec::new();
    for i in 0..n {
        let t = rng.gen_range(0..ARITIES.len());
        let mut fills: Vec<WordId> = (0..VOCAB as u32).map(WordId).collect();
        fills.shuffle(&mut rng);
        fills.truncate(rng.gen_range(1..=VOCAB));
        let chosen = (0..ARITIES[t]).map(|_| *fills.choose(&mut rng).unwrap()).collect();
        steps.push(TrajectoryStep {
            features: random_features(&mut rng),
            action: TemplateAction::new(TemplateId(t as u16), chosen),
            fills,
            log_prob_template: 0.0,
            log_prob_fills: Vec::new(),
            value: 0.0,
            reward: *[-1.0, 0.0, 0.0, 1.0, 5.0].choose(&mut rng).unwrap(),
            done: i + 1 == n && rng.gen_bool(0.5),
        });
    }
    let cfg = TrainingConfig {
        gamma: rng.gen_range(0.5..1.0),
        entropy_coef: rng.gen_range(0.0..0.5),
        value_coef: rng.gen_range(0.1..1.0),
        ..TrainingConfig::default()
    };
    let rollout = Rollout {
        steps,
        bootstrap: Some(random_features(&mut rng)),
    };
    (p, rollout, cfg)
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Loss written out directly from the parameter layout, independent of the
/// crate's own loss code. Returns and advantages are inputs, held fixed.
pub fn reference_loss(
    p: &agent::PolicyParams<f64>,
    r: &Rollout<f64>,
    returns: &[f64],
    advantages: &[f64],
    cfg: &TrainingConfig,
) -> f64 {
    let nt = ARITIES.len();
    let mut total = 0.0;
    for (k, step) in r.steps.iter().enumerate() {
        let x = &step.features.0;
        let t = step.action.template.0 as usize;
        let z: Vec<f64> = (0..nt)
            .map(|j| (0..FEATURES).map(|i| x[i] * p.template_w[i * nt + j]).sum())
            .collect();
        let lp = log_softmax(&z);
        let mut log_prob = lp[t];
        for (h, fill) in step.action.fills.iter().enumerate() {
            let w = &p.object_w[h];
            let zo: Vec<f64> = step
                .fills
                .iter()
                .map(|f| {
                    let c = f.0 as usize;
                    w[(FEATURES + t) * VOCAB + c] + (0..FEATURES).map(|i| x[i] * w[i * VOCAB + c]).sum::<f64>()
                })
                .collect();
            let lo = log_softmax(&zo);
            log_prob += lo[step.fills.iter().position(|f| f == fill).unwrap()];
        }
        let v: f64 = (0..FEATURES).map(|i| x[i] * p.value_w[i]).sum();
        let entropy: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
        total += -advantages[k] * log_prob + cfg.value_coef * (returns[k] - v).powi(2) - cfg.entropy_coef * entropy;
    }
    total
}

/// Discounted returns and advantages, written out independently.
pub fn reference_targets(p: &agent::PolicyParams<f64>, r: &Rollout<f64>, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let value = |x: &agent::FeatureVector<f64>| -> f64 { x.0.iter().zip(&p.value_w).map(|(a, b)| a * b).sum() };
    let last = r.steps.last().unwrap();
    let mut g = if last.done { 0.0 } else { value(r.bootstrap.as_ref().unwrap()) };
    let mut returns = vec![0.0; r.steps.len()];
    for k in (0..r.steps.len()).rev() {
        if r.steps[k].done {
            g = 0.0;
        }
        g = r.steps[k].reward + gamma * g;
        returns[k] = g;
    }
    let adv = r.steps.iter().zip(&returns).map(|(s, g)| g - value(&s.features)).collect();
    (returns, adv)
}

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Below this both gradients count as zero for the relative error.
pub const FD_FLOOR: f64 = 1e-7;

/// Worst relative error between the analytic gradient and central
/// differences of [`reference_loss`] over one random batch.
pub fn gradient_error(seed: u64) -> f64 {
    let (p, r, cfg) = random_batch(seed);
    let (returns, adv) = reference_targets(&p, &r, cfg.gamma);
    let (lib_ret, lib_adv) = agent::returns_and_advantages(&p, &r, cfg.gamma);
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
    assert!(close(&returns, &lib_ret) && close(&adv, &lib_adv), "targets differ at seed {seed}");

    let analytic: Vec<f64> = agent::gradient(&p, &r, &returns, &adv, &cfg).iter().copied().collect();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut plus = p.clone();
        *plus.iter_mut().nth(k).unwrap() += FD_EPS;
        let mut minus = p.clone();
        *minus.iter_mut().nth(k).unwrap() -= FD_EPS;
        let fd = (reference_loss(&plus, &r, &returns, &adv, &cfg) - reference_loss(&minus, &r, &returns, &adv, &cfg))
            / (2.0 * FD_EPS);
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}

pub fn check_gradients(batches: u64) -> Check {
    let (worst, seed) = (0..batches)
        .map(|s| (gradient_error(s), s))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
    let summary = format!("{batches} batches, worst relative error {worst:.2e} (seed {seed})");
    if worst < FD_TOLERANCE {
        Ok(summary)
    } else {
        Err(summary)
    }
}

// ---- determinism and replay -------------------------------------------------

/// Plays `len` uniformly drawn template actions over the whole vocabulary and
/// returns the score after each step.
pub fn random_play(engine: &Engine, seed: u64, len: usize) -> (Vec<i64>, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = engine.world();
    let words: Vec<WordId> = world.vocab.ids().collect();
    let (mut s, _) = engine.reset(seed);
    let mut scores = Vec::new();
    for _ in 0..len {
        if engine.is_done(&s) {
            break;
        }
        let t = world.templates.choose(&mut rng).unwrap();
        let fills = (0..t.arity()).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let (next, obs) = engine.step(&s, &TemplateAction::new(t.id, fills)).unwrap();
        s = next;
        scores.push(obs.score);
    }
    (scores, snapshot::state_hash(&s))
}

pub fn check_random_sequences(n: u64) -> Check {
    let mut moved = 0;
    for seed in 0..n {
        let a = random_play(&Engine::new(minigrue()), seed, 200);
        let b = random_play(&Engine::new(minigrue()), seed, 200);
        if a != b {
            return Err(format!("sequence {seed} diverged"));
        }
        moved += a.0.iter().any(|s| *s != 0) as usize;
    }
    Ok(format!("{n} sequences identical, {moved} of them scored"))
}

/// Runs Go-Explore for `budget` steps and replays every archived cell.
pub fn check_cell_replay(variant: Variant, budget: u64, seed: u64) -> Check {
    let actor = agent::Actor::new(Engine::new(minigrue()), variant, 64);
    let cfg = ExploreConfig {
        step_budget: budget,
        ..ExploreConfig::default()
    };
    let train = TrainingConfig {
        batch_size: 1,
        ..TrainingConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = cells::train_goexplore(&actor, &train, &cfg, None, &mut rng, |_| {})
        .map_err(|e| e.to_string())?;
    for cell in run.archive.iter() {
        let t = Tracker::replay(&actor.engine, &cell.trajectory).map_err(|e| e.to_string())?;
        if cell_key(variant, &actor.engine, &t) != cell.key || t.state.score != cell.score {
            return Err(format!("cell {} does not replay", cell.key));
        }
        // the snapshot fast path lands in the same place
        let restored = snapshot::restore(&snapshot::snapshot(&t.state)).map_err(|e| e.to_string())?;
        if restored != t.state {
            return Err(format!("cell {} snapshot differs from replay", cell.key));
        }
    }
    Ok(format!(
        "{} cells replayed after {} steps, best {}",
        run.archive.len(),
        run.steps_used,
        run.archive.best_score()
    ))
}

// ---- chaining ---------------------------------------------------------------

pub const DEAD_END_ROOMS: usize = 45;

/// The corridor stalls after its single reward; every backtrack fails, and
/// the run must stop once the buffer of 40 states is spent.
pub fn check_dead_end(seed: u64) -> Check {
    let actor = agent::Actor::new(corridor(DEAD_END_ROOMS), Variant::WithKg, 32);
    let cfg = ChainConfig {
        patience: 2,
        step_budget: 2_000_000,
        ..ChainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = chain::train_chained(&actor, &TrainingConfig::default(), &cfg, None, &mut rng, |_| {})
        .map_err(|e| e.to_string())?;
    let count = |ev: ChainEvent| run.records.iter().filter(|r| r.events.contains(&ev)).count();
    let (freezes, backtracks) = (count(ChainEvent::Freeze), count(ChainEvent::Backtrack));
    let summary = format!(
        "{:?} after {} episodes, {freezes} freeze, {backtracks} backtracks",
        run.termination,
        run.records.len()
    );
    let last = run.records.last().expect("at least one episode");
    if run.termination == Termination::Exhausted
        && freezes == 1
        && backtracks == chain::DEFAULT_BUFFER_SIZE
        && last.events.contains(&ChainEvent::Terminate)
        && last.backtrack_depth == chain::DEFAULT_BUFFER_SIZE
    {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// Trains a chain on MiniGrue, then checks that the anchor replays to its
/// score every episode and that frozen segments survive further training
/// byte for byte.
pub fn check_anchor_and_freeze(seed: u64, budget: u64) -> Check {
    let actor = agent::Actor::new(Engine::new(minigrue()), Variant::WithKg, 256);
    let train = TrainingConfig::default();
    let cfg = ChainConfig {
        step_budget: budget,
        ..ChainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = chain::train_chained(&actor, &train, &cfg, None, &mut rng, |_| {}).map_err(|e| e.to_string())?;
    let chain = &mut run.chain;
    if chain.segments.is_empty() {
        return Err("no segment was frozen".into());
    }
    for w in chain.segments.windows(2) {
        if w[1].score < w[0].score {
            return Err(format!("segment scores fall: {} then {}", w[0].score, w[1].score));
        }
    }
    let frozen: Vec<Vec<u8>> = chain.segments.iter().map(|s| s.params.to_bytes()).collect();
    let prefix = chain.anchor_prefix();
    let n = prefix.len();
    let start = EpisodeStart { prefix, blob: None };
    let mut updates = 0;
    let mut episodes = 0;
    while updates < 1000 {
        let ep = agent::train_episode(&actor, &mut chain.active, &train, &start, None, 100, &mut rng)
            .map_err(|e| e.to_string())?;
        if n > 0 && ep.scores[n - 1] != chain.anchor_score() {
            return Err(format!("anchor replay scored {} not {}", ep.scores[n - 1], chain.anchor_score()));
        }
        updates += ep.updates;
        episodes += 1;
    }
    let after: Vec<Vec<u8>> = chain.segments.iter().map(|s| s.params.to_bytes()).collect();
    if after != frozen {
        return Err("frozen parameters changed".into());
    }
    Ok(format!(
        "{} segments, anchor {} steps at score {}, {episodes} episodes and {updates} updates later unchanged",
        chain.segments.len(),
        n,
        chain.anchor_score()
    ))
}

// ---- action-space arithmetic -------------------------------------------------

pub fn check_action_space() -> Check {
    let templates = action::action_space_size(std::iter::repeat_n(2, 237), 697);
    let words = action::action_space_size([5], 697);
    let closed_t = 237u128 * 697 * 697;
    let closed_w = 697u128.pow(5);
    let ok = templates == closed_t
        && words == closed_w
        && templates == 115_136_733
        && words == 164_499_237_983_257
        && format!("{:.2e}", templates as f64) == "1.15e8"
        && format!("{:.2e}", words as f64) == "1.64e14";
    let summary = format!("templates {templates} ({:.2e}), words {words} ({:.2e})", templates as f64, words as f64);
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}
