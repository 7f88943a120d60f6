//! The six-agent matrix: configuration, seeded runs, result tables and the
//! world tooling behind the command line.

use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{admissible_actions, enumerate_actions, Tag, TemplateAction};
use crate::agent::{train_episode, Actor, EpisodeStart, PolicyParams, TrainingConfig, Variant};
use crate::cells::{train_goexplore, ExploreConfig, DEFAULT_CELL_STEP_SIZE};
use crate::chain::{train_chained, ChainConfig, DEFAULT_BUFFER_SIZE, DEFAULT_FORCE_PROB, DEFAULT_PATIENCE};
use crate::engine::Engine;
use crate::fixtures::{MINIGRUE, MINIGRUE_BOTTLENECK_SCORE};
use crate::snapshot::digest;
use crate::world::{WorldError, WorldSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    A2c,
    KgA2c,
    A2cChained,
    KgA2cChained,
    A2cExplore,
    KgA2cExplore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Plain,
    Chained,
    Explore,
}

impl AgentKind {
    /// Table order.
    pub const ALL: [AgentKind; 6] = [
        AgentKind::A2c,
        AgentKind::KgA2c,
        AgentKind::A2cChained,
        AgentKind::KgA2cChained,
        AgentKind::A2cExplore,
        AgentKind::KgA2cExplore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::A2c => "a2c",
            AgentKind::KgA2c => "kg-a2c",
            AgentKind::A2cChained => "a2c-chained",
            AgentKind::KgA2cChained => "kg-a2c-chained",
            AgentKind::A2cExplore => "a2c-explore",
            AgentKind::KgA2cExplore => "kg-a2c-explore",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn variant(self) -> Variant {
        match self {
            AgentKind::A2c | AgentKind::A2cChained | AgentKind::A2cExplore => Variant::TextOnly,
            _ => Variant::WithKg,
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            AgentKind::A2c | AgentKind::KgA2c => Mode::Plain,
            AgentKind::A2cChained | AgentKind::KgA2cChained => Mode::Chained,
            AgentKind::A2cExplore | AgentKind::KgA2cExplore => Mode::Explore,
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Fault(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// World file; the bundled MiniGrue when absent.
    pub world: Option<PathBuf>,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    /// Agent steps per seed.
    pub step_budget: u64,
    /// Pass threshold: a run passes when its best score exceeds this.
    pub bottleneck_score: i64,
    pub bow_dim: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Steps per update for the plain and chained agents. The explorers
    /// update once per rollout.
    pub batch_size: usize,
    pub max_episode_steps: usize,
    pub max_grad_norm: Option<f64>,
    pub patience: usize,
    pub buffer_size: usize,
    pub force_prob: f64,
    pub cell_step_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainingConfig::<f64>::default();
        ExperimentConfig {
            world: None,
            agent: AgentKind::KgA2cChained,
            seeds: vec![0, 1, 2, 3, 4],
            step_budget: 50_000,
            bottleneck_score: MINIGRUE_BOTTLENECK_SCORE,
            bow_dim: crate::agent::DEFAULT_BOW_DIM,
            learning_rate: t.learning_rate,
            gamma: t.gamma,
            entropy_coef: t.entropy_coef,
            value_coef: t.value_coef,
            batch_size: t.batch_size,
            max_episode_steps: t.max_episode_steps,
            max_grad_norm: t.max_grad_norm,
            patience: DEFAULT_PATIENCE,
            buffer_size: DEFAULT_BUFFER_SIZE,
            force_prob: DEFAULT_FORCE_PROB,
            cell_step_size: DEFAULT_CELL_STEP_SIZE,
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document; missing keys take their defaults.
    pub fn from_toml(doc: &str) -> Result<Self, HarnessError> {
        toml::from_str(doc).map_err(|e| HarnessError::Config(e.message().to_string()))
    }

    /// Applies `key=value` overrides. Values are read as TOML scalars or
    /// arrays, falling back to a bare string.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self, HarnessError> {
        let mut table = toml::Table::try_from(self).map_err(|e| HarnessError::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override {o:?} is not key=value")))?;
            let k = k.trim().replace('-', "_");
            let v = v.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k, value);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.step_budget == 0 {
            return bad("step_budget must be positive");
        }
        if self.bow_dim == 0 {
            return bad("bow_dim must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if self.cell_step_size == 0 {
            return bad("cell_step_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.force_prob) {
            return bad("force_prob must lie in [0, 1]");
        }
        self.training().validate().map_err(HarnessError::Config)
    }

    pub fn training(&self) -> TrainingConfig<f64> {
        TrainingConfig {
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            batch_size: self.batch_size,
            max_episode_steps: self.max_episode_steps,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn world_source(&self) -> Result<String, HarnessError> {
        match &self.world {
            None => Ok(MINIGRUE.to_string()),
            Some(p) => std::fs::read_to_string(p).map_err(io_err(p)),
        }
    }

    pub fn load_world(&self) -> Result<WorldSpec, HarnessError> {
        Ok(WorldSpec::from_toml(&self.world_source()?)?)
    }

    /// Digest of the configuration (minus seeds) and the world document.
    pub fn digest(&self) -> Result<String, HarnessError> {
        let mut c = self.clone();
        c.seeds.clear();
        let mut doc = serde_json::to_string(&c).expect("config serializes");
        doc.push('\n');
        doc.push_str(&self.world_source()?);
        Ok(format!("{:016x}", digest(doc.as_bytes())))
    }
}

/// Mean of the last 10% of `series` (at least one point); 0 when empty.
pub fn asymptotic(series: &[i64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let n = series.len().div_ceil(10);
    series[series.len() - n..].iter().sum::<i64>() as f64 / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub agent: AgentKind,
    pub seed: u64,
    pub config_digest: String,
    pub bottleneck_score: i64,
    /// Per-episode final score, or archive best after each expansion.
    pub series: Vec<i64>,
    /// Budget steps used at each point of `series`.
    pub steps: Vec<u64>,
    pub termination: String,
    pub max_score: i64,
    pub asymptotic: f64,
    pub fault: Option<String>,
    #[serde(skip)]
    pub wall_clock_ms: u128,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.max_score > self.bottleneck_score
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub steps: u64,
    pub score: i64,
}

fn run_tag(agent: AgentKind, seed: u64) -> String {
    format!("{agent}-seed{seed}")
}

struct Sink(Option<std::io::BufWriter<std::fs::File>>);

impl Sink {
    fn open(out: Option<&Path>, name: &str) -> Result<Self, HarnessError> {
        match out {
            None => Ok(Sink(None)),
            Some(dir) => {
                let p = dir.join(name);
                Ok(Sink(Some(std::io::BufWriter::new(
                    std::fs::File::create(&p).map_err(io_err(&p))?,
                ))))
            }
        }
    }

    fn line<T: Serialize>(&mut self, v: &T) {
        use std::io::Write;
        if let Some(w) = &mut self.0 {
            // a full disk shows up when the run record is written
            let _ = serde_json::to_writer(&mut *w, v);
            let _ = w.write_all(b"\n");
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// One seed of `cfg`. Module faults end the run early and are kept in the
/// record; only configuration and file errors are returned as `Err`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    world: Arc<WorldSpec>,
    seed: u64,
    initial: Option<PolicyParams<f64>>,
    out: Option<&Path>,
) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let clock = Instant::now();
    let agent = cfg.agent;
    let tag = run_tag(agent, seed);
    let actor = Actor::new(Engine::new(world), agent.variant(), cfg.bow_dim);
    if let Some(p) = &initial {
        let z = actor.zero_params::<f64>();
        if (p.feature_dim, &p.arities, p.vocab_size) != (z.feature_dim, &z.arities, z.vocab_size) {
            return Err(HarnessError::Config("checkpoint shape does not match world and config".into()));
        }
    }
    let train = cfg.training();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Sink::open(out, &format!("{tag}.jsonl"))?;
    let mut series = Vec::new();
    let mut steps = Vec::new();
    let mut fault = None;
    let termination;

    match agent.mode() {
        Mode::Plain => {
            let mut params = initial.unwrap_or_else(|| actor.zero_params());
            let mut used = 0u64;
            let start = EpisodeStart::default();
            while used < cfg.step_budget {
                let limit = train.max_episode_steps.min((cfg.step_budget - used) as usize);
                match train_episode(&actor, &mut params, &train, &start, None, limit, &mut rng) {
                    Ok(ep) => {
                        used += ep.agent_steps as u64;
                        series.push(ep.final_score);
                        steps.push(used);
                        log.line(&EpisodeRecord {
                            episode: series.len() as u64,
                            steps: used,
                            score: ep.final_score,
                        });
                    }
                    Err(e) => {
                        fault = Some(e.to_string());
                        break;
                    }
                }
            }
            termination = if fault.is_some() { "fault" } else { "budget" }.to_string();
            if let Some(dir) = out {
                write_file(&dir.join(format!("{tag}.ckpt")), &params.to_bytes())?;
            }
        }
        Mode::Chained => {
            let chain_cfg = ChainConfig {
                patience: cfg.patience,
                buffer_size: cfg.buffer_size,
                force_prob: cfg.force_prob,
                step_budget: cfg.step_budget,
            };
            match train_chained(&actor, &train, &chain_cfg, initial, &mut rng, |r| log.line(r)) {
                Ok(run) => {
                    for r in &run.records {
                        series.push(r.score);
                        steps.push(r.steps);
                    }
                    termination = serde_json::to_value(run.termination)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default();
                    if let Some(dir) = out {
                        write_file(&dir.join(format!("{tag}.ckpt")), &run.chain.active.to_bytes())?;
                        for (i, s) in run.chain.segments.iter().enumerate() {
                            write_file(&dir.join(format!("{tag}-segment{i}.ckpt")), &s.params.to_bytes())?;
                        }
                    }
                }
                Err(e) => {
                    fault = Some(e.to_string());
                    termination = "fault".into();
                }
            }
        }
        Mode::Explore => {
            let ex_cfg = ExploreConfig {
                cell_step_size: cfg.cell_step_size,
                step_budget: cfg.step_budget,
            };
            match train_goexplore(&actor, &train, &ex_cfg, initial, &mut rng, |r| log.line(r)) {
                Ok(run) => {
                    for r in &run.records {
                        series.push(r.best_score);
                        steps.push(r.steps);
                    }
                    termination = serde_json::to_value(run.termination)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default();
                    if let Some(dir) = out {
                        write_file(&dir.join(format!("{tag}.ckpt")), &run.params.to_bytes())?;
                        write_file(&dir.join(format!("{tag}.archive")), &run.archive.to_bytes())?;
                    }
                }
                Err(e) => {
                    fault = Some(e.to_string());
                    termination = "fault".into();
                }
            }
        }
    }
    drop(log);

    let record = RunRecord {
        agent,
        seed,
        config_digest: cfg.digest()?,
        bottleneck_score: cfg.bottleneck_score,
        max_score: series.iter().copied().max().unwrap_or(0),
        asymptotic: asymptotic(&series),
        series,
        steps,
        termination,
        fault,
        wall_clock_ms: clock.elapsed().as_millis(),
    };
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&record).expect("record serializes");
        write_file(&dir.join(format!("{tag}.run.json")), json.as_bytes())?;
    }
    Ok(record)
}

/// Every seed of `cfg`, one thread per seed.
pub fn run(
    cfg: &ExperimentConfig,
    initial: Option<PolicyParams<f64>>,
    out: Option<&Path>,
) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let world = Arc::new(cfg.load_world()?);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let world = world.clone();
                let initial = initial.clone();
                s.spawn(move || run_seed(cfg, world, seed, initial, out))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Fault("worker panicked".into()))))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub agent: AgentKind,
    pub runs: usize,
    pub mean: f64,
    /// Population standard deviation of the per-run asymptotic rewards.
    pub std: f64,
    pub pass_rate: f64,
}

/// Aggregates records per agent, in table order.
pub fn report(records: &[RunRecord]) -> Vec<ReportRow> {
    let mut by_agent: BTreeMap<AgentKind, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_agent.entry(r.agent).or_default().push(r);
    }
    AgentKind::ALL
        .into_iter()
        .filter_map(|agent| {
            let rs = by_agent.get(&agent)?;
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.asymptotic).sum::<f64>() / n;
            let var = rs.iter().map(|r| (r.asymptotic - mean).powi(2)).sum::<f64>() / n;
            Some(ReportRow {
                agent,
                runs: rs.len(),
                mean,
                std: var.sqrt(),
                pass_rate: rs.iter().filter(|r| r.passed()).count() as f64 / n,
            })
        })
        .collect()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("agent,runs,mean,std,pass_rate\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.3},{:.3},{:.3}", r.agent, r.runs, r.mean, r.std, r.pass_rate);
    }
    out
}

pub fn curve_csv(r: &RunRecord) -> String {
    let mut out = String::from("index,steps,score\n");
    for (i, (s, st)) in r.series.iter().zip(&r.steps).enumerate() {
        let _ = writeln!(out, "{},{},{}", i + 1, st, s);
    }
    out
}

/// Reads every `*.run.json` under `dir`, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".run.json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let s = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&s).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Writes the table and one curve file per record into `dir`.
pub fn write_report(records: &[RunRecord], dir: &Path) -> Result<Vec<ReportRow>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rows = report(records);
    write_file(&dir.join("table.csv"), report_csv(&rows).as_bytes())?;
    for r in records {
        write_file(
            &dir.join(format!("curve-{}.csv", run_tag(r.agent, r.seed))),
            curve_csv(r).as_bytes(),
        )?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    /// Per reward: reached by the search.
    pub reachable: Vec<bool>,
    pub states_searched: usize,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub const REACHABILITY_STATE_CAP: usize = 200_000;

/// Structural checks plus a search for every reward.
///
/// The search is best-first on the number of rewards fired so far, over
/// actions whose blanks are filled with object nouns and directions, and stops
/// after `REACHABILITY_STATE_CAP` distinct states.
pub fn validate_world(doc: &str) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let world = match WorldSpec::from_toml(doc) {
        Ok(w) => w,
        Err(e) => {
            rep.errors.push(format!("{}: {e}", e.path()));
            return rep;
        }
    };
    for w in world.vocab.ids() {
        if world.vocab.tag(w) == Tag::Direction
            && !world.rooms.iter().any(|r| r.exits.iter().any(|(d, _)| *d == w))
        {
            rep.warnings.push(format!("direction {:?} leads nowhere", world.vocab.word(w)));
        }
    }
    let engine = Engine::new(world);
    let world = engine.world();
    let mut words: Vec<_> = world.objects.iter().map(|o| o.noun).collect();
    words.extend(world.vocab.with_tag(|t| t == Tag::Direction));
    words.sort();
    words.dedup();
    let actions = enumerate_actions(&world.templates, &words);

    let (start, _) = engine.reset(0);
    let mut reached = vec![false; world.rewards.len()];
    let mut seen = HashSet::new();
    let mut heap = BinaryHeap::new();
    // states live in `pool`; the heap orders indices, oldest first on ties
    let mut pool = vec![start];
    seen.insert(engine.state_hash(&pool[0]));
    heap.push((0usize, std::cmp::Reverse(0usize)));
    while let Some((_, std::cmp::Reverse(i))) = heap.pop() {
        let s = pool[i].clone();
        rep.states_searched += 1;
        for (i, f) in s.fired.iter().enumerate() {
            reached[i] |= *f;
        }
        if reached.iter().all(|r| *r) || rep.states_searched >= REACHABILITY_STATE_CAP {
            break;
        }
        if engine.is_done(&s) {
            continue;
        }
        for a in &actions {
            let Ok((mut next, _)) = engine.step(&s, a) else { continue };
            for (i, f) in next.fired.iter().enumerate() {
                reached[i] |= *f;
            }
            if !next.alive {
                continue;
            }
            next.steps = 0;
            if seen.insert(engine.state_hash(&next)) {
                let fired = next.fired.iter().filter(|f| **f).count();
                heap.push((fired, std::cmp::Reverse(pool.len())));
                pool.push(next);
            }
        }
    }
    for (i, r) in world.rewards.iter().enumerate() {
        if !reached[i] {
            rep.warnings
                .push(format!("reward {i} ({:?}, {} points) is unreachable", r.condition, r.points));
        }
    }
    rep.reachable = reached;
    rep
}

/// Plays `script` from reset and lists the admissible actions there.
pub fn oracle(engine: &Engine, script: &[String]) -> Result<Vec<String>, HarnessError> {
    let (mut state, _) = engine.reset(0);
    for line in script {
        let a = engine
            .parse(line)
            .map_err(|e| HarnessError::Config(format!("{line:?}: {e}")))?;
        state = engine
            .step(&state, &a)
            .map_err(|e| HarnessError::Fault(format!("{line:?}: {e}")))?
            .0;
    }
    admissible_actions(engine, &state)
        .iter()
        .map(|a: &TemplateAction| engine.render(a).map_err(|e| HarnessError::Fault(e.to_string())))
        .collect()
}
