use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use grue_core::cells::Archive;
use grue_core::harness::{self, AgentKind, ExperimentConfig, RunRecord};
use grue_core::kg::Tracker;
use grue_core::{Engine, PolicyParams, WorldSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_FAULT: u8 = 3;

#[derive(Parser)]
#[command(name = "grue", version, about = "Exploration experiments on template-action text games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent over a list of seeds.
    Run(RunArgs),
    /// Continue training from a parameter checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Aggregate run records into a table and per-run curves.
    Report {
        /// Directory holding `*.run.json` files.
        #[arg(long, env = "GRUE_OUT_DIR", default_value = "grue-out")]
        dir: PathBuf,
        /// Where to write `table.csv` and the curves; defaults to `dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a world file and the reachability of every reward.
    Validate { world: PathBuf },
    /// List the admissible actions after a scripted play.
    Oracle {
        #[command(flatten)]
        script: Script,
    },
    /// Knowledge-graph tools.
    Kg {
        #[command(subcommand)]
        command: KgCommand,
    },
    /// Cell-archive tools.
    Archive {
        #[command(subcommand)]
        command: ArchiveCommand,
    },
}

#[derive(Subcommand)]
enum KgCommand {
    /// Print the graph after a scripted play.
    Dump {
        #[command(flatten)]
        script: Script,
    },
}

#[derive(Subcommand)]
enum ArchiveCommand {
    /// Print an archive checkpoint as a table.
    Inspect {
        file: PathBuf,
        /// World the archive was built on; MiniGrue by default.
        #[arg(long)]
        world: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Script {
    /// World file; MiniGrue by default.
    #[arg(long)]
    world: Option<PathBuf>,
    /// File with one command per line.
    #[arg(long, conflicts_with = "commands")]
    script: Option<PathBuf>,
    /// Commands, e.g. "open mailbox" "take leaflet".
    commands: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    agent: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    world: Option<PathBuf>,
    /// Any config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, env = "GRUE_OUT_DIR", default_value = "grue-out")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Invalid(String),
    Fault(anyhow::Error),
}

impl From<harness::HarnessError> for Failure {
    fn from(e: harness::HarnessError) -> Self {
        match e {
            harness::HarnessError::Config(m) => Failure::Usage(m),
            e @ harness::HarnessError::World(_) => Failure::Invalid(format!("error: {e}")),
            e => Failure::Fault(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Fault(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Invalid(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Fault(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAULT)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(args) => run(&args, None),
        Command::Resume { checkpoint, run: args } => {
            let p = PolicyParams::load(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            run(&args, Some(p))
        }
        Command::Report { dir, out } => {
            let records = harness::load_records(&dir)?;
            if records.is_empty() {
                return Err(Failure::Usage(format!("no run records in {}", dir.display())));
            }
            let rows = harness::write_report(&records, out.as_deref().unwrap_or(&dir))?;
            emit(&harness::report_csv(&rows))
        }
        Command::Validate { world } => {
            let doc = std::fs::read_to_string(&world)
                .with_context(|| format!("reading {}", world.display()))
                .map_err(|e| Failure::Invalid(format!("error: {e:#}")))?;
            let rep = harness::validate_world(&doc);
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            if rep.ok() {
                emit(&format!(
                    "{}: ok ({} of {} rewards reachable, {} states searched)\n",
                    world.display(),
                    rep.reachable.iter().filter(|r| **r).count(),
                    rep.reachable.len(),
                    rep.states_searched
                ))
            } else {
                let msg: Vec<_> = rep.errors.iter().map(|e| format!("error: {e}")).collect();
                Err(Failure::Invalid(msg.join("\n")))
            }
        }
        Command::Oracle { script } => {
            let (engine, lines) = load_script(&script)?;
            let mut text = String::new();
            for a in harness::oracle(&engine, &lines)? {
                text.push_str(&a);
                text.push('\n');
            }
            emit(&text)
        }
        Command::Kg {
            command: KgCommand::Dump { script },
        } => {
            let (engine, lines) = load_script(&script)?;
            let mut t = Tracker::reset(&engine, 0);
            for line in &lines {
                let a = engine
                    .parse(line)
                    .map_err(|e| Failure::Usage(format!("{line:?}: {e}")))?;
                t.step(&engine, &a).with_context(|| format!("{line:?}"))?;
            }
            emit(&t.kg.dump())
        }
        Command::Archive {
            command: ArchiveCommand::Inspect { file, world },
        } => {
            let engine = Engine::new(load_world(world.as_deref())?);
            let archive = Archive::load(&file).with_context(|| format!("loading {}", file.display()))?;
            emit(&archive.inspect(&engine))
        }
    }
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<(), Failure> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Fault(e.into())),
        _ => Ok(()),
    }
}

fn load_world(path: Option<&Path>) -> Result<WorldSpec, Failure> {
    match path {
        None => Ok(grue_core::fixtures::minigrue()),
        Some(p) => WorldSpec::load(p).map_err(|e| Failure::Invalid(format!("error: {}: {e}", p.display()))),
    }
}

fn load_script(s: &Script) -> Result<(Engine, Vec<String>), Failure> {
    let engine = Engine::new(load_world(s.world.as_deref())?);
    let lines = match &s.script {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect(),
        None => s.commands.clone(),
    };
    Ok((engine, lines))
}

fn config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let base = match &args.config {
        Some(p) => {
            let doc = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_toml(&doc).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let mut sets = Vec::new();
    if let Some(a) = &args.agent {
        if AgentKind::parse(a).is_none() {
            let names: Vec<_> = AgentKind::ALL.iter().map(|a| a.name()).collect();
            return Err(Failure::Usage(format!("unknown agent {a:?}; expected one of {}", names.join(", "))));
        }
        sets.push(format!("agent=\"{a}\""));
    }
    if let Some(s) = &args.seeds {
        sets.push(format!("seeds={s:?}"));
    }
    if let Some(b) = args.budget {
        sets.push(format!("step_budget={b}"));
    }
    if let Some(w) = &args.world {
        sets.push(format!("world={}", serde_json::to_string(&w.display().to_string()).expect("string")));
    }
    sets.extend(args.overrides.iter().cloned());
    let cfg = base
        .with_overrides(sets.iter().map(String::as_str))
        .map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn run(args: &RunArgs, initial: Option<PolicyParams>) -> Result<(), Failure> {
    let cfg = config(args)?;
    if let Some(w) = &cfg.world {
        load_world(Some(w))?;
    }
    let records = harness::run(&cfg, initial, Some(&args.out))?;
    summarize(&records)?;
    let faults: Vec<_> = records
        .iter()
        .filter_map(|r| r.fault.as_ref().map(|f| format!("seed {}: {f}", r.seed)))
        .collect();
    if !faults.is_empty() {
        return Err(Failure::Fault(anyhow!("{} run(s) faulted:\n{}", faults.len(), faults.join("\n"))));
    }
    Ok(())
}

fn summarize(records: &[RunRecord]) -> Result<(), Failure> {
    use std::fmt::Write as _;
    let mut text = String::from("agent,seed,episodes,max_score,asymptotic,termination\n");
    for r in records {
        let _ = writeln!(
            text,
            "{},{},{},{},{:.3},{}",
            r.agent,
            r.seed,
            r.series.len(),
            r.max_score,
            r.asymptotic,
            r.termination
        );
        eprintln!("{} seed {}: {} ms", r.agent, r.seed, r.wall_clock_ms);
    }
    emit(&text)
}
