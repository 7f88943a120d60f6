//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use grue_core::agent::Variant;
use grue_core::harness::{self, AgentKind, ExperimentConfig, ReportRow};

use common::Check;

/// Runs the six-agent matrix with the default configuration: MiniGrue, five
/// seeds, 50,000 steps each.
fn ablation() -> Result<Vec<ReportRow>, String> {
    let mut records = Vec::new();
    for agent in AgentKind::ALL {
        let cfg = ExperimentConfig {
            agent,
            ..ExperimentConfig::default()
        };
        let runs = harness::run(&cfg, None, None).map_err(|e| e.to_string())?;
        if let Some(f) = runs.iter().find_map(|r| r.fault.clone()) {
            return Err(format!("{} faulted: {f}", agent.name()));
        }
        records.extend(runs);
    }
    let rows = harness::report(&records);
    print!("{}", harness::report_csv(&rows));
    Ok(rows)
}

fn row(rows: &[ReportRow], agent: AgentKind) -> &ReportRow {
    rows.iter().find(|r| r.agent == agent).expect("every agent reported")
}

fn passage(rows: &[ReportRow]) -> Check {
    let passes = |a| (row(rows, a).pass_rate * row(rows, a).runs as f64).round() as usize;
    let (kc, ke, plain) = (
        passes(AgentKind::KgA2cChained),
        passes(AgentKind::KgA2cExplore),
        passes(AgentKind::A2c),
    );
    let summary = format!("kg-a2c-chained {kc}/5, kg-a2c-explore {ke}/5, a2c {plain}/5");
    if kc >= 4 && ke >= 4 && plain <= 1 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn ordering(rows: &[ReportRow]) -> Check {
    let mean = |a| row(rows, a).mean;
    let chained = mean(AgentKind::KgA2cChained) - mean(AgentKind::A2cChained);
    let explore = mean(AgentKind::KgA2cExplore) - mean(AgentKind::A2cExplore);
    let summary = format!("chained gap {chained:.2}, explore gap {explore:.2}");
    if chained > 1.0 && explore > 1.0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn both(a: Check, b: Check) -> Check {
    match (a, b) {
        (Ok(x), Ok(y)) => Ok(format!("{x}; {y}")),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let rows = ablation();
    let experiment = |f: fn(&[ReportRow]) -> Check| rows.as_deref().map_err(Clone::clone).and_then(f);
    let results: Vec<(&str, Check)> = vec![
        ("bottleneck passage", experiment(passage)),
        ("ablation ordering", experiment(ordering)),
        ("admissible oracle", common::check_admissible()),
        ("graph walkthrough", common::check_kg_golden()),
        ("gradient check", common::check_gradients(100)),
        (
            "determinism and replay",
            both(
                common::check_random_sequences(100),
                both(
                    common::check_cell_replay(Variant::WithKg, 10_000, 0),
                    common::check_cell_replay(Variant::TextOnly, 10_000, 0),
                ),
            ),
        ),
        (
            "chaining invariants",
            both(common::check_dead_end(0), common::check_anchor_and_freeze(0, 20_000)),
        ),
        ("action-space size", common::check_action_space()),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(s) => println!("criterion {} PASS {name}: {s}", i + 1),
            Err(s) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {s}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed in {:.0}s", results.len() - failed, results.len(), t0.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
