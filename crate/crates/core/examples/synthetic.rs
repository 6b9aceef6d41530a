//! Runs one prediction task on a generated marketplace-like network.
//!
//! `cargo run --release --example synthetic -- [nodes] [events] [task] [variant] [attack|none] [seeds] [train-upto]`

use std::time::Instant;

use trustguard::attack::{AttackKind, AttackSpec};
use trustguard::eval::{run_task, TaskKind, TaskSpec};
use trustguard::model::Variant;
use trustguard::synth::{generate, SynthConfig};
use trustguard::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let nodes = args.first().map_or(Ok(600), |s| s.parse())?;
    let events = args.get(1).map_or(Ok(3000), |s| s.parse())?;
    let kind: TaskKind = args.get(2).map_or("single", String::as_str).parse()?;
    let variant: Variant = args.get(3).map_or("full", String::as_str).parse()?;
    let attack: Option<AttackKind> = args.get(4).filter(|s| *s != "none").map(|s| s.parse()).transpose()?;
    let seeds: u64 = args.get(5).map_or(Ok(5), |s| s.parse())?;
    let upto: Option<usize> = args.get(6).map(|s| s.parse()).transpose()?;

    let synth = generate(&SynthConfig {
        nodes,
        events,
        ..SynthConfig::default()
    })?;
    let graph = &synth.graph;
    println!("{} nodes, {} edges", graph.node_count(), graph.edges().len());

    let mut spec = match attack {
        Some(a) => TaskSpec::robustness(kind, Some(AttackSpec::new(a, 11))),
        None => TaskSpec::standard(kind),
    };
    spec.variant = variant;
    spec.seeds = (0..seeds).collect();
    if let Some(t) = upto {
        spec.train_upto = vec![t];
    }
    let start = Instant::now();
    let report = run_task(graph, &spec, &TrainConfig::default())?;
    println!(
        "{} / {}: MCC {:.4} ± {:.4}, AUC {:.4} ± {:.4}, BA {:.4}, F1 {:.4} in {:.1?}",
        kind.name(),
        variant,
        report.mean.mcc,
        report.std.mcc,
        report.mean.auc,
        report.std.auc,
        report.mean.ba,
        report.mean.f1_macro,
        start.elapsed()
    );
    for run in &report.runs {
        if let Some(c) = &run.coefficients {
            println!(
                "t={} seed={}: malicious {:?} benign {:?} ({} edges)",
                run.train_upto, run.seed, c.malicious_mean, c.benign_mean, c.malicious_count
            );
        }
    }
    Ok(())
}
