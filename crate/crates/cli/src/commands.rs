use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::json;
use trustguard::eval::explain::{
    attention_trend, coefficient_samples, explain_pair, summarize_coefficients, write_attention_csv,
    write_coefficients_csv, write_pair_csv,
};
use trustguard::eval::report::{ablation_table, metric_table, subtask_table, sweep_table, TableRow};
use trustguard::eval::task::run_config;
use trustguard::eval::{
    evaluate as score, prepare_subtask, run_ablation, run_task, sensitivity_sweep, SweepParameter, TaskReport,
};
use trustguard::graph::{
    edge_homophily_ratio, label_nodes, load_edge_list, segment, write_edge_list, write_snapshot_manifest,
    DynamicGraph, Label, NodeId, Snapshot,
};
use trustguard::model::Variant;
use trustguard::synth::{generate, SynthConfig};
use trustguard::train::train as fit;
use trustguard::{Error, Result};

use crate::config::{resolve, CommonArgs, RunConfig};

fn json_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn load(config: &RunConfig) -> Result<(DynamicGraph, Vec<Snapshot>)> {
    let graph = load_edge_list(config.dataset()?, &config.scheme()?)?;
    let snapshots = segment(&graph, config.task.snapshot_count, config.task.segmentation)?;
    info!(
        "{} nodes, {} edges in {} snapshots",
        graph.node_count(),
        graph.edges().len(),
        snapshots.len()
    );
    Ok((graph, snapshots))
}

/// Creates `<out>/<command>` and writes the manifest there.
fn start(config: &RunConfig, command: &str, extra: serde_json::Value) -> Result<PathBuf> {
    let dir = config.out.join(command);
    fs::create_dir_all(&dir)?;
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "arguments": extra,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(json_err)?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn emit(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    print!("{text}");
    Ok(())
}

pub fn ingest(args: &CommonArgs) -> Result<()> {
    let config = resolve(args, true)?;
    let (graph, snapshots) = load(&config)?;
    let dir = start(&config, "ingest", json!({}))?;
    let mut out = create(&dir.join("snapshots.csv"))?;
    write_snapshot_manifest(&snapshots, &mut out)?;
    out.flush()?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "nodes": graph.node_count(),
            "edges": graph.edges().len(),
            "level_counts": graph.level_counts(),
            "time_span": graph.time_span(),
            "snapshots": snapshots.len(),
        }),
    )?;
    println!(
        "{} nodes, {} edges, {} snapshots -> {}",
        graph.node_count(),
        graph.edges().len(),
        snapshots.len(),
        dir.display()
    );
    Ok(())
}

/// The last requested training length and the first seed.
fn single_run(config: &RunConfig) -> (usize, u64) {
    let t = config.task.train_upto.iter().copied().max().unwrap_or(2);
    (t, config.task.seeds[0])
}

pub fn train(args: &CommonArgs) -> Result<()> {
    let config = resolve(args, true)?;
    let (graph, snapshots) = load(&config)?;
    let (t, seed) = single_run(&config);
    let dir = start(&config, "train", json!({ "train_upto": t, "seed": seed }))?;
    let prepared = prepare_subtask(&graph, &snapshots, &config.task, t, seed)?;
    let run = run_config(&config.train, &config.task, t, seed);
    let model = fit(&prepared.train_snapshots, prepared.node_count, &run)?;
    let mut out = create(&dir.join("checkpoint.bin"))?;
    model.write_checkpoint(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("history.jsonl"))?;
    model.write_history(&mut out)?;
    out.flush()?;
    if !prepared.test_edges.is_empty() {
        let pairs: Vec<(NodeId, NodeId)> = prepared.test_edges.iter().map(|e| (e.source, e.target)).collect();
        let truths: Vec<usize> = prepared.test_edges.iter().map(|e| e.level).collect();
        match score(&model.predict(&pairs)?, &truths, graph.scheme().cardinality()) {
            Ok(m) => {
                write_json(&dir.join("test_metrics.json"), &m)?;
                println!("test MCC {:.4}, AUC {:.4}", m.mcc, m.auc);
            }
            Err(e) => log::warn!("test metrics unavailable: {e}"),
        }
    }
    println!(
        "trained {} epochs on {} snapshots -> {}",
        model.history.len(),
        t,
        dir.display()
    );
    Ok(())
}

fn write_report(dir: &Path, report: &TaskReport, model: &str) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    fs::write(dir.join("subtasks.txt"), subtask_table(report))?;
    emit(dir, "table.txt", &metric_table(&[TableRow::from_report(model, report)]))
}

pub fn evaluate(args: &CommonArgs) -> Result<()> {
    let config = resolve(args, true)?;
    let (graph, _) = load(&config)?;
    let dir = start(&config, "evaluate", json!({}))?;
    let report = run_task(&graph, &config.task, &config.train)?;
    write_report(&dir, &report, config.task.variant.name())
}

pub fn attack(args: &CommonArgs) -> Result<()> {
    let mut config = resolve(args, true)?;
    let Some(attack) = config.task.attack.clone() else {
        return Err(Error::config("no attack selected (use --attack bad, good or onoff)"));
    };
    let (graph, snapshots) = load(&config)?;
    let dir = start(&config, "attack", json!({}))?;
    let settings: Vec<bool> = match args.defense {
        Some(d) => vec![d == crate::config::Switch::On],
        None => vec![true, false],
    };

    let (t, seed) = single_run(&config);
    let prepared = prepare_subtask(&graph, &snapshots, &config.task, t, seed)?;
    if let Some(report) = &prepared.injection {
        let mut sequence = snapshots[..t].to_vec();
        sequence.extend_from_slice(&snapshots[t..t + config.task.test_span()]);
        let mut out = create(&dir.join("injected.csv"))?;
        report.write_csv(&sequence, &mut out)?;
        out.flush()?;
    }

    let mut rows = Vec::new();
    let mut shifts = Vec::new();
    for defense in settings {
        config.train.model.spatial.defense_enabled = defense;
        let report = run_task(&graph, &config.task, &config.train)?;
        let name = if defense { "defense-on" } else { "defense-off" };
        write_json(&dir.join(format!("report-{name}.json")), &report)?;
        let malicious: Vec<f64> = report
            .runs
            .iter()
            .filter_map(|r| r.coefficients.and_then(|c| c.malicious_mean))
            .collect();
        shifts.push((name, trustguard::eval::task::mean(&malicious)));
        rows.push(TableRow::from_report(name, &report));
    }
    let mut text = format!("attack: {:?}\n", attack.kind);
    text += &metric_table(&rows);
    for (name, m) in &shifts {
        text += &format!("mean malicious-edge coefficient, {name}: {m:.4}\n");
    }
    if let [(_, on), (_, off)] = shifts.as_slice() {
        text += &format!("relative reduction: {:.2}%\n", 100.0 * (off - on) / off);
    }
    emit(&dir, "table.txt", &text)
}

pub fn ablate(args: &CommonArgs, variants: Option<Vec<Variant>>) -> Result<()> {
    let config = resolve(args, true)?;
    let variants = variants.unwrap_or_else(|| Variant::ALL.to_vec());
    let (graph, _) = load(&config)?;
    let names: Vec<&str> = variants.iter().map(|v| v.name()).collect();
    let dir = start(&config, "ablate", json!({ "variants": names }))?;
    let table = run_ablation(&graph, &config.task, &variants, &config.train)?;
    write_json(&dir.join("report.json"), &table)?;
    let mut out = create(&dir.join("paired.csv"))?;
    writeln!(out, "variant,train_upto,seed,mcc,auc,split_hash")?;
    for (v, r) in &table.rows {
        for run in &r.runs {
            if let Some(m) = &run.metrics {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    v.name(),
                    run.train_upto,
                    run.seed,
                    m.mcc,
                    m.auc,
                    run.split_hash
                )?;
            }
        }
    }
    out.flush()?;
    if !table.splits_match() {
        log::warn!("variants did not share identical splits");
    }
    emit(&dir, "table.txt", &ablation_table(&table))
}

pub fn sweep(args: &CommonArgs, parameter: SweepParameter, values: &[f64]) -> Result<()> {
    let config = resolve(args, true)?;
    let (graph, _) = load(&config)?;
    let dir = start(
        &config,
        "sweep",
        json!({ "parameter": parameter.name(), "values": values }),
    )?;
    let points = sensitivity_sweep(&graph, parameter, values, &config.task, &config.train)?;
    let mut out = create(&dir.join("sweep.csv"))?;
    writeln!(out, "{},mcc,mcc_std,auc,auc_std", parameter.name())?;
    for p in &points {
        writeln!(out, "{},{},{},{},{}", p.value, p.mean.mcc, p.std.mcc, p.mean.auc, p.std.auc)?;
    }
    out.flush()?;
    emit(&dir, "table.txt", &sweep_table(parameter.name(), &points))
}

pub fn explain(args: &CommonArgs, pair: Option<Vec<i64>>) -> Result<()> {
    let mut config = resolve(args, true)?;
    let (graph, snapshots) = load(&config)?;
    let pair = match pair.as_deref() {
        None => None,
        Some(&[u, v]) => {
            let find = |raw| {
                graph
                    .node_of(raw)
                    .ok_or_else(|| Error::config(format!("node {raw} does not occur in the dataset")))
            };
            Some((find(u)?, find(v)?))
        }
        Some(_) => return Err(Error::config("--pair takes exactly two ids, `u,v`")),
    };
    let (t, seed) = single_run(&config);
    let dir = start(
        &config,
        "explain",
        json!({ "train_upto": t, "seed": seed, "pair": pair.map(|(u, v)| (graph.raw_id(u), graph.raw_id(v))) }),
    )?;
    let prepared = prepare_subtask(&graph, &snapshots, &config.task, t, seed)?;

    let mut samples = Vec::new();
    let mut primary = None;
    let requested = config.train.model.spatial.defense_enabled;
    for defense in [requested, !requested] {
        config.train.model.spatial.defense_enabled = defense;
        let run = run_config(&config.train, &config.task, t, seed);
        let model = fit(&prepared.train_snapshots, prepared.node_count, &run)?;
        samples.extend(coefficient_samples(
            &model,
            &prepared.train_snapshots,
            prepared.injection.as_ref(),
        ));
        if primary.is_none() {
            primary = Some(model);
        }
    }
    let model = primary.expect("trained above");
    let mut out = create(&dir.join("coefficients.csv"))?;
    write_coefficients_csv(&samples, &mut out)?;
    out.flush()?;
    let summary = summarize_coefficients(&samples);
    write_json(&dir.join("coefficient_summary.json"), &summary)?;

    let trend = attention_trend(&model, &prepared.train_snapshots)?;
    let mut out = create(&dir.join("attention.csv"))?;
    write_attention_csv(&trend, &mut out)?;
    out.flush()?;

    let mut text = String::new();
    for s in &summary {
        text += &format!(
            "defense {}, {} edges: n={}, mean coefficient {}\n",
            if s.defense { "on" } else { "off" },
            if s.malicious { "malicious" } else { "benign" },
            s.count,
            s.mean.map_or_else(|| "-".into(), |m| format!("{m:.4}"))
        );
    }
    for r in &trend {
        text += &format!(
            "timeslot {}: mean attention {:.4}, {} interactions\n",
            r.timeslot, r.mean_score, r.interactions
        );
    }
    if let Some((u, v)) = pair {
        let explanation = explain_pair(&model, &prepared.train_snapshots, u, v)?;
        write_json(&dir.join("pair.json"), &explanation)?;
        let mut out = create(&dir.join("pair.csv"))?;
        write_pair_csv(&explanation, &mut out)?;
        out.flush()?;
        text += &format!(
            "pair ({}, {}): predicted level {} with probabilities {:?}, {} paths\n",
            graph.raw_id(u),
            graph.raw_id(v),
            explanation.predicted_level,
            explanation.probabilities,
            explanation.paths.len()
        );
    }
    emit(&dir, "summary.txt", &text)
}

pub fn homophily(args: &CommonArgs) -> Result<()> {
    let config = resolve(args, true)?;
    let graph = load_edge_list(config.dataset()?, &config.scheme()?)?;
    let labels = label_nodes(graph.edges(), graph.scheme())?;
    let ratio = edge_homophily_ratio(graph.edges(), &labels)?;
    let good = labels.iter().filter(|l| l.label == Label::Good).count();
    let dir = start(&config, "homophily", json!({}))?;
    write_json(
        &dir.join("homophily.json"),
        &json!({ "ratio": ratio, "good": good, "bad": labels.len() - good, "edges": graph.edges().len() }),
    )?;
    println!("edge homophily ratio: {ratio:.4} ({good} good, {} bad nodes)", labels.len() - good);
    Ok(())
}

pub fn synth(nodes: usize, events: usize, seed: u64, file: &Path) -> Result<()> {
    let g = generate(&SynthConfig {
        nodes,
        events,
        seed,
        ..SynthConfig::default()
    })?;
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut out = create(file)?;
    write_edge_list(&g.graph, &mut out)?;
    out.flush()?;
    println!(
        "{} nodes, {} edges -> {}",
        g.graph.node_count(),
        g.graph.edges().len(),
        file.display()
    );
    Ok(())
}
