//! Plain-text tables laid out task by model, one column per metric.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::study::{AblationTable, SweepPoint};
use super::task::{MetricSummary, TaskReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub task: String,
    pub model: String,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl TableRow {
    pub fn from_report(model: &str, report: &TaskReport) -> Self {
        Self {
            task: report.spec.kind.name().to_string(),
            model: model.to_string(),
            mean: report.mean,
            std: report.std,
        }
    }
}

fn cell(mean: f64, std: f64) -> String {
    format!("{mean:.3}±{std:.3}")
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out += &line(widths.iter().map(|&w| "-".repeat(w)).collect());
    for r in rows {
        out += &line(r.clone());
    }
    out
}

/// `| Task | Model | MCC | AUC | BA | F1-macro |` with `mean±std` cells.
pub fn metric_table(rows: &[TableRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.model.clone(),
                cell(r.mean.mcc, r.std.mcc),
                cell(r.mean.auc, r.std.auc),
                cell(r.mean.ba, r.std.ba),
                cell(r.mean.f1_macro, r.std.f1_macro),
            ]
        })
        .collect();
    render(&["Task", "Model", "MCC", "AUC", "BA", "F1-macro"], &body)
}

pub fn ablation_table(table: &AblationTable) -> String {
    let rows: Vec<TableRow> = table
        .rows
        .iter()
        .map(|(v, r)| TableRow::from_report(v.name(), r))
        .collect();
    metric_table(&rows)
}

/// Per-subtask values of one report, with skipped subtasks marked.
pub fn subtask_table(report: &TaskReport) -> String {
    let body: Vec<Vec<String>> = report
        .runs
        .iter()
        .map(|r| {
            let (mcc, auc) = match (&r.metrics, &r.skipped) {
                (Some(m), _) => (format!("{:.4}", m.mcc), format!("{:.4}", m.auc)),
                (None, Some(why)) => (format!("skipped: {why}"), String::new()),
                (None, None) => (String::new(), String::new()),
            };
            vec![
                r.train_upto.to_string(),
                r.seed.to_string(),
                r.test_edges.to_string(),
                mcc,
                auc,
            ]
        })
        .collect();
    render(&["t", "Seed", "Test edges", "MCC", "AUC"], &body)
}

pub fn sweep_table(parameter: &str, points: &[SweepPoint]) -> String {
    let body: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.value.to_string(),
                cell(p.mean.mcc, p.std.mcc),
                cell(p.mean.auc, p.std.auc),
            ]
        })
        .collect();
    render(&[parameter, "MCC", "AUC"], &body)
}

/// Free-form `key: value` lines, for summaries that are not tables.
pub fn key_values(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k}: {v}");
    }
    out
}
