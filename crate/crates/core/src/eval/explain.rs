//! Explanation bundles: robust-coefficient distributions, attention trends
//! over time and the paths behind a single prediction.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::task::mean;
use crate::attack::InjectionReport;
use crate::error::{Error, Result};
use crate::graph::{NodeId, Snapshot};
use crate::spatial::Role;
use crate::temporal::{decay_weights, TemporalMode};
use crate::train::TrainedModel;

/// Upper bound on enumerated paths per snapshot.
pub const MAX_PATHS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSample {
    pub defense: bool,
    pub malicious: bool,
    pub snapshot: usize,
    pub layer: usize,
    pub role: Role,
    pub source: NodeId,
    pub target: NodeId,
    pub coefficient: f64,
}

/// Keys `(snapshot index, source, target)` of injected malicious edges that
/// landed in `snapshots`.
pub fn malicious_keys(snapshots: &[Snapshot], injection: Option<&InjectionReport>) -> BTreeSet<(usize, NodeId, NodeId)> {
    injection
        .iter()
        .flat_map(|r| r.injected.iter())
        .filter(|e| e.malicious && e.position < snapshots.len())
        .map(|e| (snapshots[e.position].index, e.edge.source, e.edge.target))
        .collect()
}

/// Every recorded coefficient of `model`, flagged malicious when it belongs
/// to an injected malicious edge.
pub fn coefficient_samples(
    model: &TrainedModel,
    snapshots: &[Snapshot],
    injection: Option<&InjectionReport>,
) -> Vec<CoefficientSample> {
    let keys = malicious_keys(snapshots, injection);
    let defense = model.config.model.spatial.defense_enabled;
    model
        .coefficients
        .iter()
        .map(|r| CoefficientSample {
            defense,
            malicious: keys.contains(&(r.snapshot, r.source, r.target)),
            snapshot: r.snapshot,
            layer: r.layer,
            role: r.role,
            source: r.source,
            target: r.target,
            coefficient: r.coefficient,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub defense: bool,
    pub malicious: bool,
    pub count: usize,
    /// `None` for an empty group.
    pub mean: Option<f64>,
}

/// Means of trustee-role coefficients, where an injected rating weighs on
/// its victim, grouped by (defense, malicious).
pub fn summarize_coefficients(samples: &[CoefficientSample]) -> Vec<CoefficientSummary> {
    let mut out = Vec::new();
    for defense in [true, false] {
        for malicious in [true, false] {
            let vals: Vec<f64> = samples
                .iter()
                .filter(|s| s.defense == defense && s.malicious == malicious && s.role == Role::Trustee)
                .map(|s| s.coefficient)
                .collect();
            if samples.iter().any(|s| s.defense == defense) {
                out.push(CoefficientSummary {
                    defense,
                    malicious,
                    count: vals.len(),
                    mean: (!vals.is_empty()).then(|| mean(&vals)),
                });
            }
        }
    }
    out
}

pub fn write_coefficients_csv<W: Write>(samples: &[CoefficientSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "defense,malicious,snapshot,layer,role,source,target,coefficient")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.defense,
            s.malicious,
            s.snapshot,
            s.layer,
            s.role.as_str(),
            s.source,
            s.target,
            s.coefficient
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrend {
    /// 0-based position in the training sequence.
    pub timeslot: usize,
    pub snapshot: usize,
    /// Mean over nodes and heads; the fixed weight for non-attentive
    /// temporal variants.
    pub mean_score: f64,
    pub interactions: usize,
}

/// One row per training snapshot.
pub fn attention_trend(model: &TrainedModel, snapshots: &[Snapshot]) -> Result<Vec<AttentionTrend>> {
    let n = snapshots.len();
    let temporal = &model.config.model.temporal;
    let scores = match temporal.mode {
        TemporalMode::Attention => {
            let mut sum = vec![0.0; n];
            let mut count = vec![0usize; n];
            for r in &model.attention {
                if r.timeslot >= n {
                    return Err(Error::config("attention records do not match the snapshot sequence"));
                }
                sum[r.timeslot] += r.score;
                count[r.timeslot] += 1;
            }
            sum.iter()
                .zip(&count)
                .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
                .collect()
        }
        TemporalMode::Mean => vec![1.0 / n as f64; n],
        TemporalMode::Decay => decay_weights(n, temporal.decay_tau)?,
    };
    Ok(snapshots
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (s, score))| AttentionTrend {
            timeslot: i,
            snapshot: s.index,
            mean_score: score,
            interactions: s.edges().len(),
        })
        .collect())
}

pub fn write_attention_csv<W: Write>(rows: &[AttentionTrend], mut out: W) -> std::io::Result<()> {
    writeln!(out, "timeslot,snapshot,mean_score,interactions")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.timeslot, r.snapshot, r.mean_score, r.interactions)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEdge {
    pub source: NodeId,
    pub target: NodeId,
    pub level: usize,
    /// Weight of `target` in `source`'s trustor aggregation, averaged over
    /// layers.
    pub trustor_coefficient: Option<f64>,
    /// Weight of `source` in `target`'s trustee aggregation, averaged over
    /// layers.
    pub trustee_coefficient: Option<f64>,
    /// Mean attention, over heads, that `source` pays to this snapshot.
    pub attention: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainedPath {
    pub snapshot: usize,
    pub timeslot: usize,
    pub edges: Vec<PathEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairExplanation {
    pub trustor: NodeId,
    pub trustee: NodeId,
    pub probabilities: Vec<f64>,
    pub predicted_level: usize,
    pub paths: Vec<ExplainedPath>,
}

impl PairExplanation {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

fn simple_paths(snapshot: &Snapshot, from: NodeId, to: NodeId, max_hops: usize) -> Vec<Vec<usize>> {
    fn walk(
        s: &Snapshot,
        at: NodeId,
        to: NodeId,
        left: usize,
        seen: &mut Vec<NodeId>,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if out.len() >= MAX_PATHS {
            return;
        }
        if at == to && !path.is_empty() {
            out.push(path.clone());
            return;
        }
        if left == 0 {
            return;
        }
        for &e in s.out_edges(at) {
            let next = s.edges()[e].target;
            if seen.contains(&next) {
                continue;
            }
            seen.push(next);
            path.push(e);
            walk(s, next, to, left - 1, seen, path, out);
            path.pop();
            seen.pop();
        }
    }
    let mut out = Vec::new();
    if !snapshot.contains_node(from) || !snapshot.contains_node(to) {
        return out;
    }
    walk(snapshot, from, to, max_hops, &mut vec![from], &mut Vec::new(), &mut out);
    out
}

/// Directed paths of at most L hops from `trustor` to `trustee` in every
/// training snapshot, annotated with robust coefficients and attention.
/// No path yields an empty explanation.
pub fn explain_pair(
    model: &TrainedModel,
    snapshots: &[Snapshot],
    trustor: NodeId,
    trustee: NodeId,
) -> Result<PairExplanation> {
    if trustor >= model.node_count() || trustee >= model.node_count() {
        return Err(Error::config(format!(
            "pair ({trustor}, {trustee}) is outside the {} known nodes",
            model.node_count()
        )));
    }
    let prediction = model.predict(&[(trustor, trustee)])?.remove(0);
    let mut coef: HashMap<(usize, Role, NodeId, NodeId), (f64, usize)> = HashMap::new();
    for r in &model.coefficients {
        let e = coef.entry((r.snapshot, r.role, r.source, r.target)).or_default();
        e.0 += r.coefficient;
        e.1 += 1;
    }
    let mut attention: HashMap<(NodeId, usize), (f64, usize)> = HashMap::new();
    for r in &model.attention {
        let e = attention.entry((r.node, r.timeslot)).or_default();
        e.0 += r.score;
        e.1 += 1;
    }
    let avg = |v: Option<&(f64, usize)>| v.map(|&(s, c)| s / c as f64);
    let hops = model.config.model.spatial.layer_dims.len();
    let mut paths = Vec::new();
    for (timeslot, s) in snapshots.iter().enumerate() {
        for path in simple_paths(s, trustor, trustee, hops) {
            let edges = path
                .iter()
                .map(|&i| {
                    let e = s.edges()[i];
                    PathEdge {
                        source: e.source,
                        target: e.target,
                        level: e.level,
                        trustor_coefficient: avg(coef.get(&(s.index, Role::Trustor, e.source, e.target))),
                        trustee_coefficient: avg(coef.get(&(s.index, Role::Trustee, e.source, e.target))),
                        attention: avg(attention.get(&(e.source, timeslot))),
                    }
                })
                .collect();
            paths.push(ExplainedPath {
                snapshot: s.index,
                timeslot,
                edges,
            });
        }
    }
    Ok(PairExplanation {
        trustor,
        trustee,
        probabilities: prediction.probabilities,
        predicted_level: prediction.predicted_level,
        paths,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_pair_csv<W: Write>(explanation: &PairExplanation, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "path,snapshot,hop,source,target,level,trustor_coefficient,trustee_coefficient,attention"
    )?;
    for (p, path) in explanation.paths.iter().enumerate() {
        for (h, e) in path.edges.iter().enumerate() {
            writeln!(
                out,
                "{p},{},{h},{},{},{},{},{},{}",
                path.snapshot,
                e.source,
                e.target,
                e.level,
                opt(e.trustor_coefficient),
                opt(e.trustee_coefficient),
                opt(e.attention)
            )?;
        }
    }
    Ok(())
}
