use std::collections::BTreeSet;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::explain::malicious_keys;
use super::metrics::{evaluate, Metrics};
use crate::attack::{self, AttackContext, AttackSpec, InjectionReport};
use crate::error::{Error, Result};
use crate::graph::{label_nodes, segment, DynamicGraph, NodeId, Segmentation, Snapshot, TrustEdge};
use crate::model::Variant;
use crate::spatial::Role;
use crate::train::{train, TrainConfig, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Next snapshot, edges between nodes seen in training.
    SingleObserved,
    /// The next `horizon` snapshots, edges between nodes seen in training.
    MultiObserved,
    /// Next snapshot, edges touching at least one node unseen in training.
    SingleUnobserved,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Self::SingleObserved),
            "multi" => Ok(Self::MultiObserved),
            "unobserved" => Ok(Self::SingleUnobserved),
            other => Err(format!("unknown task `{other}` (expected single, multi or unobserved)")),
        }
    }
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SingleObserved => "single",
            TaskKind::MultiObserved => "multi",
            TaskKind::SingleUnobserved => "unobserved",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub snapshot_count: usize,
    pub segmentation: Segmentation,
    /// Training lengths to evaluate; each is one subtask.
    pub train_upto: Vec<usize>,
    /// Number of test snapshots for [`TaskKind::MultiObserved`].
    pub horizon: usize,
    pub attack: Option<AttackSpec>,
    pub variant: Variant,
    pub seeds: Vec<u64>,
}

impl TaskSpec {
    /// Every admissible training length for `kind` over ten snapshots, five
    /// seeds, full model.
    pub fn standard(kind: TaskKind) -> Self {
        let mut spec = Self {
            kind,
            snapshot_count: 10,
            segmentation: Segmentation::Time,
            train_upto: Vec::new(),
            horizon: if kind == TaskKind::MultiObserved { 3 } else { 1 },
            attack: None,
            variant: Variant::Full,
            seeds: (0..5).collect(),
        };
        spec.train_upto = spec.all_subtasks();
        spec
    }

    /// Training on the first seven snapshots, as in the robustness runs.
    pub fn robustness(kind: TaskKind, attack: Option<AttackSpec>) -> Self {
        Self {
            train_upto: vec![7],
            attack,
            ..Self::standard(kind)
        }
    }

    pub fn test_span(&self) -> usize {
        if self.kind == TaskKind::MultiObserved {
            self.horizon
        } else {
            1
        }
    }

    /// `t = 2 ..= n - span`.
    pub fn all_subtasks(&self) -> Vec<usize> {
        let last = self.snapshot_count.saturating_sub(self.test_span());
        (2..=last).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.snapshot_count < 3 {
            return Err(Error::config("at least three snapshots are required"));
        }
        if self.test_span() == 0 {
            return Err(Error::config("horizon must be at least one"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.train_upto.is_empty() {
            return Err(Error::config("no training lengths given"));
        }
        for &t in &self.train_upto {
            if t < 2 || t + self.test_span() > self.snapshot_count {
                return Err(Error::config(format!(
                    "training length {t} with {} test snapshots does not fit in {} snapshots",
                    self.test_span(),
                    self.snapshot_count
                )));
            }
        }
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        Ok(())
    }
}

/// Summary values of the four metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mcc: f64,
    pub auc: f64,
    pub ba: f64,
    pub f1_macro: f64,
}

impl MetricSummary {
    fn of(m: &Metrics) -> Self {
        Self {
            mcc: m.mcc,
            auc: m.auc,
            ba: m.ba,
            f1_macro: m.f1_macro,
        }
    }

    fn map(values: &[Self], f: impl Fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&Self) -> f64| f(&values.iter().map(g).collect::<Vec<_>>());
        Self {
            mcc: col(|m| m.mcc),
            auc: col(|m| m.auc),
            ba: col(|m| m.ba),
            f1_macro: col(|m| m.f1_macro),
        }
    }

    pub fn mean(values: &[Self]) -> Self {
        Self::map(values, mean)
    }

    /// Sample standard deviation (0 for fewer than two values).
    pub fn std(values: &[Self]) -> Self {
        Self::map(values, sample_std)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Mean robust coefficients of injected and original edges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoefficientShift {
    pub malicious_mean: Option<f64>,
    pub benign_mean: Option<f64>,
    pub malicious_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub train_upto: usize,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    /// Why the subtask produced no metrics.
    pub skipped: Option<String>,
    pub train_edges: usize,
    pub test_edges: usize,
    /// Digest of the training and test edge sets.
    pub split_hash: String,
    pub epochs: usize,
    pub coefficients: Option<CoefficientShift>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub spec: TaskSpec,
    pub runs: Vec<SubtaskResult>,
    /// Per seed, the uniform mean over that seed's subtasks.
    pub per_seed: Vec<(u64, MetricSummary)>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl TaskReport {
    pub fn skipped(&self) -> impl Iterator<Item = &SubtaskResult> {
        self.runs.iter().filter(|r| r.skipped.is_some())
    }
}

/// splitmix64 finalizer, used to derive independent per-run seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything a single subtask trains and tests on.
#[derive(Clone, Debug)]
pub struct PreparedSubtask {
    pub train_upto: usize,
    /// Training snapshots, after any injection (merged into one for the
    /// static variant).
    pub train_snapshots: Vec<Snapshot>,
    pub test_edges: Vec<TrustEdge>,
    pub node_count: usize,
    /// Positions refer to the attacked sequence; for the static variant,
    /// training positions are folded onto the merged snapshot.
    pub injection: Option<InjectionReport>,
    pub split_hash: String,
    pub observed: BTreeSet<NodeId>,
}

fn split_hash(train: &[Snapshot], test: &[TrustEdge]) -> String {
    let mut h = Sha256::new();
    for s in train {
        h.update((s.index as u64).to_le_bytes());
        for e in s.edges() {
            let (a, b, c, d) = e.key();
            for x in [a as u64, b as u64, c as u64, d] {
                h.update(x.to_le_bytes());
            }
        }
    }
    h.update(b"test");
    for e in test {
        let (a, b, c, d) = e.key();
        for x in [a as u64, b as u64, c as u64, d] {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the train/test split for training length `t`, injecting the
/// spec's attack if any. `seed` feeds the attack.
pub fn prepare_subtask(
    graph: &DynamicGraph,
    snapshots: &[Snapshot],
    spec: &TaskSpec,
    t: usize,
    seed: u64,
) -> Result<PreparedSubtask> {
    let span = spec.test_span();
    if t < 2 || t + span > snapshots.len() {
        return Err(Error::config(format!("training length {t} does not fit {} snapshots", snapshots.len())));
    }
    let train_part = &snapshots[..t];
    let test_part = &snapshots[t..t + span];
    let observed: BTreeSet<NodeId> = train_part.iter().flat_map(|s| s.nodes().iter().copied()).collect();
    let test_edges: Vec<TrustEdge> = test_part
        .iter()
        .flat_map(|s| s.edges().iter().copied())
        .filter(|e| !e.is_self_loop())
        .filter(|e| {
            let seen = observed.contains(&e.source) && observed.contains(&e.target);
            match spec.kind {
                TaskKind::SingleObserved | TaskKind::MultiObserved => seen,
                TaskKind::SingleUnobserved => !seen,
            }
        })
        .collect();
    let hash = split_hash(train_part, &test_edges);

    let mut train_snapshots = train_part.to_vec();
    let mut node_count = graph.node_count();
    let mut injection = None;
    if let Some(attack_spec) = &spec.attack {
        let labels = label_nodes(graph.edges(), graph.scheme())?;
        let mut degrees = vec![0usize; node_count];
        for e in train_part.iter().flat_map(|s| s.edges()) {
            degrees[e.source] += 1;
            degrees[e.target] += 1;
        }
        let mut region: Vec<NodeId> = test_edges.iter().flat_map(|e| [e.source, e.target]).collect();
        region.sort_unstable();
        region.dedup();
        let ctx = AttackContext {
            labels: &labels,
            region: &region,
            degrees: &degrees,
            node_count,
            levels: graph.scheme().cardinality(),
        };
        let mut a = attack_spec.clone();
        a.seed = mix(attack_spec.seed, mix(seed, t as u64));
        // the sequence seen by the attack is training followed by test
        let mut sequence = train_part.to_vec();
        sequence.extend_from_slice(test_part);
        let test_positions: Vec<usize> = (t..t + span).collect();
        let (attacked, report) = attack::inject(&sequence, &test_positions, &ctx, &a)?;
        train_snapshots = attacked[..t].to_vec();
        node_count = report.node_count;
        injection = Some(report);
    }
    if spec.variant == Variant::StaticMean {
        train_snapshots = vec![Snapshot::merged(0, &train_snapshots)];
        if let Some(report) = &mut injection {
            for e in &mut report.injected {
                if e.position < t {
                    e.position = 0;
                }
            }
        }
    }
    Ok(PreparedSubtask {
        train_upto: t,
        train_snapshots,
        test_edges,
        node_count,
        injection,
        split_hash: hash,
        observed,
    })
}

/// Mean trustee-role coefficient of injected malicious edges and of all
/// other edges in the training snapshots.
pub fn coefficient_shift(model: &TrainedModel, prepared: &PreparedSubtask) -> CoefficientShift {
    let malicious = malicious_keys(&prepared.train_snapshots, prepared.injection.as_ref());
    let mut mal = Vec::new();
    let mut benign = Vec::new();
    for r in model.coefficients.iter().filter(|r| r.role == Role::Trustee) {
        if malicious.contains(&(r.snapshot, r.source, r.target)) {
            mal.push(r.coefficient);
        } else {
            benign.push(r.coefficient);
        }
    }
    CoefficientShift {
        malicious_mean: (!mal.is_empty()).then(|| mean(&mal)),
        benign_mean: (!benign.is_empty()).then(|| mean(&benign)),
        malicious_count: mal.len(),
    }
}

/// Per-run training configuration: the variant applied and the seed mixed
/// with the run coordinates.
pub fn run_config(base: &TrainConfig, spec: &TaskSpec, t: usize, seed: u64) -> TrainConfig {
    let mut config = base.clone();
    spec.variant.apply(&mut config.model);
    config.seed = mix(seed, t as u64);
    config
}

/// Trains and evaluates one (training length, seed) pair.
pub fn run_subtask(
    graph: &DynamicGraph,
    snapshots: &[Snapshot],
    spec: &TaskSpec,
    base: &TrainConfig,
    t: usize,
    seed: u64,
) -> Result<SubtaskResult> {
    let prepared = prepare_subtask(graph, snapshots, spec, t, seed)?;
    let train_edges = prepared.train_snapshots.iter().map(|s| s.edges().len()).sum();
    let mut result = SubtaskResult {
        train_upto: t,
        seed,
        metrics: None,
        skipped: None,
        train_edges,
        test_edges: prepared.test_edges.len(),
        split_hash: prepared.split_hash.clone(),
        epochs: 0,
        coefficients: None,
    };
    if prepared.test_edges.is_empty() {
        warn!("training length {t}: empty test set, subtask skipped");
        result.skipped = Some("empty test set".into());
        return Ok(result);
    }
    let config = run_config(base, spec, t, seed);
    let model = train(&prepared.train_snapshots, prepared.node_count, &config)?;
    let pairs: Vec<(NodeId, NodeId)> = prepared.test_edges.iter().map(|e| (e.source, e.target)).collect();
    let truths: Vec<usize> = prepared.test_edges.iter().map(|e| e.level).collect();
    let predictions = model.predict(&pairs)?;
    result.epochs = model.history.len();
    match evaluate(&predictions, &truths, graph.scheme().cardinality()) {
        Ok(m) => result.metrics = Some(m),
        Err(Error::Metric(msg)) => {
            warn!("training length {t}: {msg}, subtask skipped");
            result.skipped = Some(msg);
        }
        Err(e) => return Err(e),
    }
    if prepared.injection.is_some() {
        result.coefficients = Some(coefficient_shift(&model, &prepared));
    }
    Ok(result)
}

/// Segments `graph`, then runs every (training length, seed) pair in
/// parallel and aggregates uniformly over subtasks, then over seeds.
pub fn run_task(graph: &DynamicGraph, spec: &TaskSpec, config: &TrainConfig) -> Result<TaskReport> {
    spec.validate()?;
    let snapshots = segment(graph, spec.snapshot_count, spec.segmentation)?;
    let jobs: Vec<(usize, u64)> = spec
        .train_upto
        .iter()
        .flat_map(|&t| spec.seeds.iter().map(move |&s| (t, s)))
        .collect();
    info!(
        "{} task, variant {}: {} runs",
        spec.kind.name(),
        spec.variant,
        jobs.len()
    );
    let runs = jobs
        .par_iter()
        .map(|&(t, seed)| run_subtask(graph, &snapshots, spec, config, t, seed))
        .collect::<Result<Vec<_>>>()?;
    aggregate(spec.clone(), runs)
}

pub fn aggregate(spec: TaskSpec, runs: Vec<SubtaskResult>) -> Result<TaskReport> {
    let mut per_seed = Vec::new();
    for &seed in &spec.seeds {
        let vals: Vec<MetricSummary> = runs
            .iter()
            .filter(|r| r.seed == seed)
            .filter_map(|r| r.metrics.as_ref().map(MetricSummary::of))
            .collect();
        if !vals.is_empty() {
            per_seed.push((seed, MetricSummary::mean(&vals)));
        }
    }
    if per_seed.is_empty() {
        return Err(Error::EmptyTask("every subtask was skipped".into()));
    }
    let seed_vals: Vec<MetricSummary> = per_seed.iter().map(|(_, m)| *m).collect();
    Ok(TaskReport {
        mean: MetricSummary::mean(&seed_vals),
        std: MetricSummary::std(&seed_vals),
        spec,
        runs,
        per_seed,
    })
}
