use serde::{Deserialize, Serialize};

use super::task::{run_task, MetricSummary, TaskReport, TaskSpec};
use crate::error::{Error, Result};
use crate::graph::DynamicGraph;
use crate::model::Variant;
use crate::spatial::layer_dims;
use crate::train::TrainConfig;

/// One task report per variant, all over the same seeds and splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<(Variant, TaskReport)>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant) -> Option<&TaskReport> {
        self.rows.iter().find(|(v, _)| *v == variant).map(|(_, r)| r)
    }

    /// MCC of `a` and `b` per (training length, seed), for paired
    /// comparisons.
    pub fn paired_mcc(&self, a: Variant, b: Variant) -> Vec<(usize, u64, f64, f64)> {
        let (Some(ra), Some(rb)) = (self.get(a), self.get(b)) else {
            return Vec::new();
        };
        ra.runs
            .iter()
            .filter_map(|x| {
                let y = rb.runs.iter().find(|y| y.train_upto == x.train_upto && y.seed == x.seed)?;
                Some((x.train_upto, x.seed, x.metrics.as_ref()?.mcc, y.metrics.as_ref()?.mcc))
            })
            .collect()
    }

    /// True when every variant saw the same train/test split for each
    /// (training length, seed).
    pub fn splits_match(&self) -> bool {
        let Some((_, first)) = self.rows.first() else {
            return true;
        };
        self.rows.iter().all(|(_, r)| {
            r.runs.len() == first.runs.len()
                && r.runs.iter().zip(&first.runs).all(|(x, y)| {
                    x.train_upto == y.train_upto && x.seed == y.seed && x.split_hash == y.split_hash
                })
        })
    }
}

/// Runs `base` once per variant.
pub fn run_ablation(
    graph: &DynamicGraph,
    base: &TaskSpec,
    variants: &[Variant],
    config: &TrainConfig,
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::config("no variants to compare"));
    }
    let rows = variants
        .iter()
        .map(|&v| {
            let spec = TaskSpec {
                variant: v,
                ..base.clone()
            };
            Ok((v, run_task(graph, &spec, config)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    /// Number of spatial layers.
    PropagationLength,
    Heads,
    PruneThreshold,
    SnapshotCount,
}

impl std::str::FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "propagation-length" | "layers" => Ok(Self::PropagationLength),
            "heads" => Ok(Self::Heads),
            "prune-threshold" | "threshold" => Ok(Self::PruneThreshold),
            "snapshot-count" | "snapshots" => Ok(Self::SnapshotCount),
            other => Err(format!(
                "unknown sweep parameter `{other}` (expected layers, heads, threshold or snapshots)"
            )),
        }
    }
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::PropagationLength => "propagation-length",
            Self::Heads => "heads",
            Self::PruneThreshold => "prune-threshold",
            Self::SnapshotCount => "snapshot-count",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

fn whole(value: f64, what: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::config(format!("{what} must be a positive integer, got {value}")))
    }
}

/// Applies one sweep value to copies of the task and the training config.
pub fn apply_sweep_value(
    parameter: SweepParameter,
    value: f64,
    spec: &TaskSpec,
    config: &TrainConfig,
) -> Result<(TaskSpec, TrainConfig)> {
    let mut spec = spec.clone();
    let mut config = config.clone();
    match parameter {
        SweepParameter::PropagationLength => {
            config.model.spatial.layer_dims = layer_dims(whole(value, "propagation length")?);
        }
        SweepParameter::Heads => config.model.temporal.heads = whole(value, "head count")?,
        SweepParameter::PruneThreshold => config.model.spatial.prune_threshold = value,
        SweepParameter::SnapshotCount => {
            spec.snapshot_count = whole(value, "snapshot count")?;
            spec.train_upto = spec.all_subtasks();
        }
    }
    config.validate()?;
    spec.validate()?;
    Ok((spec, config))
}

/// One task run per value, sharing seeds.
pub fn sensitivity_sweep(
    graph: &DynamicGraph,
    parameter: SweepParameter,
    values: &[f64],
    spec: &TaskSpec,
    config: &TrainConfig,
) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|&value| {
            let (s, c) = apply_sweep_value(parameter, value, spec, config)?;
            let report = run_task(graph, &s, &c)?;
            Ok(SweepPoint {
                value,
                mean: report.mean,
                std: report.std,
            })
        })
        .collect()
}
