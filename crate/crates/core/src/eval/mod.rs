//! Prediction tasks, metrics, ablations, sweeps and explanation bundles.

pub mod explain;
pub mod metrics;
pub mod report;
pub mod study;
pub mod task;

pub use metrics::{auc, balanced_accuracy, evaluate, f1_macro, mcc, Confusion, Metrics};
pub use study::{run_ablation, sensitivity_sweep, AblationTable, SweepParameter, SweepPoint};
pub use task::{
    prepare_subtask, run_subtask, run_task, CoefficientShift, MetricSummary, PreparedSubtask, SubtaskResult,
    TaskKind, TaskReport, TaskSpec,
};
