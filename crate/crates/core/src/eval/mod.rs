//! Ranking metrics and the downstream-task experiment runners.

mod experiments;
mod metrics;

pub use experiments::{
    eval_data, evaluate, ood_metrics, ood_scores, run_point, selective_experiment, sweep, sweep_points, ExperimentResult,
    ExperimentSpec, HeadKind, Method, MetricRow, RankMetrics, ScoreMetric, SelectiveOutcome, SweepKind, UqSource,
};
pub use metrics::{aupr, auroc, ScoredBinary};
