//! Metrics, experiment orchestration, and report emission.

pub mod experiment;
pub mod metrics;
pub mod report;

pub use experiment::{
    build_streams, evaluate_artifacts, pool_labels, prepare_experiment, run_experiment,
    train_artifacts, EvalOutcome, PreparedExperiment, RunOutcome, StreamBundle, TrainedArtifacts,
};
pub use metrics::{improvement_pct, mae, rmse, MetricResult};
pub use report::{ForecastReport, ImprovementRow, RegimeAttribution, RL_MODEL, UNIFORM_MODEL};
