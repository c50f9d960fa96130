//! Minibatch SGD with stochastic resetting to a validation-selected
//! checkpoint, plus the metrics used to judge it.

mod engine;
mod metrics;
mod reset;
mod sgd;

pub use engine::{train, NoObserver, Observer, RunStatus, StepDecay, TrainConfig, TrainOutcome};
pub use metrics::{
    memorization_fraction, relative_difference, write_metrics_csv, MetricsRow, METRICS_HEADER,
};
pub use reset::{
    CheckpointEvent, CheckpointPolicy, ResetConfig, ResetSections, SelectionMetric, Snapshot,
    TrainState,
};
pub use sgd::sgd_step;
