//! Probabilistic inference and the evaluation suite: MASE/CRPS/WQL against
//! the seasonal-naive baseline, geometric-mean aggregation, and the
//! noise-robustness benchmark.

pub mod forecast;
pub mod metrics;
pub mod noise;
pub mod report;

use thiserror::Error;

pub use forecast::{forecast, forecast_with_hook, ForecastResult};
pub use metrics::{
    crps_quantile, effective_season, geometric_mean, mase, pinball, seasonal_naive, wql,
    CrpsValue, MetricError,
};
pub use noise::{
    noise_bench, NoiseBenchReport, NoiseBenchRow, NoiseKind, GAUSSIAN_LEVELS, IMPULSE_LEVELS,
    NOISE_SEED,
};
pub use report::{
    aggregate, evaluate, evaluate_task, tasks_from_records, EvalAggregates, EvalReport, EvalTask,
    ReportMeta, TaskRow,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("no valid rows to aggregate")]
    EmptyReport,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
