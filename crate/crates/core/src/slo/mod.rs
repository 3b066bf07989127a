//! Latency prediction: operator models, plan composition and SLO checks.
//!
//! Only the distribution arithmetic is generic over the float type.

pub mod bench;
pub mod distribution;
pub mod model;
pub mod predict;

pub use bench::{bench_operators, BenchConfig, BenchError, BenchSetting};
pub use distribution::{Distribution, DEFAULT_CEILING_MS};
pub use model::{train_models, IntervalModels, ModelError, ModelKey, ModelSet, OperatorModel};
pub use predict::{
    check_slo, heatmap, parse_duration_ms, percentile_series, plan_composition, predict_query,
    verdict, with_settings, Axis, Composition, GridParam, Heatmap, PercentileSeries, PredictError,
    SloSpec, SloVerdict,
};
