//! Fairness-aware training of small dense networks with variance, invariance
//! and covariance loss terms, plus group and counterfactual fairness metrics
//! and a seeded multi-run experiment harness.

pub mod data;
pub mod error;
pub mod experiments;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod train;

pub use data::{BuiltinDataset, Dataset, DatasetSchema};
pub use error::{Error, MetricError, Result};
pub use experiments::{AggregateReport, ExperimentSpec, ModelKind};
pub use loss::{LambdaWeights, LossBreakdown, VarianceConfig};
pub use matrix::Matrix;
pub use metrics::{CounterfactualGrouping, EvalBundle, Metric, MetricReport};
pub use nn::{Mode, Network};
pub use train::TrainConfig;
