//! Federated learning simulation with PID-style aggregation.
//!
//! The crate simulates the server/client loop of federated learning on a
//! single machine and compares aggregation rules that weight clients by
//! sample count (FedAvg), additionally by local loss improvement
//! (FedCostWAvg), and additionally by decayed loss history (FedControl).
//!
//! * [`aggregation`] computes client weights and the weighted average.
//! * [`model`] holds the softmax classifiers and their gradients.
//! * [`data`] generates, partitions and loads datasets.
//! * [`trainer`] runs local mini-batch SGD.
//! * [`federation`] orchestrates rounds.
//! * [`metrics`] summarizes accuracy curves.
//! * [`experiment`] reads config files and writes results.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod trainer;

pub use aggregation::{
    aggregate, compute_weights, derivative_term, integral_term, AggregationWeights, LossLedger,
    StrategyConfig, StrategyKind,
};
pub use data::{ClientDataset, Dataset, PartitionMode, PartitionPlan};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig};
pub use federation::{run_training, Federation, RoundRecord, RunConfig, TrainingOutcome};
pub use model::{ModelKind, ModelSpec, ParamVector};
pub use trainer::{client_update, lr_schedule, TrainerConfig};
