//! Randomization inference for complier average causal effects under
//! one-sided non-compliance, with fully randomization-based familywise
//! adjustment of the resulting posterior predictive p-values.
//!
//! The pipeline is:
//!
//! 1. compute observed test statistics ([`statistics`]),
//! 2. repeatedly impute missing compliance under the null ([`imputation`]),
//!    draw a hypothetical assignment ([`assignment`]) and re-observe the
//!    sharp-null table ([`data`]),
//! 3. turn the hypothetical statistics into nominal and adjusted p-values
//!    ([`engine`], [`adjust`]).
//!
//! [`simgen`] generates synthetic Science tables and replication grids, and
//! [`cli`] is the command-line front end.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which is what the CLI uses.

pub mod adjust;
pub mod assignment;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod imputation;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod simgen;
pub mod statistics;

pub use adjust::AdjustmentMethod;
pub use assignment::{AssignmentMechanism, CompleteRandomization};
pub use data::{
    CompleteNullTable, ComplianceStatus, ObservedDataset, ObservedUnit, Schema, ScienceTable,
};
pub use engine::{EngineConfig, StepOrder};
pub use error::{Error, Result};
pub use imputation::{ComplianceModelState, CompliancePrior};
pub use rng::StreamKey;
pub use scalar::Scalar;
pub use simgen::{Correlation, Family, Hypothesis, ScenarioSpec};
pub use statistics::{EstimandDef, StatisticKind, Tail};

/// Analysis output in double precision.
pub type AnalysisResult = engine::AnalysisResult<f64>;
/// Analysis output in single precision.
pub type AnalysisResultF32 = engine::AnalysisResult<f32>;
/// Hypothetical statistics in double precision.
pub type IterationMatrix = engine::IterationMatrix<f64>;
/// Hypothetical statistics in single precision.
pub type IterationMatrixF32 = engine::IterationMatrix<f32>;
/// Sufficient statistics tabulation in double precision.
pub type Tabulation = statistics::Tabulation;
