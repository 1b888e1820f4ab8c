//! Diagonally scaled extra-gradient methods for stochastic min-max problems.
//!
//! The crate provides synthetic saddle-point problems with known solutions,
//! adaptive diagonal preconditioners (Adam, RMSProp, AdaHessian and OASIS
//! style), scaled extra-gradient and single-call extra-gradient optimizers,
//! and the metrics used to check their convergence behaviour.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod metrics;
pub mod optim;
pub mod point;
pub mod precond;
pub mod problems;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use metrics::RunRecord;
pub use optim::{run, Method, OptimizerConfig, Trajectory};
pub use point::{FieldValue, OracleCounters, PointPair};
pub use precond::{ScalingConfig, ScalingState};
pub use problems::{OracleSample, ProblemClass, ProblemKind, SaddleProblem};
