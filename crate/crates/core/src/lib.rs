//! Minimum-norm l-infinity adversarial attacks with interchangeable loss,
//! optimizer and step-size scheduler, plus a successive-halving /
//! local-search tuner that picks the attack configuration with the
//! smallest median perturbation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`model`], [`dataset`]: a small dense/ReLU classifier with
//!   exact input gradients, and its file formats.
//! - [`loss`]: logit loss and cross-entropy under a single "minimise" sign
//!   convention.
//! - [`optim`], [`sched`]: the perturbation update rule and the step-size
//!   schedule.
//! - [`attack`]: the attack loop itself, plus median-norm and
//!   robustness-curve metrics.
//! - [`hpo`]: search space, asynchronous successive halving, randomized
//!   local search and the tuning driver.
//! - [`cli`], [`fixtures`]: command-line plumbing and deterministic fixture
//!   generators.

// `!(a <= b)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod hpo;
pub mod loss;
pub mod model;
pub mod optim;
pub mod report;
pub mod sched;
pub mod tensor;

pub use attack::{AttackConfig, AttackResult, RobustnessCurve};
pub use error::{Error, Result};
pub use loss::LossKind;
pub use model::{LayerSpec, ModelSpec};
pub use optim::OptimizerParams;
pub use sched::SchedulerParams;
pub use tensor::Tensor;

/// Toolkit version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
