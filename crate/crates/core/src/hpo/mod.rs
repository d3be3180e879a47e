//! Hyperparameter optimisation over attack configurations.
//!
//! Each combination of loss, optimizer and scheduler is searched as its own
//! lineage by a randomized local search ([`cfo`]); every evaluation is fed to
//! an asynchronous successive-halving ladder ([`asha`]) that decides which
//! configurations earn a larger iteration budget. [`tune`] drives both and
//! returns the configuration with the smallest median norm at the top rung.

pub mod asha;
pub mod cfo;
pub mod space;
pub mod tune;

pub use asha::{Decision, RungLadder};
pub use cfo::{cfo_propose, cfo_update, CfoSettings, RadiusUpdate};
pub use space::{Lineage, ParamKind, ParamSpec, ParamValue, Point, SearchSpace};
pub use tune::{
    sample_config, tune, tune_with, AttackObjective, Objective, Score, TrialConfig, TrialRecord,
    TrialResult, TuneOutcome, TunerConfig,
};
