//! Step-size schedules for the perturbation update.
//!
//! CALR, CAWR and MSLR are pure functions of the iteration index. RLROP is a
//! small state machine fed with the attack loss of one sample, so it is
//! always owned by a single attack loop.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchedulerParams {
    /// Cosine annealing from `alpha0` down to `eta_min` over `t_max` iterations.
    Calr {
        t_max: u64,
        #[serde(default)]
        eta_min: f64,
    },
    /// Cosine annealing with warm restarts; cycle `i` lasts `t_0 * t_mult^i`.
    Cawr {
        t_0: u64,
        #[serde(default = "one")]
        t_mult: u64,
        #[serde(default)]
        eta_min: f64,
    },
    /// Multiply by `gamma` at every milestone reached.
    Mslr {
        milestones: Vec<u64>,
        #[serde(default = "default_mslr_gamma")]
        gamma: f64,
    },
    /// Reduce on plateau of the monitored loss (min mode, absolute threshold).
    Rlrop {
        factor: f64,
        #[serde(default = "default_patience")]
        patience: u64,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
}

fn one() -> u64 {
    1
}
fn default_mslr_gamma() -> f64 {
    0.1
}
fn default_patience() -> u64 {
    5
}
fn default_threshold() -> f64 {
    1e-5
}

impl SchedulerParams {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerParams::Calr { .. } => "calr",
            SchedulerParams::Cawr { .. } => "cawr",
            SchedulerParams::Mslr { .. } => "mslr",
            SchedulerParams::Rlrop { .. } => "rlrop",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self {
            SchedulerParams::Calr { t_max, eta_min } => {
                if *t_max == 0 {
                    return bad("scheduler.t_max must be positive".into());
                }
                if !(*eta_min >= 0.0) {
                    return bad(format!("scheduler.eta_min {eta_min} < 0"));
                }
            }
            SchedulerParams::Cawr { t_0, t_mult, eta_min } => {
                if *t_0 == 0 || *t_mult == 0 {
                    return bad("scheduler.t_0 must be positive and scheduler.t_mult >= 1".into());
                }
                if !(*eta_min >= 0.0) {
                    return bad(format!("scheduler.eta_min {eta_min} < 0"));
                }
            }
            SchedulerParams::Mslr { milestones, gamma } => {
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("scheduler.milestones must be strictly increasing".into());
                }
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return bad(format!("scheduler.gamma {gamma} outside (0, 1)"));
                }
            }
            SchedulerParams::Rlrop {
                factor, threshold, ..
            } => {
                if !(*factor > 0.0 && *factor < 1.0) {
                    return bad(format!("scheduler.factor {factor} outside (0, 1)"));
                }
                if !(*threshold >= 0.0) {
                    return bad(format!("scheduler.threshold {threshold} < 0"));
                }
            }
        }
        Ok(())
    }
}

/// Cosine annealing; `k` beyond `t_max` is clamped to `t_max`.
pub fn calr(k: u64, alpha0: f64, t_max: u64, eta_min: f64) -> f64 {
    let k = k.min(t_max);
    eta_min + (alpha0 - eta_min) * (1.0 + (PI * k as f64 / t_max as f64).cos()) / 2.0
}

/// Cosine annealing with warm restarts.
pub fn cawr(k: u64, alpha0: f64, t_0: u64, t_mult: u64, eta_min: f64) -> f64 {
    let mut offset = k;
    let mut len = t_0;
    while offset >= len {
        offset -= len;
        len = len.saturating_mul(t_mult);
    }
    calr(offset, alpha0, len, eta_min)
}

/// Multi-step decay; a milestone equal to `k` counts as passed.
pub fn mslr(k: u64, alpha0: f64, milestones: &[u64], gamma: f64) -> f64 {
    let passed = milestones.partition_point(|&m| m <= k);
    alpha0 * gamma.powi(passed as i32)
}

/// State of a reduce-on-plateau schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    pub alpha: f64,
    pub best: f64,
    pub bad_steps: u64,
}

impl PlateauState {
    pub fn new(alpha0: f64) -> Self {
        Self {
            alpha: alpha0,
            best: f64::INFINITY,
            bad_steps: 0,
        }
    }
}

/// Feeds one metric observation and returns the current step size.
pub fn rlrop_observe(
    state: &mut PlateauState,
    metric: f64,
    factor: f64,
    patience: u64,
    threshold: f64,
) -> f64 {
    if metric < state.best - threshold {
        state.best = metric;
        state.bad_steps = 0;
    } else {
        state.bad_steps += 1;
    }
    if state.bad_steps > patience {
        state.alpha *= factor;
        state.bad_steps = 0;
    }
    state.alpha
}

/// A schedule bound to `alpha0`, producing the step size for iteration `k`.
#[derive(Debug, Clone)]
pub struct Scheduler {
    params: SchedulerParams,
    alpha0: f64,
    plateau: PlateauState,
}

impl Scheduler {
    pub fn new(params: &SchedulerParams, alpha0: f64) -> Self {
        Self {
            params: params.clone(),
            alpha0,
            plateau: PlateauState::new(alpha0),
        }
    }

    /// `metric` is only consulted by the plateau schedule.
    pub fn step(&mut self, k: u64, metric: f64) -> f64 {
        match &self.params {
            SchedulerParams::Calr { t_max, eta_min } => calr(k, self.alpha0, *t_max, *eta_min),
            SchedulerParams::Cawr { t_0, t_mult, eta_min } => {
                cawr(k, self.alpha0, *t_0, *t_mult, *eta_min)
            }
            SchedulerParams::Mslr { milestones, gamma } => mslr(k, self.alpha0, milestones, *gamma),
            SchedulerParams::Rlrop {
                factor,
                patience,
                threshold,
            } => rlrop_observe(&mut self.plateau, metric, *factor, *patience, *threshold),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn calr_endpoints() {
        assert_eq!(calr(0, 0.7, 100, 0.0), 0.7);
        assert_eq!(calr(100, 0.7, 100, 0.01), 0.01);
        assert_relative_eq!(calr(50, 1.0, 100, 0.0), 0.5, epsilon = 1e-15);
        assert_eq!(calr(250, 0.7, 100, 0.01), 0.01);
    }

    #[test]
    fn cawr_restarts() {
        assert_eq!(cawr(0, 2.0, 10, 1, 0.0), 2.0);
        assert_eq!(cawr(10, 2.0, 10, 1, 0.0), 2.0);
        for b in [10, 30, 70] {
            assert_eq!(cawr(b, 2.0, 10, 2, 0.0), 2.0, "restart at {b}");
            assert!(cawr(b - 1, 2.0, 10, 2, 0.0) < 2.0);
        }
    }

    #[test]
    fn cawr_first_cycle_is_calr() {
        for k in 0..10 {
            assert_eq!(cawr(k, 1.3, 10, 2, 0.1), calr(k, 1.3, 10, 0.1));
        }
        for k in 10..30 {
            assert_eq!(cawr(k, 1.3, 10, 2, 0.1), calr(k - 10, 1.3, 20, 0.1));
        }
    }

    #[test]
    fn mslr_cases() {
        assert_eq!(mslr(29, 1.0, &[30, 60], 0.1), 1.0);
        assert_relative_eq!(mslr(60, 2.0, &[30, 60], 0.1), 0.02, epsilon = 1e-15);
        assert_relative_eq!(mslr(30, 2.0, &[30, 60], 0.1), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn rlrop_constant_metric() {
        let mut s = PlateauState::new(1.0);
        let alphas: Vec<f64> = (0..13).map(|_| rlrop_observe(&mut s, 3.0, 0.5, 5, 1e-5)).collect();
        assert!(alphas[..6].iter().all(|&a| a == 1.0));
        assert_eq!(alphas[6], 0.5);
        assert_eq!(alphas[12], 0.25);
    }

    #[test]
    fn rlrop_improving_never_reduces() {
        let mut s = PlateauState::new(1.0);
        for i in 0..100 {
            assert_eq!(rlrop_observe(&mut s, -(i as f64), 0.5, 0, 1e-5), 1.0);
        }
    }

    #[test]
    fn rlrop_m0_factor() {
        let mut s = PlateauState::new(5.534);
        let mut seen = vec![];
        for _ in 0..14 {
            seen.push(rlrop_observe(&mut s, 0.0, 0.327, 5, 1e-5));
        }
        assert_eq!(seen[6], 5.534 * 0.327);
        assert_eq!(seen[13], 5.534 * 0.327 * 0.327);
    }

    #[test]
    fn validation() {
        assert!(SchedulerParams::Mslr { milestones: vec![30, 30], gamma: 0.1 }.validate().is_err());
        assert!(SchedulerParams::Rlrop { factor: 1.0, patience: 5, threshold: 0.0 }.validate().is_err());
        assert!(SchedulerParams::Calr { t_max: 0, eta_min: 0.0 }.validate().is_err());
        assert!(SchedulerParams::Cawr { t_0: 10, t_mult: 2, eta_min: 0.0 }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn calr_non_increasing(t_max in 1u64..500, a0 in 0.01f64..10.0, frac in 0.0f64..1.0) {
            let eta = a0 * frac;
            let mut prev = f64::INFINITY;
            for k in 0..=t_max {
                let a = calr(k, a0, t_max, eta);
                prop_assert!(a <= prev);
                prev = a;
            }
        }

        #[test]
        fn mslr_non_increasing(mut ms in prop::collection::btree_set(0u64..200, 0..6), g in 0.01f64..0.99) {
            let ms: Vec<u64> = std::mem::take(&mut ms).into_iter().collect();
            let mut distinct = vec![];
            let mut prev = f64::INFINITY;
            for k in 0..220 {
                let a = mslr(k, 1.0, &ms, g);
                prop_assert!(a <= prev);
                if a != prev { distinct.push(a); }
                prev = a;
            }
            prop_assert!(distinct.len() <= ms.len() + 1);
        }

        #[test]
        fn rlrop_non_increasing(stream in prop::collection::vec(-1.0f64..1.0, 1..200), patience in 0u64..8) {
            let mut s = PlateauState::new(1.0);
            let mut prev = 1.0;
            for m in stream {
                let a = rlrop_observe(&mut s, m, 0.5, patience, 1e-5);
                prop_assert!(a <= prev && a > 0.0);
                prev = a;
            }
        }
    }
}
