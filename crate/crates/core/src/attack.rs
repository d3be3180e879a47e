//! The minimum-norm attack loop and the metrics computed from its results.
//!
//! Each iteration evaluates the loss gradient at the current iterate, updates
//! the l-infinity budget `epsilon`, takes one optimizer step on the
//! l2-normalised gradient with the scheduled step size, and projects back
//! onto the intersection of the epsilon-ball and the `[0, 1]` box. The
//! smallest adversarial perturbation seen at any iterate is returned.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::ModelSpec;
use crate::optim::{Optimizer, OptimizerParams};
use crate::sched::{Scheduler, SchedulerParams};
use crate::tensor::{argmax, norm_inf, norm_l1, norm_l2, Tensor};

pub const DEFAULT_GAMMA0: f64 = 0.05;
pub const DEFAULT_GAMMA_MIN: f64 = 0.001;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub loss: LossKind,
    /// Initial perturbation step size.
    pub alpha0: f64,
    /// Total iterations `K`; also the horizon of the epsilon-step decay.
    pub iterations: u64,
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
    #[serde(default = "default_gamma_min")]
    pub gamma_min: f64,
    #[serde(default)]
    pub norm: Norm,
    pub optimizer: OptimizerParams,
    pub scheduler: SchedulerParams,
}

fn default_gamma0() -> f64 {
    DEFAULT_GAMMA0
}
fn default_gamma_min() -> f64 {
    DEFAULT_GAMMA_MIN
}

impl AttackConfig {
    /// Plain FMN: SGD without momentum, cosine annealing over `iterations`, logit loss.
    pub fn baseline(alpha0: f64, iterations: u64) -> Self {
        Self {
            loss: LossKind::LL,
            alpha0,
            iterations,
            gamma0: DEFAULT_GAMMA0,
            gamma_min: DEFAULT_GAMMA_MIN,
            norm: Norm::Linf,
            optimizer: OptimizerParams::Sgd(Default::default()),
            scheduler: SchedulerParams::Calr {
                t_max: iterations,
                eta_min: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha0 {} must be positive", self.alpha0)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma0 {} outside (0, 1)", self.gamma0)));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min < self.gamma0) {
            return Err(Error::InvalidConfig(format!(
                "gamma_min {} must lie in (0, gamma0)",
                self.gamma_min
            )));
        }
        self.optimizer.validate()?;
        self.scheduler.validate()
    }

    /// `optimizer/scheduler/loss`, e.g. `adam/rlrop/LL`.
    pub fn triple(&self) -> String {
        format!("{}/{}/{}", self.optimizer.name(), self.scheduler.name(), self.loss)
    }
}

/// One iteration of the attack, recorded at the iterate that was evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: u64,
    pub loss: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub delta_norm: f64,
    pub best_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub success: bool,
    pub best_delta: Option<Tensor>,
    /// l-infinity norm of `best_delta`, `+inf` on failure.
    pub norm: f64,
    pub iterations_run: u64,
    pub trace: Option<Vec<TraceRecord>>,
    /// Set when the run was cut short by a numeric failure.
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Stop after this many iterations while keeping the schedule horizon at
    /// `cfg.iterations`. A shorter budget therefore replays a prefix of the
    /// full run.
    pub budget: Option<u64>,
    pub trace: bool,
}

/// Cosine decay of the epsilon-step size from `gamma0` to `gamma_min`.
pub fn gamma_decay(k: u64, horizon: u64, gamma0: f64, gamma_min: f64) -> f64 {
    let k = k.min(horizon);
    gamma_min + (gamma0 - gamma_min) * (1.0 + (PI * k as f64 / horizon as f64).cos()) / 2.0
}

/// Inputs of one epsilon update.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonInputs {
    pub epsilon: f64,
    pub delta_norm: f64,
    pub gamma: f64,
    pub loss: f64,
    pub grad_l1: f64,
    pub adversarial_now: bool,
    pub found_before: bool,
}

/// Relative overshoot applied to the first-order boundary estimate.
pub const ESTIMATE_NUDGE: f64 = 1e-6;

/// Epsilon update: shrink on success, grow after a lost success, and before
/// the first success jump to the first-order boundary estimate
/// `||delta|| + |loss| / ||g||_1` (l1 is dual to l-infinity).
pub fn epsilon_step(s: EpsilonInputs) -> f64 {
    if s.adversarial_now {
        s.epsilon.min(s.delta_norm) * (1.0 - s.gamma)
    } else if s.found_before || s.grad_l1 == 0.0 {
        s.epsilon * (1.0 + s.gamma)
    } else {
        // without the nudge an iterate can settle one rounding error short
        // of the boundary and never cross it
        (s.delta_norm + s.loss.abs() / s.grad_l1) * (1.0 + ESTIMATE_NUDGE)
    }
}

/// Projection onto `{d : |d_i| <= epsilon, 0 <= x0_i + d_i <= 1}`.
///
/// Both constraints are per-coordinate intervals containing 0, so clamping
/// to one and then the other yields the exact projection.
pub fn project(x0: &[f64], delta: &[f64], epsilon: f64) -> Vec<f64> {
    x0.iter()
        .zip(delta)
        .map(|(&x, &d)| d.clamp(-epsilon, epsilon).clamp(-x, 1.0 - x))
        .collect()
}

pub fn run_attack(model: &ModelSpec, x: &Tensor, y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    run_attack_with(model, x, y, cfg, RunOptions::default())
}

pub fn run_attack_with(
    model: &ModelSpec,
    x: &Tensor,
    y: usize,
    cfg: &AttackConfig,
    opts: RunOptions,
) -> Result<AttackResult> {
    let x0 = x.as_slice();
    if x.shape() != [model.input_dim()] {
        return Err(Error::Shape {
            expected: vec![model.input_dim()],
            got: x.shape().to_vec(),
        });
    }
    if x0.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("attack input outside [0, 1]".into()));
    }
    if y >= model.num_classes() {
        return Err(Error::Contract(format!("label {y} out of range")));
    }

    let clean = model.logits(x0)?;
    if argmax(&clean) != y {
        return Ok(AttackResult {
            success: true,
            best_delta: Some(Tensor::zeros(vec![x0.len()])),
            norm: 0.0,
            iterations_run: 0,
            trace: opts.trace.then(Vec::new),
            diagnostic: None,
        });
    }

    let horizon = cfg.iterations;
    let steps = opts.budget.unwrap_or(horizon).min(horizon);
    // largest l-infinity distance reachable inside the box
    let eps_cap = x0.iter().fold(0.0_f64, |m, &v| m.max(v.max(1.0 - v)));

    let mut delta = vec![0.0; x0.len()];
    let mut epsilon = 0.0;
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = f64::INFINITY;
    let mut optimizer = Optimizer::new(&cfg.optimizer);
    let mut scheduler = Scheduler::new(&cfg.scheduler, cfg.alpha0);
    let mut trace = opts.trace.then(|| Vec::with_capacity(steps as usize));
    let mut diagnostic = None;
    let mut iterations_run = 0;
    let mut x_adv = x0.to_vec();

    let consider = |delta: &[f64], logits: &[f64], best: &mut Option<Vec<f64>>, best_norm: &mut f64| {
        let adversarial = argmax(logits) != y;
        let norm = norm_inf(delta);
        if adversarial && norm < *best_norm {
            *best = Some(delta.to_vec());
            *best_norm = norm;
        }
        adversarial
    };

    for k in 1..=steps {
        for ((xa, &x), &d) in x_adv.iter_mut().zip(x0).zip(&delta) {
            *xa = x + d;
        }
        let eval = match model.evaluate(&x_adv, y, cfg.loss) {
            Ok(e) => e,
            Err(e) => {
                diagnostic = Some(format!("iteration {k}: {e}"));
                break;
            }
        };
        let found_before = best.is_some();
        let adversarial_now = consider(&delta, &eval.logits, &mut best, &mut best_norm);
        let delta_norm = norm_inf(&delta);

        let gamma = gamma_decay(k, horizon, cfg.gamma0, cfg.gamma_min);
        epsilon = epsilon_step(EpsilonInputs {
            epsilon,
            delta_norm,
            gamma,
            loss: eval.loss,
            grad_l1: norm_l1(&eval.gradient),
            adversarial_now,
            found_before,
        })
        .min(eps_cap);

        let alpha = scheduler.step(k, eval.loss);

        let grad_norm = norm_l2(&eval.gradient);
        let mut direction = eval.gradient;
        if grad_norm > 0.0 {
            direction.iter_mut().for_each(|g| *g /= grad_norm);
        }
        let stepped = optimizer.step(&delta, &direction, alpha)?;
        delta = project(x0, &stepped, epsilon);
        iterations_run = k;

        if let Some(t) = trace.as_mut() {
            t.push(TraceRecord {
                k,
                loss: eval.loss,
                epsilon,
                alpha,
                delta_norm,
                best_norm,
            });
        }
    }

    if diagnostic.is_none() {
        for ((xa, &x), &d) in x_adv.iter_mut().zip(x0).zip(&delta) {
            *xa = x + d;
        }
        match model.logits(&x_adv) {
            Ok(logits) => {
                consider(&delta, &logits, &mut best, &mut best_norm);
            }
            Err(e) => diagnostic = Some(format!("final iterate: {e}")),
        }
    }

    let success = best.is_some();
    Ok(AttackResult {
        success,
        best_delta: best.map(Tensor::vector).transpose()?,
        norm: best_norm,
        iterations_run,
        trace,
        diagnostic,
    })
}

/// Attacks every sample; the output order matches `samples` and does not
/// depend on `jobs`.
pub fn run_batch(
    model: &ModelSpec,
    samples: &[Sample],
    cfg: &AttackConfig,
    jobs: usize,
    opts: RunOptions,
) -> Result<Vec<AttackResult>> {
    cfg.validate()?;
    let attack = |s: &Sample| run_attack_with(model, &s.x, s.label, cfg, opts);
    if jobs <= 1 {
        return samples.iter().map(attack).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    pool.install(|| samples.par_iter().map(attack).collect())
}

/// Lower median of the per-sample norms; failures count as `+inf`.
pub fn median_norm(results: &[AttackResult]) -> f64 {
    median_of(results.iter().map(|r| if r.success { r.norm } else { f64::INFINITY }).collect())
}

pub fn median_of(mut norms: Vec<f64>) -> f64 {
    if norms.is_empty() {
        return f64::INFINITY;
    }
    norms.sort_by(f64::total_cmp);
    norms[(norms.len() - 1) / 2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCurve {
    pub epsilons: Vec<f64>,
    pub accuracy: Vec<f64>,
}

pub fn robust_accuracy(results: &[AttackResult], grid: &[f64]) -> Result<RobustnessCurve> {
    let norms: Vec<f64> = results
        .iter()
        .map(|r| if r.success { r.norm } else { f64::INFINITY })
        .collect();
    robust_accuracy_from_norms(&norms, grid)
}

/// Fraction of samples whose norm exceeds each threshold.
pub fn robust_accuracy_from_norms(norms: &[f64], grid: &[f64]) -> Result<RobustnessCurve> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Contract("epsilon grid must be strictly increasing".into()));
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len().max(1) as f64;
    let accuracy = grid
        .iter()
        .map(|&eps| {
            let at_most = sorted.partition_point(|&n| n <= eps);
            (sorted.len() - at_most) as f64 / total
        })
        .collect();
    Ok(RobustnessCurve {
        epsilons: grid.to_vec(),
        accuracy,
    })
}
