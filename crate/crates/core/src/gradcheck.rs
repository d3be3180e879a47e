//! Finite-difference verification of the model's input gradients.
//!
//! Central differences are only meaningful where the loss is smooth, so
//! points whose ReLU pattern or logit ranking changes within one step are
//! redrawn rather than checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fixtures::random_mlp;
use crate::loss::{runner_up, LossKind};
use crate::model::{LayerSpec, ModelSpec};

pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude differences are measured in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub model: ModelSpec,
    pub x: Vec<f64>,
    pub label: usize,
    pub loss: LossKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub cases: usize,
    /// Points rejected as too close to a kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// ReLU on/off pattern plus the logit ranking that LL depends on.
fn signature(model: &ModelSpec, x: &[f64], y: usize) -> (Vec<bool>, usize) {
    let mut act = x.to_vec();
    let mut pattern = Vec::new();
    for layer in model.layers() {
        match layer {
            LayerSpec::Dense { weights, bias } => {
                act = weights
                    .iter()
                    .zip(bias)
                    .map(|(row, b)| row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + b)
                    .collect();
            }
            LayerSpec::Relu => {
                pattern.extend(act.iter().map(|&z| z > 0.0));
                act.iter_mut().for_each(|z| *z = z.max(0.0));
            }
        }
    }
    (pattern, runner_up(&act, y))
}

/// True when every coordinate can move by `2 * FD_STEP` without crossing a
/// ReLU kink or changing the runner-up class.
pub fn is_smooth_at(model: &ModelSpec, x: &[f64], y: usize) -> bool {
    let base = signature(model, x, y);
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        for s in [-2.0, 2.0] {
            probe[i] = x[i] + s * FD_STEP;
            if signature(model, &probe, y) != base {
                return false;
            }
        }
        probe[i] = x[i];
    }
    true
}

/// Largest elementwise relative error between the reverse-mode gradient and
/// central differences of the loss.
pub fn check_case(c: &GradCase) -> Result<f64> {
    let exact = c.model.evaluate(&c.x, c.label, c.loss)?.gradient;
    let mut x = c.x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        x[i] = c.x[i] + FD_STEP;
        let up = c.model.evaluate(&x, c.label, c.loss)?.loss;
        x[i] = c.x[i] - FD_STEP;
        let down = c.model.evaluate(&x, c.label, c.loss)?.loss;
        x[i] = c.x[i];
        worst = worst.max(relative_error(exact[i], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

fn draw_point<R: Rng>(model: &ModelSpec, y: usize, rng: &mut R, redrawn: &mut usize) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..model.input_dim()).map(|_| rng.random::<f64>()).collect();
        if is_smooth_at(model, &x, y) {
            return x;
        }
        *redrawn += 1;
    }
}

/// Random models (1 to 3 dense layers, up to 16 units, 2 to 5 classes),
/// inputs, labels and losses.
pub fn random_cases(count: usize, seed: u64) -> (Vec<GradCase>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut redrawn = 0;
    let cases = (0..count)
        .map(|_| {
            let mut dims = vec![rng.random_range(1..=10)];
            for _ in 0..rng.random_range(0..=2) {
                dims.push(rng.random_range(2..=16));
            }
            dims.push(rng.random_range(2..=5));
            let model = random_mlp(&dims, rng.random());
            let label = rng.random_range(0..model.num_classes());
            let loss = if rng.random() { LossKind::LL } else { LossKind::CE };
            let x = draw_point(&model, label, &mut rng, &mut redrawn);
            GradCase { model, x, label, loss }
        })
        .collect();
    (cases, redrawn)
}

fn summarize(cases: &[GradCase], redrawn: usize) -> Result<GradReport> {
    let mut max_rel_error: f64 = 0.0;
    for c in cases {
        max_rel_error = max_rel_error.max(check_case(c)?);
    }
    Ok(GradReport {
        cases: cases.len(),
        redrawn,
        max_rel_error,
    })
}

/// The built-in suite over random models.
pub fn random_suite(count: usize, seed: u64) -> Result<GradReport> {
    let (cases, redrawn) = random_cases(count, seed);
    summarize(&cases, redrawn)
}

/// Checks a given model at random inputs, labels and losses.
pub fn model_suite(model: &ModelSpec, trials: usize, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut redrawn = 0;
    let cases: Vec<GradCase> = (0..trials)
        .map(|t| {
            let label = rng.random_range(0..model.num_classes());
            let loss = if t % 2 == 0 { LossKind::LL } else { LossKind::CE };
            let x = draw_point(model, label, &mut rng, &mut redrawn);
            GradCase {
                model: model.clone(),
                x,
                label,
                loss,
            }
        })
        .collect();
    summarize(&cases, redrawn)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(0.0, 1e-9) < 1e-2);
    }

    #[test]
    fn kink_is_detected() {
        // relu(x0 - 0.5) sits exactly on its kink at x0 = 0.5
        let m = ModelSpec::new(
            vec![
                LayerSpec::dense(vec![vec![1.0]], vec![-0.5]),
                LayerSpec::Relu,
                LayerSpec::dense(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]),
            ],
            1,
            2,
        )
        .unwrap();
        assert!(!is_smooth_at(&m, &[0.5], 0));
        assert!(is_smooth_at(&m, &[0.7], 0));
    }

    #[test]
    fn small_suite_passes() {
        let r = random_suite(20, 1).unwrap();
        assert_eq!(r.cases, 20);
        assert!(r.passed(), "max relative error {}", r.max_rel_error);
    }

    #[test]
    fn model_suite_on_fixture_model() {
        let m = random_mlp(&[2, 16, 3], 42);
        let r = model_suite(&m, 10, 3).unwrap();
        assert!(r.passed(), "max relative error {}", r.max_rel_error);
    }
}
