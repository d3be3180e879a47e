//! Attack losses. The attack always *minimises*; a negative logit loss means
//! the sample is misclassified.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// Logit margin `z_y - max_{j != y} z_j`.
    LL,
    /// Log-probability of the true class, `log softmax(z)_y`.
    CE,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::LL => "LL",
            LossKind::CE => "CE",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LL" | "ll" => Ok(LossKind::LL),
            "CE" | "ce" => Ok(LossKind::CE),
            _ => Err(Error::InvalidConfig(format!("unknown loss {s:?}"))),
        }
    }
}

/// Highest-scoring class other than `y`, lowest index on ties.
pub fn runner_up(logits: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &z) in logits.iter().enumerate() {
        if j != y && (best == usize::MAX || z > logits[best]) {
            best = j;
        }
    }
    best
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

pub fn loss_value(kind: LossKind, logits: &[f64], y: usize) -> f64 {
    debug_assert!(logits.len() >= 2 && y < logits.len());
    match kind {
        LossKind::LL => logits[y] - logits[runner_up(logits, y)],
        LossKind::CE => logits[y] - log_sum_exp(logits),
    }
}

/// Gradient of [`loss_value`] with respect to the logits.
pub fn loss_grad_logits(kind: LossKind, logits: &[f64], y: usize) -> Vec<f64> {
    let mut g = vec![0.0; logits.len()];
    match kind {
        LossKind::LL => {
            g[y] = 1.0;
            g[runner_up(logits, y)] = -1.0;
        }
        LossKind::CE => {
            let lse = log_sum_exp(logits);
            for (gi, &z) in g.iter_mut().zip(logits) {
                *gi = -(z - lse).exp();
            }
            g[y] += 1.0;
        }
    }
    g
}

/// `true` iff the model does not predict `y` at `x_adv`.
pub fn is_adversarial(model: &ModelSpec, x_adv: &Tensor, y: usize) -> Result<bool> {
    Ok(argmax(model.forward(x_adv)?.as_slice()) != y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ll_definition() {
        let z = [2.0, 5.0, 1.0];
        assert_eq!(loss_value(LossKind::LL, &z, 1), 3.0);
        assert_eq!(loss_value(LossKind::LL, &z, 0), -3.0);
        assert_eq!(argmax(&z), 1);
    }

    #[test]
    fn ce_symmetric() {
        assert_eq!(loss_value(LossKind::CE, &[0.0, 0.0], 0), -std::f64::consts::LN_2);
    }

    #[test]
    fn ce_no_overflow() {
        let v = loss_value(LossKind::CE, &[1000.0, -1000.0], 1);
        assert_eq!(v, -2000.0);
    }

    #[test]
    fn ll_grad_and_tie() {
        assert_eq!(loss_grad_logits(LossKind::LL, &[2.0, 5.0, 1.0], 1), vec![-1.0, 1.0, 0.0]);
        assert_eq!(loss_grad_logits(LossKind::LL, &[3.0, 1.0, 1.0], 0), vec![1.0, -1.0, 0.0]);
    }

    fn fd_grad(kind: LossKind, z: &[f64], y: usize) -> Vec<f64> {
        let h = 1e-5;
        (0..z.len())
            .map(|i| {
                let mut p = z.to_vec();
                let mut m = z.to_vec();
                p[i] += h;
                m[i] -= h;
                (loss_value(kind, &p, y) - loss_value(kind, &m, y)) / (2.0 * h)
            })
            .collect()
    }

    fn logits_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
        (2usize..8).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), 0..n))
    }

    proptest! {
        #[test]
        fn ce_gradient_matches_finite_differences((z, y) in logits_strategy()) {
            let g = loss_grad_logits(LossKind::CE, &z, y);
            let fd = fd_grad(LossKind::CE, &z, y);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-3));
            }
        }

        #[test]
        fn ll_gradient_matches_finite_differences((z, y) in logits_strategy()) {
            // stay away from the runner-up kink
            let r = runner_up(&z, y);
            let gap = z.iter().enumerate().filter(|&(j, _)| j != y && j != r)
                .map(|(_, &v)| z[r] - v).fold(f64::INFINITY, f64::min);
            prop_assume!(gap > 1e-4);
            let g = loss_grad_logits(LossKind::LL, &z, y);
            let fd = fd_grad(LossKind::LL, &z, y);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0));
            }
        }

        #[test]
        fn ll_sign_iff_misclassified((z, y) in logits_strategy()) {
            let top = argmax(&z);
            let tied = z.iter().enumerate().any(|(j, &v)| j != top && v == z[top]);
            prop_assume!(!tied);
            prop_assert_eq!(loss_value(LossKind::LL, &z, y) < 0.0, top != y);
        }

        #[test]
        fn ce_shift_invariant((z, y) in logits_strategy(), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let a = loss_value(LossKind::CE, &z, y);
            let b = loss_value(LossKind::CE, &shifted, y);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
