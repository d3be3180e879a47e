//! Perturbation update rules. Both optimizers receive the step size from the
//! scheduler on every call; they never own a learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdParams {
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub dampening: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub nesterov: bool,
}

impl Default for SgdParams {
    fn default() -> Self {
        Self {
            momentum: 0.0,
            dampening: 0.0,
            weight_decay: 0.0,
            nesterov: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub amsgrad: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
            amsgrad: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerParams {
    Sgd(SgdParams),
    Adam(AdamParams),
}

impl OptimizerParams {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerParams::Sgd(_) => "sgd",
            OptimizerParams::Adam(_) => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self {
            OptimizerParams::Sgd(p) => {
                if !(0.0..1.0).contains(&p.momentum) {
                    return bad(format!("optimizer.momentum {} outside [0, 1)", p.momentum));
                }
                if !(0.0..=1.0).contains(&p.dampening) {
                    return bad(format!("optimizer.dampening {} outside [0, 1]", p.dampening));
                }
                if !(p.weight_decay >= 0.0) {
                    return bad(format!("optimizer.weight_decay {} < 0", p.weight_decay));
                }
                if p.nesterov && (p.momentum <= 0.0 || p.dampening != 0.0) {
                    return bad("nesterov needs momentum > 0 and dampening = 0".into());
                }
            }
            OptimizerParams::Adam(p) => {
                if !(0.0..1.0).contains(&p.beta1) || !(0.0..1.0).contains(&p.beta2) {
                    return bad(format!("optimizer betas ({}, {}) outside [0, 1)", p.beta1, p.beta2));
                }
                if !(p.eps > 0.0) {
                    return bad(format!("optimizer.eps {} must be positive", p.eps));
                }
                if !(p.weight_decay >= 0.0) {
                    return bad(format!("optimizer.weight_decay {} < 0", p.weight_decay));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    pub step_count: u64,
    pub buffer: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Option<Vec<f64>>,
}

fn check_shapes(delta: &[f64], grad: &[f64]) -> Result<()> {
    if delta.len() != grad.len() {
        return Err(Error::Shape {
            expected: vec![delta.len()],
            got: vec![grad.len()],
        });
    }
    Ok(())
}

fn check_state_len(len: usize, expected: usize) -> Result<()> {
    if len != expected {
        return Err(Error::Shape {
            expected: vec![expected],
            got: vec![len],
        });
    }
    Ok(())
}

/// One SGD step on `delta` with (already normalised) gradient `grad`.
///
/// The momentum buffer starts as the first gradient and then follows
/// `b = momentum * b + (1 - dampening) * g`, also when `momentum == 0`.
pub fn sgd_step(
    state: &mut SgdState,
    delta: &[f64],
    grad: &[f64],
    lr: f64,
    p: &SgdParams,
) -> Result<Vec<f64>> {
    check_shapes(delta, grad)?;
    let g: Vec<f64> = grad
        .iter()
        .zip(delta)
        .map(|(g, d)| g + p.weight_decay * d)
        .collect();
    let buf = match state.buffer.as_mut() {
        None => state.buffer.insert(g.clone()),
        Some(b) => {
            check_state_len(b.len(), g.len())?;
            for (bi, gi) in b.iter_mut().zip(&g) {
                *bi = p.momentum * *bi + (1.0 - p.dampening) * gi;
            }
            b
        }
    };
    let direction: Vec<f64> = if p.nesterov {
        g.iter().zip(buf.iter()).map(|(gi, bi)| gi + p.momentum * bi).collect()
    } else {
        buf.clone()
    };
    state.step_count += 1;
    Ok(delta.iter().zip(&direction).map(|(d, s)| d - lr * s).collect())
}

/// One Adam step (optionally AMSGrad) on `delta`.
pub fn adam_step(
    state: &mut AdamState,
    delta: &[f64],
    grad: &[f64],
    lr: f64,
    p: &AdamParams,
) -> Result<Vec<f64>> {
    check_shapes(delta, grad)?;
    let n = delta.len();
    if state.step_count == 0 {
        state.m = vec![0.0; n];
        state.v = vec![0.0; n];
        state.v_max = p.amsgrad.then(|| vec![0.0; n]);
    } else {
        check_state_len(state.m.len(), n)?;
    }
    state.step_count += 1;
    let k = state.step_count as i32;
    let bc1 = 1.0 - p.beta1.powi(k);
    let bc2 = 1.0 - p.beta2.powi(k);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let g = grad[i] + p.weight_decay * delta[i];
        state.m[i] = p.beta1 * state.m[i] + (1.0 - p.beta1) * g;
        state.v[i] = p.beta2 * state.v[i] + (1.0 - p.beta2) * g * g;
        let second = match state.v_max.as_mut() {
            Some(vm) => {
                vm[i] = vm[i].max(state.v[i]);
                vm[i]
            }
            None => state.v[i],
        };
        let m_hat = state.m[i] / bc1;
        let v_hat = second / bc2;
        out.push(delta[i] - lr * m_hat / (v_hat.sqrt() + p.eps));
    }
    Ok(out)
}

/// An optimizer together with its per-sample state.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(SgdParams, SgdState),
    Adam(AdamParams, AdamState),
}

impl Optimizer {
    pub fn new(params: &OptimizerParams) -> Self {
        match *params {
            OptimizerParams::Sgd(p) => Optimizer::Sgd(p, SgdState::default()),
            OptimizerParams::Adam(p) => Optimizer::Adam(p, AdamState::default()),
        }
    }

    pub fn step(&mut self, delta: &[f64], grad: &[f64], lr: f64) -> Result<Vec<f64>> {
        match self {
            Optimizer::Sgd(p, s) => sgd_step(s, delta, grad, lr, p),
            Optimizer::Adam(p, s) => adam_step(s, delta, grad, lr, p),
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Sgd(_, s) => s.step_count,
            Optimizer::Adam(_, s) => s.step_count,
        }
    }
}
