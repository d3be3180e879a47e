//! Search-space definition and binding of search points to attack configs.
//!
//! Numeric parameters live in a normalised unit cube (log scale for
//! log-uniform ones); categorical parameters are held as choice indices.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, Norm, DEFAULT_GAMMA0, DEFAULT_GAMMA_MIN};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::optim::{AdamParams, OptimizerParams, SgdParams};
use crate::sched::SchedulerParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
}

impl ParamValue {
    fn as_f64(self) -> f64 {
        match self {
            ParamValue::Bool(b) => b as u8 as f64,
            ParamValue::Int(i) => i as f64,
            ParamValue::Float(f) => f,
        }
    }

    fn as_bool(self) -> bool {
        match self {
            ParamValue::Bool(b) => b,
            other => other.as_f64() != 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamKind {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    Integer { low: i64, high: i64 },
    Categorical { choices: Vec<ParamValue> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn uniform(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Uniform { low, high },
        }
    }

    pub fn log_uniform(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::LogUniform { low, high },
        }
    }

    pub fn integer(name: &str, low: i64, high: i64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Integer { low, high },
        }
    }

    pub fn categorical(name: &str, choices: Vec<ParamValue>) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Categorical { choices },
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self.kind, ParamKind::Categorical { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("parameter {}: {m}", self.name)));
        match &self.kind {
            ParamKind::Uniform { low, high } if !(low < high) => bad("lower bound must be below upper"),
            ParamKind::LogUniform { low, high } if !(*low > 0.0 && low < high) => {
                bad("log-uniform bounds must satisfy 0 < low < high")
            }
            ParamKind::Integer { low, high } if low >= high => bad("lower bound must be below upper"),
            ParamKind::Categorical { choices } if choices.is_empty() => bad("no choices"),
            _ => Ok(()),
        }
    }

    /// Maps a unit-cube coordinate to a parameter value.
    pub fn from_unit(&self, u: f64) -> ParamValue {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            ParamKind::Uniform { low, high } => ParamValue::Float(low + u * (high - low)),
            ParamKind::LogUniform { low, high } => {
                ParamValue::Float((low.ln() + u * (high.ln() - low.ln())).exp())
            }
            ParamKind::Integer { low, high } => {
                let span = (high - low + 1) as f64;
                ParamValue::Int((low + (u * span).floor() as i64).min(*high))
            }
            ParamKind::Categorical { choices } => choices[0],
        }
    }

    /// Inverse of [`from_unit`](Self::from_unit) for numeric parameters.
    pub fn to_unit(&self, v: f64) -> f64 {
        let u = match &self.kind {
            ParamKind::Uniform { low, high } => (v - low) / (high - low),
            ParamKind::LogUniform { low, high } => (v.ln() - low.ln()) / (high.ln() - low.ln()),
            ParamKind::Integer { low, high } => (v - *low as f64 + 0.5) / ((high - low + 1) as f64),
            ParamKind::Categorical { .. } => 0.0,
        };
        u.clamp(0.0, 1.0)
    }

    fn choices(&self) -> usize {
        match &self.kind {
            ParamKind::Categorical { choices } => choices.len(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Calr,
    Cawr,
    Mslr,
    Rlrop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerChoice {
    pub kind: OptimizerKind,
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerChoice {
    pub kind: SchedulerKind,
    pub params: Vec<ParamSpec>,
}

/// Parameters not listed for a choice keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub losses: Vec<LossKind>,
    pub optimizers: Vec<OptimizerChoice>,
    pub schedulers: Vec<SchedulerChoice>,
    pub alpha0: ParamSpec,
}

/// One fixed (loss, optimizer, scheduler) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub loss: LossKind,
    pub optimizer: usize,
    pub scheduler: usize,
}

/// A point of one lineage: unit-cube coordinates for its numeric parameters
/// and choice indices for its categorical ones, both in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub numeric: Vec<f64>,
    pub categorical: Vec<usize>,
}

impl SearchSpace {
    /// Default ranges for an attack horizon of `k` iterations.
    pub fn default_for(k: u64) -> Self {
        let k = k as i64;
        let bools = vec![ParamValue::Bool(false), ParamValue::Bool(true)];
        Self {
            losses: vec![LossKind::LL, LossKind::CE],
            optimizers: vec![
                OptimizerChoice {
                    kind: OptimizerKind::Sgd,
                    params: vec![
                        ParamSpec::uniform("momentum", 0.8, 0.99),
                        ParamSpec::uniform("dampening", 0.0, 0.2),
                        ParamSpec::log_uniform("weight_decay", 1e-3, 1.0),
                        ParamSpec::categorical("nesterov", bools.clone()),
                    ],
                },
                OptimizerChoice {
                    kind: OptimizerKind::Adam,
                    params: vec![
                        ParamSpec::log_uniform("weight_decay", 1e-3, 1.0),
                        ParamSpec::categorical("amsgrad", bools),
                    ],
                },
            ],
            schedulers: vec![
                SchedulerChoice {
                    kind: SchedulerKind::Calr,
                    params: vec![ParamSpec::integer("t_max", (k / 2).max(1), (2 * k).max(2))],
                },
                SchedulerChoice {
                    kind: SchedulerKind::Cawr,
                    params: vec![
                        ParamSpec::integer("t_0", 10.min(k - 1).max(1), k.max(2)),
                        ParamSpec::integer("t_mult", 1, 2),
                    ],
                },
                SchedulerChoice {
                    kind: SchedulerKind::Mslr,
                    params: vec![
                        ParamSpec::integer("milestone_1", 10, (k - 10).max(11)),
                        ParamSpec::integer("milestone_2", 10, (k - 10).max(11)),
                    ],
                },
                SchedulerChoice {
                    kind: SchedulerKind::Rlrop,
                    params: vec![ParamSpec::uniform("factor", 0.1, 0.5)],
                },
            ],
            alpha0: ParamSpec::log_uniform("alpha0", 0.1, 10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.losses.is_empty() || self.optimizers.is_empty() || self.schedulers.is_empty() {
            return Err(Error::InvalidConfig("search space has an empty choice list".into()));
        }
        self.alpha0.validate()?;
        for o in &self.optimizers {
            let mut seen = HashSet::new();
            for p in &o.params {
                p.validate()?;
                if !seen.insert(&p.name) {
                    return Err(Error::InvalidConfig(format!("duplicate parameter optimizer.{}", p.name)));
                }
                let known: &[&str] = match o.kind {
                    OptimizerKind::Sgd => &["momentum", "dampening", "weight_decay", "nesterov"],
                    OptimizerKind::Adam => &["beta1", "beta2", "eps", "weight_decay", "amsgrad"],
                };
                if !known.contains(&p.name.as_str()) {
                    return Err(Error::InvalidConfig(format!("unknown optimizer parameter {}", p.name)));
                }
            }
        }
        for s in &self.schedulers {
            let mut seen = HashSet::new();
            for p in &s.params {
                p.validate()?;
                if !seen.insert(&p.name) {
                    return Err(Error::InvalidConfig(format!("duplicate parameter scheduler.{}", p.name)));
                }
                let ok = match s.kind {
                    SchedulerKind::Calr => matches!(p.name.as_str(), "t_max" | "eta_min"),
                    SchedulerKind::Cawr => matches!(p.name.as_str(), "t_0" | "t_mult" | "eta_min"),
                    SchedulerKind::Mslr => p.name.starts_with("milestone") || p.name == "gamma",
                    SchedulerKind::Rlrop => matches!(p.name.as_str(), "factor" | "patience" | "threshold"),
                };
                if !ok {
                    return Err(Error::InvalidConfig(format!("unknown scheduler parameter {}", p.name)));
                }
            }
        }
        Ok(())
    }

    /// Every (optimizer, scheduler, loss) combination, optimizer-major.
    pub fn lineages(&self) -> Vec<Lineage> {
        let mut out = Vec::new();
        for optimizer in 0..self.optimizers.len() {
            for scheduler in 0..self.schedulers.len() {
                for &loss in &self.losses {
                    out.push(Lineage {
                        loss,
                        optimizer,
                        scheduler,
                    });
                }
            }
        }
        out
    }

    pub fn lineage_name(&self, l: &Lineage) -> String {
        let o = match self.optimizers[l.optimizer].kind {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        };
        let s = match self.schedulers[l.scheduler].kind {
            SchedulerKind::Calr => "calr",
            SchedulerKind::Cawr => "cawr",
            SchedulerKind::Mslr => "mslr",
            SchedulerKind::Rlrop => "rlrop",
        };
        format!("{o}/{s}/{}", l.loss)
    }

    /// Parameters of a lineage with their fully qualified names.
    pub fn params(&self, l: &Lineage) -> Vec<(String, &ParamSpec)> {
        let mut out = vec![("alpha0".to_string(), &self.alpha0)];
        out.extend(
            self.optimizers[l.optimizer]
                .params
                .iter()
                .map(|p| (format!("optimizer.{}", p.name), p)),
        );
        out.extend(
            self.schedulers[l.scheduler]
                .params
                .iter()
                .map(|p| (format!("scheduler.{}", p.name), p)),
        );
        out
    }

    pub fn numeric_dims(&self, l: &Lineage) -> usize {
        self.params(l).iter().filter(|(_, p)| p.is_numeric()).count()
    }

    pub fn sample_point<R: Rng>(&self, l: &Lineage, rng: &mut R) -> Point {
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        for (_, p) in self.params(l) {
            if p.is_numeric() {
                numeric.push(rng.random::<f64>());
            } else {
                categorical.push(rng.random_range(0..p.choices()));
            }
        }
        Point { numeric, categorical }
    }

    /// Resolved parameter values of a point, in declaration order.
    pub fn values(&self, l: &Lineage, point: &Point) -> Result<Vec<(String, ParamValue)>> {
        let params = self.params(l);
        let n_num = params.iter().filter(|(_, p)| p.is_numeric()).count();
        if point.numeric.len() != n_num || point.categorical.len() != params.len() - n_num {
            return Err(Error::Contract("point does not match lineage dimensions".into()));
        }
        let (mut ni, mut ci) = (0, 0);
        let mut out = Vec::with_capacity(params.len());
        for (name, p) in params {
            let v = match &p.kind {
                ParamKind::Categorical { choices } => {
                    let idx = point.categorical[ci];
                    ci += 1;
                    *choices
                        .get(idx)
                        .ok_or_else(|| Error::Contract(format!("choice {idx} out of range for {name}")))?
                }
                _ => {
                    ni += 1;
                    p.from_unit(point.numeric[ni - 1])
                }
            };
            out.push((name, v));
        }
        Ok(out)
    }

    /// Builds the attack configuration for `point` with horizon `iterations`.
    pub fn bind(&self, l: &Lineage, point: &Point, iterations: u64) -> Result<AttackConfig> {
        let values = self.values(l, point)?;
        let get = |prefix: &str, name: &str| {
            values
                .iter()
                .find(|(n, _)| n.strip_prefix(prefix) == Some(name))
                .map(|(_, v)| *v)
        };
        let alpha0 = get("", "alpha0").map(ParamValue::as_f64).unwrap_or(1.0);

        let optimizer = match self.optimizers[l.optimizer].kind {
            OptimizerKind::Sgd => {
                let d = SgdParams::default();
                let f = |n: &str, dv: f64| get("optimizer.", n).map(ParamValue::as_f64).unwrap_or(dv);
                let mut p = SgdParams {
                    momentum: f("momentum", d.momentum),
                    dampening: f("dampening", d.dampening),
                    weight_decay: f("weight_decay", d.weight_decay),
                    nesterov: get("optimizer.", "nesterov").map(ParamValue::as_bool).unwrap_or(false),
                };
                if p.nesterov {
                    if p.momentum > 0.0 {
                        p.dampening = 0.0;
                    } else {
                        p.nesterov = false;
                    }
                }
                OptimizerParams::Sgd(p)
            }
            OptimizerKind::Adam => {
                let d = AdamParams::default();
                let f = |n: &str, dv: f64| get("optimizer.", n).map(ParamValue::as_f64).unwrap_or(dv);
                OptimizerParams::Adam(AdamParams {
                    beta1: f("beta1", d.beta1),
                    beta2: f("beta2", d.beta2),
                    eps: f("eps", d.eps),
                    weight_decay: f("weight_decay", d.weight_decay),
                    amsgrad: get("optimizer.", "amsgrad").map(ParamValue::as_bool).unwrap_or(false),
                })
            }
        };

        let f = |n: &str, dv: f64| get("scheduler.", n).map(ParamValue::as_f64).unwrap_or(dv);
        let int = |n: &str, dv: u64| get("scheduler.", n).map(|v| v.as_f64().round().max(1.0) as u64).unwrap_or(dv);
        let scheduler = match self.schedulers[l.scheduler].kind {
            SchedulerKind::Calr => SchedulerParams::Calr {
                t_max: int("t_max", iterations),
                eta_min: f("eta_min", 0.0),
            },
            SchedulerKind::Cawr => SchedulerParams::Cawr {
                t_0: int("t_0", (iterations / 4).max(1)),
                t_mult: int("t_mult", 1),
                eta_min: f("eta_min", 0.0),
            },
            SchedulerKind::Mslr => {
                let mut milestones: Vec<u64> = values
                    .iter()
                    .filter(|(n, _)| n.starts_with("scheduler.milestone"))
                    .map(|(_, v)| v.as_f64().round().max(0.0) as u64)
                    .collect();
                if milestones.is_empty() {
                    milestones = vec![iterations / 3, 2 * iterations / 3];
                }
                milestones.sort_unstable();
                milestones.dedup();
                SchedulerParams::Mslr {
                    milestones,
                    gamma: f("gamma", 0.1),
                }
            }
            SchedulerKind::Rlrop => SchedulerParams::Rlrop {
                factor: f("factor", 0.5),
                patience: int("patience", 5),
                threshold: f("threshold", 1e-5),
            },
        };

        let cfg = AttackConfig {
            loss: l.loss,
            alpha0,
            iterations,
            gamma0: DEFAULT_GAMMA0,
            gamma_min: DEFAULT_GAMMA_MIN,
            norm: Norm::Linf,
            optimizer,
            scheduler,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_space_is_valid() {
        let s = SearchSpace::default_for(270);
        s.validate().unwrap();
        assert_eq!(s.lineages().len(), 16);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = SearchSpace::default_for(100);
        s.optimizers[0].params.push(ParamSpec::uniform("momentum", 0.1, 0.2));
        assert!(s.validate().is_err());
        let mut s = SearchSpace::default_for(100);
        s.schedulers[3].params.push(ParamSpec::uniform("t_max", 0.1, 0.2));
        assert!(s.validate().is_err());
        let mut s = SearchSpace::default_for(100);
        s.alpha0 = ParamSpec::uniform("alpha0", 1.0, 1.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn unit_mapping_roundtrip() {
        let p = ParamSpec::log_uniform("a", 0.1, 10.0);
        assert!((p.from_unit(0.5).as_f64() - 1.0).abs() < 1e-12);
        assert!((p.to_unit(1.0) - 0.5).abs() < 1e-12);
        let i = ParamSpec::integer("t", 1, 2);
        assert_eq!(i.from_unit(0.0), ParamValue::Int(1));
        assert_eq!(i.from_unit(0.49), ParamValue::Int(1));
        assert_eq!(i.from_unit(0.51), ParamValue::Int(2));
        assert_eq!(i.from_unit(1.0), ParamValue::Int(2));
        assert_eq!(i.from_unit(i.to_unit(2.0)), ParamValue::Int(2));
    }

    #[test]
    fn every_lineage_binds() {
        let s = SearchSpace::default_for(270);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for l in s.lineages() {
            for _ in 0..50 {
                let p = s.sample_point(&l, &mut rng);
                let cfg = s.bind(&l, &p, 270).unwrap();
                assert_eq!(cfg.loss, l.loss);
                assert_eq!(cfg.triple(), s.lineage_name(&l));
                if let OptimizerParams::Sgd(sgd) = cfg.optimizer {
                    assert!((0.8..=0.99).contains(&sgd.momentum));
                    if sgd.nesterov {
                        assert_eq!(sgd.dampening, 0.0);
                    }
                }
                if let SchedulerParams::Mslr { milestones, .. } = &cfg.scheduler {
                    assert!(milestones.iter().all(|&m| (10..=260).contains(&m)));
                }
            }
        }
    }
}
