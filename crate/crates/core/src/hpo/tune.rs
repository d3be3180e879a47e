//! The tuning driver.
//!
//! Evaluations run one at a time. Pending promotions are served first,
//! highest rung first; otherwise lineages take turns proposing a new point at
//! the lowest budget. Every lineage owns its own random stream, so a run is
//! fully determined by the seed.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::asha::{Decision, RungLadder};
use super::cfo::{cfo_propose, cfo_update, CfoSettings};
use super::space::{Lineage, Point, SearchSpace};
use crate::attack::{run_batch, AttackConfig, RunOptions};
use crate::config::flat_json;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::report::format_float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunerConfig {
    pub b_min: u64,
    pub b_max: u64,
    pub eta: u64,
    pub max_evaluations: usize,
    pub seed: u64,
    pub cfo: CfoSettings,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            b_min: 30,
            b_max: 300,
            eta: 3,
            max_evaluations: 200,
            seed: 0,
            cfo: CfoSettings::default(),
        }
    }
}

impl TunerConfig {
    pub fn ladder(&self) -> Result<RungLadder> {
        RungLadder::new(self.b_min, self.b_max, self.eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    /// Stable across promotions of the same configuration.
    pub id: usize,
    pub lineage: usize,
    pub point: Point,
    pub config: AttackConfig,
    pub budget: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    /// Median norm; `+inf` when the configuration is rejected.
    pub objective: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_id: usize,
    pub budget: u64,
    pub score: Score,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub evaluation: usize,
    pub rung: usize,
    pub lineage_name: String,
    pub trial: TrialConfig,
    pub result: TrialResult,
    pub decision: Decision,
}

pub trait Objective {
    fn evaluate(&self, trial: &TrialConfig) -> Result<Score>;
}

/// Median norm over a fixed sample set, run for the trial's budget.
/// Configurations that fail on half of the samples or more score `+inf`.
pub struct AttackObjective<'a> {
    pub model: &'a ModelSpec,
    pub samples: &'a [Sample],
    pub jobs: usize,
}

impl Objective for AttackObjective<'_> {
    fn evaluate(&self, trial: &TrialConfig) -> Result<Score> {
        let opts = RunOptions {
            budget: Some(trial.budget),
            trace: false,
        };
        let results = run_batch(self.model, self.samples, &trial.config, self.jobs, opts)?;
        let n = results.len();
        let ok = results.iter().filter(|r| r.success).count();
        let success_rate = if n == 0 { 0.0 } else { ok as f64 / n as f64 };
        let objective = if 2 * (n - ok) >= n.max(1) {
            f64::INFINITY
        } else {
            crate::attack::median_norm(&results)
        };
        Ok(Score {
            objective,
            success_rate,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub config: TunerConfig,
    pub rungs: Vec<u64>,
    pub log: Vec<TrialRecord>,
    /// Index into `log` of the best top-rung result.
    pub best: Option<usize>,
}

impl TuneOutcome {
    pub fn best_record(&self) -> Result<&TrialRecord> {
        self.best
            .map(|i| &self.log[i])
            .ok_or_else(|| Error::NoValidTrial("no finite objective at the top budget".into()))
    }

    /// The trial log as JSON Lines: a header record, then one record per
    /// evaluation. Wall time is left out so equal seeds give equal bytes.
    pub fn log_jsonl(&self, extra_header: &[(&str, Value)]) -> String {
        let mut header = json!({
            "record": "header",
            "version": crate::VERSION,
            "seed": self.config.seed,
            "b_min": self.config.b_min,
            "b_max": self.config.b_max,
            "eta": self.config.eta,
            "rungs": self.rungs,
            "max_evaluations": self.config.max_evaluations,
        });
        for (k, v) in extra_header {
            header[*k] = v.clone();
        }
        let mut out = header.to_string();
        out.push('\n');
        for r in &self.log {
            let obj = if r.result.score.objective.is_finite() {
                json!(r.result.score.objective)
            } else {
                json!(format_float(r.result.score.objective))
            };
            let decision = match r.decision {
                Decision::Promote { .. } => "promote",
                Decision::Stop => "stop",
            };
            let line = json!({
                "record": "trial",
                "evaluation": r.evaluation,
                "trial_id": r.trial.id,
                "lineage": r.lineage_name,
                "seed": self.config.seed,
                "stream": r.trial.lineage,
                "rung": r.rung,
                "budget": r.trial.budget,
                "objective": obj,
                "success_rate": r.result.score.success_rate,
                "decision": decision,
                "point": { "numeric": r.trial.point.numeric, "categorical": r.trial.point.categorical },
                "config": Value::Object(flat_json(&r.trial.config)),
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Draws one configuration uniformly: a random lineage, then a random point.
pub fn sample_config<R: Rng>(space: &SearchSpace, horizon: u64, rng: &mut R) -> Result<TrialConfig> {
    let lineages = space.lineages();
    let li = rng.random_range(0..lineages.len());
    let point = space.sample_point(&lineages[li], rng);
    let config = space.bind(&lineages[li], &point, horizon)?;
    Ok(TrialConfig {
        id: 0,
        lineage: li,
        point,
        config,
        budget: horizon,
    })
}

struct LineageSearch {
    lineage: Lineage,
    dims: usize,
    rng: ChaCha8Rng,
    incumbent: Option<(Point, f64)>,
    awaiting_start: bool,
    pending: VecDeque<Point>,
    improved: bool,
    radius: f64,
    failures: u32,
    exhausted: bool,
}

impl LineageSearch {
    fn next(&mut self, space: &SearchSpace) -> Option<Point> {
        if self.exhausted {
            return None;
        }
        let Some((inc, _)) = &self.incumbent else {
            self.awaiting_start = true;
            return Some(space.sample_point(&self.lineage, &mut self.rng));
        };
        if self.dims == 0 {
            self.exhausted = true;
            return None;
        }
        if self.pending.is_empty() {
            let (a, b) = cfo_propose(&inc.numeric, self.radius, &mut self.rng);
            for numeric in [a, b] {
                self.pending.push_back(Point {
                    numeric,
                    categorical: inc.categorical.clone(),
                });
            }
            self.improved = false;
        }
        self.pending.pop_front()
    }

    fn tell(&mut self, point: Point, objective: f64, settings: &CfoSettings) {
        if self.awaiting_start {
            self.awaiting_start = false;
            self.incumbent = Some((point, objective));
            return;
        }
        let better = matches!(&self.incumbent, Some((_, best)) if objective < *best);
        if better {
            self.incumbent = Some((point, objective));
            self.improved = true;
            // The mirrored candidate is no longer needed.
            self.pending.clear();
        }
        if self.pending.is_empty() {
            let u = cfo_update(self.improved, self.failures, self.radius, settings);
            self.radius = u.radius;
            self.failures = u.failures;
            if u.restart {
                self.incumbent = None;
            }
        }
    }
}

struct Job {
    id: usize,
    lineage: usize,
    point: Point,
    rung: usize,
    fresh: bool,
}

/// Tunes on the model and samples with [`AttackObjective`].
pub fn tune(
    model: &ModelSpec,
    samples: &[Sample],
    space: &SearchSpace,
    cfg: &TunerConfig,
    jobs: usize,
) -> Result<TuneOutcome> {
    let objective = AttackObjective { model, samples, jobs };
    tune_with(&objective, space, cfg)
}

/// Runs the search. The attack horizon of every configuration is the top
/// budget of the ladder, so lower rungs replay a prefix of the full run.
pub fn tune_with<O: Objective>(objective: &O, space: &SearchSpace, cfg: &TunerConfig) -> Result<TuneOutcome> {
    space.validate()?;
    let mut ladder = cfg.ladder()?;
    let horizon = ladder.top_budget();
    let lineages = space.lineages();
    let mut searches: Vec<LineageSearch> = lineages
        .iter()
        .enumerate()
        .map(|(i, &lineage)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            LineageSearch {
                lineage,
                dims: space.numeric_dims(&lineage),
                rng,
                incumbent: None,
                awaiting_start: false,
                pending: VecDeque::new(),
                improved: false,
                radius: cfg.cfo.initial_radius,
                failures: 0,
                exhausted: false,
            }
        })
        .collect();
    let rungs = ladder.budgets().to_vec();
    let mut promotions: Vec<VecDeque<Job>> = (0..rungs.len()).map(|_| VecDeque::new()).collect();
    let mut log: Vec<TrialRecord> = Vec::new();
    let mut next_id = 0;
    let mut turn = 0;

    while log.len() < cfg.max_evaluations {
        let job = if let Some(j) = promotions.iter_mut().rev().find_map(|q| q.pop_front()) {
            j
        } else {
            let mut found = None;
            for _ in 0..searches.len() {
                let li = turn % searches.len();
                turn += 1;
                if let Some(point) = searches[li].next(space) {
                    found = Some((li, point));
                    break;
                }
            }
            let Some((lineage, point)) = found else { break };
            next_id += 1;
            Job {
                id: next_id - 1,
                lineage,
                point,
                rung: 0,
                fresh: true,
            }
        };

        let l = &lineages[job.lineage];
        let trial = TrialConfig {
            id: job.id,
            lineage: job.lineage,
            config: space.bind(l, &job.point, horizon)?,
            point: job.point,
            budget: rungs[job.rung],
        };
        let started = Instant::now();
        let score = objective.evaluate(&trial)?;
        let wall_seconds = started.elapsed().as_secs_f64();
        let decision = ladder.on_result(trial.id, trial.budget, score.objective)?;
        if let Decision::Promote { .. } = decision {
            promotions[job.rung + 1].push_back(Job {
                id: job.id,
                lineage: job.lineage,
                point: trial.point.clone(),
                rung: job.rung + 1,
                fresh: false,
            });
        }
        if job.fresh {
            searches[job.lineage].tell(trial.point.clone(), score.objective, &cfg.cfo);
        }
        log.push(TrialRecord {
            evaluation: log.len(),
            rung: job.rung,
            lineage_name: space.lineage_name(l),
            result: TrialResult {
                trial_id: trial.id,
                budget: trial.budget,
                score,
                wall_seconds,
            },
            trial,
            decision,
        });
    }

    let top = rungs.len() - 1;
    let mut best: Option<usize> = None;
    for (i, r) in log.iter().enumerate() {
        if r.rung == top
            && r.result.score.objective.is_finite()
            && best.is_none_or(|b| r.result.score.objective < log[b].result.score.objective)
        {
            best = Some(i);
        }
    }
    Ok(TuneOutcome {
        config: *cfg,
        rungs,
        log,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::space::ParamSpec;

    struct Bowl {
        target: Vec<f64>,
    }

    impl Objective for Bowl {
        fn evaluate(&self, trial: &TrialConfig) -> Result<Score> {
            let d: f64 = trial
                .point
                .numeric
                .iter()
                .zip(&self.target)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            Ok(Score {
                objective: d,
                success_rate: 1.0,
            })
        }
    }

    fn single_lineage(params: usize) -> SearchSpace {
        let mut s = SearchSpace::default_for(9);
        s.losses.truncate(1);
        s.optimizers.truncate(1);
        s.schedulers.truncate(1);
        s.optimizers[0].params.clear();
        s.schedulers[0].params.clear();
        let names = ["momentum", "dampening", "weight_decay"];
        for name in names.iter().take(params.saturating_sub(1)) {
            s.optimizers[0].params.push(ParamSpec::uniform(name, 0.0, 0.5));
        }
        s
    }

    #[test]
    fn collapsed_space_climbs_one_ladder() {
        let s = single_lineage(0);
        let mut s = s;
        s.alpha0 = ParamSpec::categorical("alpha0", vec![super::super::ParamValue::Float(1.0)]);
        let cfg = TunerConfig {
            b_min: 1,
            b_max: 9,
            ..TunerConfig::default()
        };
        let out = tune_with(&Bowl { target: vec![] }, &s, &cfg).unwrap();
        assert_eq!(out.log.len(), 3);
        let budgets: Vec<u64> = out.log.iter().map(|r| r.trial.budget).collect();
        assert_eq!(budgets, vec![1, 3, 9]);
        assert_eq!(out.best, Some(2));
    }

    #[test]
    fn deterministic_and_best_is_top_rung_min() {
        let s = single_lineage(3);
        let cfg = TunerConfig {
            b_min: 1,
            b_max: 9,
            max_evaluations: 120,
            seed: 5,
            ..TunerConfig::default()
        };
        let bowl = Bowl {
            target: vec![0.3, 0.6, 0.2],
        };
        let a = tune_with(&bowl, &s, &cfg).unwrap();
        let b = tune_with(&bowl, &s, &cfg).unwrap();
        assert_eq!(a.log_jsonl(&[]), b.log_jsonl(&[]));
        assert_eq!(a.log.len(), 120);
        let best = a.best_record().unwrap();
        let min = a
            .log
            .iter()
            .filter(|r| r.rung == 2)
            .map(|r| r.result.score.objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.result.score.objective, min);
    }

    #[test]
    fn all_infinite_gives_no_best() {
        struct Never;
        impl Objective for Never {
            fn evaluate(&self, _: &TrialConfig) -> Result<Score> {
                Ok(Score {
                    objective: f64::INFINITY,
                    success_rate: 0.0,
                })
            }
        }
        let cfg = TunerConfig {
            max_evaluations: 20,
            ..TunerConfig::default()
        };
        let out = tune_with(&Never, &single_lineage(2), &cfg).unwrap();
        assert!(out.best.is_none());
        assert!(matches!(out.best_record(), Err(Error::NoValidTrial(_))));
        assert!(out.log.iter().all(|r| r.rung == 0));
    }

    struct LogBowl;

    impl Objective for LogBowl {
        fn evaluate(&self, trial: &TrialConfig) -> Result<Score> {
            Ok(Score {
                objective: (trial.config.alpha0.ln() - 2.0f64.ln()).powi(2),
                success_rate: 1.0,
            })
        }
    }

    #[test]
    fn one_dimensional_quadratic_converges() {
        let s = single_lineage(1);
        let cfg = TunerConfig {
            b_min: 1,
            b_max: 9,
            max_evaluations: 200,
            seed: 2,
            ..TunerConfig::default()
        };
        let out = tune_with(&Bowl { target: vec![0.37] }, &s, &cfg).unwrap();
        let best = out.best_record().unwrap();
        assert!((best.trial.point.numeric[0] - 0.37).abs() < 1e-2);
    }

    #[test]
    fn finds_alpha_minimiser() {
        let s = single_lineage(1);
        let cfg = TunerConfig {
            b_min: 1,
            b_max: 9,
            max_evaluations: 200,
            seed: 9,
            ..TunerConfig::default()
        };
        let out = tune_with(&LogBowl, &s, &cfg).unwrap();
        let alpha = out.best_record().unwrap().trial.config.alpha0;
        assert!((alpha / 2.0 - 1.0).abs() < 0.05, "alpha0 {alpha}");
    }
}
