//! Asynchronous successive halving.
//!
//! Budgets form a geometric ladder `b_min * eta^i <= b_max`. Each result is
//! judged once, on arrival, against everything already completed at its rung:
//! it is promoted when its rank is within the top `ceil(n / eta)` of the `n`
//! results there. Earlier arrivals win ties. Results at the top rung and
//! non-finite objectives are never promoted.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Promote { next_budget: u64 },
    Stop,
}

#[derive(Debug, Clone)]
pub struct RungLadder {
    eta: u64,
    budgets: Vec<u64>,
    completed: Vec<Vec<(usize, f64)>>,
    promoted: Vec<Vec<usize>>,
}

impl RungLadder {
    pub fn new(b_min: u64, b_max: u64, eta: u64) -> Result<Self> {
        if b_min == 0 || b_max < b_min {
            return Err(Error::InvalidConfig(format!(
                "budget ladder needs 0 < b_min <= b_max, got {b_min} and {b_max}"
            )));
        }
        if eta < 2 {
            return Err(Error::InvalidConfig(format!("eta must be at least 2, got {eta}")));
        }
        let mut budgets = vec![b_min];
        while let Some(next) = budgets.last().unwrap().checked_mul(eta) {
            if next > b_max {
                break;
            }
            budgets.push(next);
        }
        let n = budgets.len();
        Ok(Self {
            eta,
            budgets,
            completed: vec![Vec::new(); n],
            promoted: vec![Vec::new(); n],
        })
    }

    pub fn budgets(&self) -> &[u64] {
        &self.budgets
    }

    pub fn top_budget(&self) -> u64 {
        *self.budgets.last().unwrap()
    }

    pub fn rung_of(&self, budget: u64) -> Option<usize> {
        self.budgets.iter().position(|&b| b == budget)
    }

    /// Results recorded at `rung`, in arrival order.
    pub fn completed(&self, rung: usize) -> &[(usize, f64)] {
        &self.completed[rung]
    }

    /// Trials promoted out of `rung`, in decision order.
    pub fn promoted(&self, rung: usize) -> &[usize] {
        &self.promoted[rung]
    }

    pub fn on_result(&mut self, trial_id: usize, budget: u64, objective: f64) -> Result<Decision> {
        let rung = self
            .rung_of(budget)
            .ok_or_else(|| Error::Contract(format!("budget {budget} is not on the ladder")))?;
        if objective.is_nan() {
            return Err(Error::Contract("objective is NaN".into()));
        }
        let done = &mut self.completed[rung];
        if done.iter().any(|&(id, _)| id == trial_id) {
            return Err(Error::Contract(format!("trial {trial_id} already reported at rung {rung}")));
        }
        let ahead = done.iter().filter(|&&(_, o)| o <= objective).count();
        done.push((trial_id, objective));
        let n = done.len() as u64;
        let quota = n.div_ceil(self.eta);
        let top = rung + 1 == self.budgets.len();
        if !top && objective.is_finite() && (ahead as u64 + 1) <= quota {
            self.promoted[rung].push(trial_id);
            Ok(Decision::Promote {
                next_budget: self.budgets[rung + 1],
            })
        } else {
            Ok(Decision::Stop)
        }
    }
}
