//! Early-termination policies over intermediate values.
//!
//! Both policies are pure functions of a peer snapshot handed in by the study
//! engine. Hyperband runs asynchronously: a trial is assigned a bracket by id
//! and, at each rung of that bracket, compared against whatever rung values
//! its bracket peers have recorded so far.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::direction::Direction;
use crate::error::PrunerError;

/// Per-step intermediate values of one trial. Steps are strictly increasing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntermediateCurve {
    pub trial_id: u64,
    pub points: Vec<(u32, f64)>,
}

impl IntermediateCurve {
    pub fn new(trial_id: u64) -> Self {
        IntermediateCurve {
            trial_id,
            points: Vec::new(),
        }
    }

    pub fn value_at(&self, step: u32) -> Option<f64> {
        self.points
            .binary_search_by_key(&step, |(s, _)| *s)
            .ok()
            .map(|i| self.points[i].1)
    }

    pub fn last_step(&self) -> Option<u32> {
        self.points.last().map(|(s, _)| *s)
    }
}

/// Median of a non-empty slice; mean of the two central values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Prunes when the trial's value at `step` is strictly worse than the median
/// of peer values at the same step. Never prunes before `warmup_steps` or
/// with fewer than `warmup_trials` peers reporting at `step`.
pub fn median_should_prune(
    curve: &IntermediateCurve,
    peers: &[IntermediateCurve],
    step: u32,
    direction: Direction,
    warmup_trials: usize,
    warmup_steps: u32,
) -> Result<bool, PrunerError> {
    let value = curve.value_at(step).ok_or(PrunerError::NoReport(step))?;
    if step < warmup_steps {
        return Ok(false);
    }
    let peer_values: Vec<f64> = peers
        .iter()
        .filter(|p| p.trial_id != curve.trial_id)
        .filter_map(|p| p.value_at(step))
        .collect();
    if peer_values.is_empty() || peer_values.len() < warmup_trials {
        return Ok(false);
    }
    Ok(direction.worse(value, median(&peer_values)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbandSchedule {
    pub r_min: u32,
    pub max_budget: u32,
    pub eta: u32,
    /// Rung budgets per bracket index. Index 0 is the most aggressive bracket
    /// (`s = s_max`); the last index has the single rung at full budget.
    pub brackets: Vec<Vec<u32>>,
}

impl HyperbandSchedule {
    pub fn new(r_min: u32, max_budget: u32, eta: u32) -> Result<Self, PrunerError> {
        if r_min == 0 {
            return Err(PrunerError::InvalidSchedule("r_min must be positive"));
        }
        if eta < 2 {
            return Err(PrunerError::InvalidSchedule("eta must be at least 2"));
        }
        if max_budget < r_min {
            return Err(PrunerError::InvalidSchedule("R must be at least r_min"));
        }
        let mut s_max = 0u32;
        while (r_min as u64) * (eta as u64).pow(s_max + 1) <= max_budget as u64 {
            s_max += 1;
        }
        let brackets = (0..=s_max)
            .map(|b| {
                let s = s_max - b;
                (0..=s)
                    .map(|i| {
                        let budget = r_min as u64 * (eta as u64).pow(s_max - s + i);
                        budget.min(max_budget as u64) as u32
                    })
                    .collect()
            })
            .collect();
        Ok(HyperbandSchedule {
            r_min,
            max_budget,
            eta,
            brackets,
        })
    }

    pub fn s_max(&self) -> u32 {
        self.brackets.len() as u32 - 1
    }

    pub fn rungs(&self, bracket: u32) -> &[u32] {
        &self.brackets[bracket as usize]
    }

    /// Whether `step` is a pruning checkpoint in `bracket`. The full-budget
    /// rung is the end of training, never a checkpoint.
    pub fn is_checkpoint(&self, bracket: u32, step: u32) -> bool {
        step < self.max_budget && self.rungs(bracket).contains(&step)
    }
}

pub fn hyperband_assign_bracket(trial_id: u64, schedule: &HyperbandSchedule) -> u32 {
    (trial_id % (schedule.s_max() as u64 + 1)) as u32
}

/// Successive-halving cut at one rung. `rung_values` holds `(trial_id, value)`
/// for every trial of the bracket that has reported at this rung, including
/// the trial itself. The trial survives iff it ranks within the top
/// `ceil(m / eta)`; ties keep the lower trial id first.
pub fn sha_should_prune(
    trial_id: u64,
    value: f64,
    rung_values: &[(u64, f64)],
    eta: u32,
    direction: Direction,
) -> bool {
    let mut ranked: Vec<(u64, f64)> = rung_values
        .iter()
        .copied()
        .filter(|(id, _)| *id != trial_id)
        .collect();
    ranked.push((trial_id, value));
    ranked.sort_by(|a, b| direction.cmp_best_first(a.1, b.1).then(a.0.cmp(&b.0)));
    let keep = ranked.len().div_ceil(eta as usize);
    !ranked[..keep].iter().any(|(id, _)| *id == trial_id)
}

fn default_warmup_trials() -> usize {
    5
}
fn default_warmup_steps() -> u32 {
    1
}
fn default_r_min() -> u32 {
    1
}
fn default_max_budget() -> u32 {
    27
}
fn default_eta() -> u32 {
    3
}

/// Pruner selection with its warm-up settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PrunerKind {
    None,
    Median {
        #[serde(default = "default_warmup_trials")]
        warmup_trials: usize,
        #[serde(default = "default_warmup_steps")]
        warmup_steps: u32,
    },
    Hyperband {
        #[serde(default = "default_r_min")]
        r_min: u32,
        #[serde(rename = "R", default = "default_max_budget")]
        max_budget: u32,
        #[serde(default = "default_eta")]
        eta: u32,
        #[serde(default = "default_warmup_trials")]
        warmup_trials: usize,
        #[serde(default = "default_warmup_steps")]
        warmup_steps: u32,
    },
}

/// A peer's curve plus the bookkeeping the pruners need.
#[derive(Clone, Debug, PartialEq)]
pub struct PeerCurve {
    pub curve: IntermediateCurve,
    pub bracket: Option<u32>,
}

/// Stateless pruning decision shared by the study engine.
#[derive(Clone, Debug, PartialEq)]
pub enum Pruner {
    None,
    Median {
        warmup_trials: usize,
        warmup_steps: u32,
    },
    Hyperband {
        schedule: HyperbandSchedule,
        warmup_trials: usize,
        warmup_steps: u32,
    },
}

impl Pruner {
    pub fn from_kind(kind: &PrunerKind) -> Result<Self, PrunerError> {
        Ok(match *kind {
            PrunerKind::None => Pruner::None,
            PrunerKind::Median {
                warmup_trials,
                warmup_steps,
            } => Pruner::Median {
                warmup_trials,
                warmup_steps,
            },
            PrunerKind::Hyperband {
                r_min,
                max_budget,
                eta,
                warmup_trials,
                warmup_steps,
            } => Pruner::Hyperband {
                schedule: HyperbandSchedule::new(r_min, max_budget, eta)?,
                warmup_trials,
                warmup_steps,
            },
        })
    }

    pub fn bracket_for(&self, trial_id: u64) -> Option<u32> {
        match self {
            Pruner::Hyperband { schedule, .. } => Some(hyperband_assign_bracket(trial_id, schedule)),
            _ => None,
        }
    }

    /// `completed_trials` counts trials that ran to completion; Hyperband
    /// stays inactive until `warmup_trials` of them exist.
    pub fn should_prune(
        &self,
        curve: &IntermediateCurve,
        bracket: Option<u32>,
        step: u32,
        peers: &[PeerCurve],
        completed_trials: usize,
        direction: Direction,
    ) -> Result<bool, PrunerError> {
        match self {
            Pruner::None => Ok(false),
            Pruner::Median {
                warmup_trials,
                warmup_steps,
            } => {
                let curves: Vec<IntermediateCurve> = peers.iter().map(|p| p.curve.clone()).collect();
                median_should_prune(curve, &curves, step, direction, *warmup_trials, *warmup_steps)
            }
            Pruner::Hyperband {
                schedule,
                warmup_trials,
                warmup_steps,
            } => {
                let value = curve.value_at(step).ok_or(PrunerError::NoReport(step))?;
                if step < *warmup_steps || completed_trials < *warmup_trials {
                    return Ok(false);
                }
                let bracket = bracket.unwrap_or_else(|| hyperband_assign_bracket(curve.trial_id, schedule));
                if !schedule.is_checkpoint(bracket, step) {
                    return Ok(false);
                }
                let rung_values: Vec<(u64, f64)> = peers
                    .iter()
                    .filter(|p| p.bracket == Some(bracket))
                    .filter_map(|p| p.curve.value_at(step).map(|v| (p.curve.trial_id, v)))
                    .collect();
                Ok(sha_should_prune(curve.trial_id, value, &rung_values, schedule.eta, direction))
            }
        }
    }
}
