//! Tree-structured Parzen estimator.
//!
//! Each active parameter is modelled independently along the sampled branch.
//! Completed observations in which the parameter was active are split into a
//! good set (best `max(1, ceil(gamma * n))` by direction-adjusted value, ties
//! to the earlier trial) and a bad set. Densities `l` (good) and `g` (bad) are
//! fitted, `n_candidates` draws are taken from `l`, and the draw maximizing
//! `l(x) / g(x)` is kept. Pruned observations never enter the densities.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::parzen::{CategoricalEstimator, ParzenEstimator};
use super::{draw_uniform, sample_random, sample_with, Observation, ObservationHistory};
use crate::direction::Direction;
use crate::error::SamplerError;
use crate::space::{Configuration, Domain, ParamSpec, PipelineSpace, Value};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpeParams {
    pub n_startup: usize,
    pub gamma_fraction: f64,
    pub n_candidates: usize,
    /// Kernel bandwidth floor as a fraction of the (log-transformed) domain width.
    pub bandwidth_floor: f64,
}

impl Default for TpeParams {
    fn default() -> Self {
        TpeParams {
            n_startup: 10,
            gamma_fraction: 0.25,
            n_candidates: 24,
            bandwidth_floor: 1e-3,
        }
    }
}

/// Index of the candidate with the largest `log l - log g`; the first wins ties.
pub fn select_candidate<L, G>(candidates: &[f64], log_l: L, log_g: G) -> usize
where
    L: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &x) in candidates.iter().enumerate() {
        let score = log_l(x) - log_g(x);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

/// Transformed sampling interval of a numeric domain.
fn numeric_bounds(domain: &Domain) -> Option<(f64, f64)> {
    match domain {
        Domain::ContinuousLinear { low, high } => Some((*low, *high)),
        Domain::ContinuousLog { low, high } => Some((libm::log(*low), libm::log(*high))),
        Domain::Integer { low, high } => Some((*low as f64 - 0.5, *high as f64 + 0.5)),
        Domain::Categorical { .. } => None,
    }
}

fn to_internal(domain: &Domain, value: &Value) -> Option<f64> {
    let x = value.as_f64()?;
    match domain {
        Domain::ContinuousLog { .. } => Some(libm::log(x)),
        _ => Some(x),
    }
}

fn from_internal(domain: &Domain, x: f64) -> Value {
    match domain {
        Domain::ContinuousLinear { low, high } => Value::Real(x.clamp(*low, *high)),
        Domain::ContinuousLog { low, high } => Value::Real(libm::exp(x).clamp(*low, *high)),
        Domain::Integer { low, high } => Value::Int((libm::round(x) as i64).clamp(*low, *high)),
        Domain::Categorical { .. } => unreachable!("categorical handled separately"),
    }
}

/// Splits observations (already restricted to those where the parameter is
/// active) into good and bad sets.
fn split<'a>(
    mut obs: Vec<&'a Observation>,
    direction: Direction,
    gamma: f64,
) -> (Vec<&'a Observation>, Vec<&'a Observation>) {
    obs.sort_by(|a, b| {
        direction
            .cmp_best_first(a.value, b.value)
            .then(a.trial_id.cmp(&b.trial_id))
    });
    let n = obs.len();
    let n_good = (libm::ceil(gamma * n as f64) as usize).clamp(1, n);
    let bad = obs.split_off(n_good);
    (obs, bad)
}

fn suggest_param<R: Rng + ?Sized>(
    param: &ParamSpec,
    completed: &[&Observation],
    direction: Direction,
    params: &TpeParams,
    rng: &mut R,
) -> Value {
    let observed: Vec<&Observation> = completed
        .iter()
        .copied()
        .filter(|o| o.config.entries.contains_key(&param.name))
        .collect();
    if observed.is_empty() {
        return draw_uniform(&param.domain, rng);
    }
    let (good, bad) = split(observed, direction, params.gamma_fraction);

    match &param.domain {
        Domain::Categorical { choices } => {
            let index_of = |o: &&Observation| {
                let v = o.config.entries.get(&param.name).and_then(Value::as_str);
                v.and_then(|v| choices.iter().position(|c| c == v))
            };
            let good_idx: Vec<usize> = good.iter().filter_map(index_of).collect();
            let bad_idx: Vec<usize> = bad.iter().filter_map(index_of).collect();
            let l = CategoricalEstimator::fit(&good_idx, choices.len());
            let g = CategoricalEstimator::fit(&bad_idx, choices.len());
            let candidates: Vec<f64> = (0..params.n_candidates.max(1))
                .map(|_| l.sample(rng) as f64)
                .collect();
            let pick = select_candidate(
                &candidates,
                |x| libm::log(l.pmf(x as usize)),
                |x| libm::log(g.pmf(x as usize)),
            );
            Value::Str(choices[candidates[pick] as usize].clone())
        }
        domain => {
            let (lo, hi) = numeric_bounds(domain).expect("numeric domain");
            let floor = params.bandwidth_floor * (hi - lo);
            let values = |set: &[&Observation]| -> Vec<f64> {
                set.iter()
                    .filter_map(|o| o.config.entries.get(&param.name))
                    .filter_map(|v| to_internal(domain, v))
                    .collect()
            };
            let l = ParzenEstimator::fit(&values(&good), lo, hi, floor);
            let g = ParzenEstimator::fit(&values(&bad), lo, hi, floor);
            let candidates: Vec<f64> = (0..params.n_candidates.max(1)).map(|_| l.sample(rng)).collect();
            let pick = select_candidate(&candidates, |x| l.log_pdf(x), |x| g.log_pdf(x));
            from_internal(domain, candidates[pick])
        }
    }
}

/// Suggests the next configuration. Falls back to random sampling while
/// fewer than `n_startup` complete observations exist.
pub fn sample_tpe<R: Rng + ?Sized>(
    space: &PipelineSpace,
    history: &ObservationHistory,
    params: &TpeParams,
    rng: &mut R,
) -> Result<Configuration, SamplerError> {
    if let Some(o) = history.entries.iter().find(|o| o.config.space_name != space.name) {
        return Err(SamplerError::SpaceMismatch {
            expected: space.name.clone(),
            found: o.config.space_name.clone(),
        });
    }
    let completed: Vec<&Observation> = history.completed().collect();
    if completed.len() < params.n_startup || completed.is_empty() {
        return Ok(sample_random(space, rng));
    }
    Ok(sample_with(space, |param: &ParamSpec, _: &BTreeMap<String, Value>| {
        suggest_param(param, &completed, history.direction, params, rng)
    }))
}
