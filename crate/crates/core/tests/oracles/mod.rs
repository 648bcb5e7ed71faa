//! Reference implementations written independently of the library code, plus
//! a generator of random conditional spaces. Shared with the acceptance suite.
#![allow(dead_code)]

use milsweep_core::mil::{objective, Aggregator, Bag, MilModel, Task};
use milsweep_core::pruner::IntermediateCurve;
use milsweep_core::{Direction, Domain, ParamSpec, PipelineSpace, Stage, Value};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AUC by counting every (positive, negative) pair.
pub fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            pos += 1;
        } else {
            neg += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / (pos as f64 * neg as f64)
}

/// Grid size by brute force: every parameter takes one of its grid values or
/// "absent"; an assignment counts when exactly the active parameters are
/// present.
pub fn grid_count_brute_force(space: &PipelineSpace, points: usize) -> u64 {
    let options: Vec<Vec<Option<Value>>> = space
        .params
        .iter()
        .map(|p| {
            let mut v: Vec<Option<Value>> = p.domain.grid_values(points).into_iter().map(Some).collect();
            v.push(None);
            v
        })
        .collect();
    let mut count = 0u64;
    let mut idx = vec![0usize; options.len()];
    loop {
        let assignment: Vec<&Option<Value>> = idx.iter().zip(&options).map(|(&i, o)| &o[i]).collect();
        let consistent = space.params.iter().enumerate().all(|(k, p)| {
            let active = match &p.condition {
                None => true,
                Some(c) => {
                    let parent = space.params.iter().position(|q| q.name == c.parent).unwrap();
                    match assignment[parent] {
                        Some(Value::Str(s)) => c.values.contains(s),
                        _ => false,
                    }
                }
            };
            active == assignment[k].is_some()
        });
        if consistent {
            count += 1;
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return count;
            }
            idx[pos] += 1;
            if idx[pos] < options[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// A random valid space: up to `max_params` parameters, some conditional on
/// an earlier categorical parameter, shuffled declaration order.
pub fn fuzz_space(seed: u64, max_params: usize) -> PipelineSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_params);
    let mut params: Vec<ParamSpec> = Vec::new();
    for i in 0..n {
        let name = format!("p{i}");
        let stage = *Stage::ALL.choose(&mut rng).unwrap();
        let mut spec = match rng.random_range(0..5) {
            0 | 1 => {
                let k = rng.random_range(1..=3);
                ParamSpec::categorical(&name, stage, (0..k).map(|c| format!("c{c}")))
            }
            2 => ParamSpec::new(&name, stage, Domain::ContinuousLinear { low: -1.0, high: 1.0 }),
            3 => ParamSpec::new(&name, stage, Domain::ContinuousLog { low: 1e-3, high: 1.0 }),
            _ => {
                let low = rng.random_range(-3..3);
                ParamSpec::new(&name, stage, Domain::Integer { low, high: low + rng.random_range(1..4) })
            }
        };
        let parents: Vec<&ParamSpec> = params.iter().filter(|p| p.domain.is_categorical()).collect();
        if !parents.is_empty() && rng.random_bool(0.5) {
            let parent = *parents.choose(&mut rng).unwrap();
            let Domain::Categorical { choices } = &parent.domain else { unreachable!() };
            let mut values: Vec<String> = choices.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
            if values.is_empty() {
                values.push(choices[0].clone());
            }
            spec = spec.when(parent.name.clone(), values);
        }
        params.push(spec);
    }
    // Declaration order must not matter.
    for i in (1..params.len()).rev() {
        let j = rng.random_range(0..=i);
        params.swap(i, j);
    }
    PipelineSpace::new(format!("fuzz{seed}"), params)
}

/// Median rule by sorting peer values at `step`.
pub fn median_prune_reference(
    curve: &IntermediateCurve,
    peers: &[IntermediateCurve],
    step: u32,
    direction: Direction,
    warmup_trials: usize,
    warmup_steps: u32,
) -> bool {
    let own = curve.points.iter().find(|(s, _)| *s == step).map(|(_, v)| *v).unwrap();
    if step < warmup_steps {
        return false;
    }
    let mut vals: Vec<f64> = Vec::new();
    for p in peers {
        if p.trial_id == curve.trial_id {
            continue;
        }
        for &(s, v) in &p.points {
            if s == step {
                vals.push(v);
            }
        }
    }
    if vals.is_empty() || vals.len() < warmup_trials {
        return false;
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = vals.len();
    let med = if m % 2 == 1 { vals[m / 2] } else { 0.5 * (vals[m / 2 - 1] + vals[m / 2]) };
    match direction {
        Direction::Minimize => own > med,
        Direction::Maximize => own < med,
    }
}

/// Successive-halving survival by rank counting: the number of rung entries
/// ranked ahead of the trial must be below `ceil(m / eta)`.
pub fn sha_prune_reference(trial_id: u64, value: f64, rung: &[(u64, f64)], eta: u32, direction: Direction) -> bool {
    let others: Vec<(u64, f64)> = rung.iter().copied().filter(|(id, _)| *id != trial_id).collect();
    let m = others.len() + 1;
    let keep = (m + eta as usize - 1) / eta as usize;
    let ahead = others
        .iter()
        .filter(|(id, v)| {
            let better = match direction {
                Direction::Minimize => *v < value,
                Direction::Maximize => *v > value,
            };
            better || (*v == value && *id < trial_id)
        })
        .count();
    ahead >= keep
}

/// Central finite-difference gradient of `objective`, in parameter order.
pub fn fd_gradient(model: &MilModel, bags: &[Bag], agg: Aggregator, task: Task, wd: f64, h: f64) -> Vec<f64> {
    let n = model.param_count();
    (0..n)
        .map(|i| {
            let mut plus = model.clone();
            let mut minus = model.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            *minus.params_mut().nth(i).unwrap() -= h;
            (objective(&plus, bags, agg, task, wd) - objective(&minus, bags, agg, task, wd)) / (2.0 * h)
        })
        .collect()
}

pub fn random_bag<R: Rng>(rng: &mut R, id: u32, n: usize, d: usize, label: f64) -> Bag {
    let instances = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    Bag::new(id, n, d, instances, label)
}
