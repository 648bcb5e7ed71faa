//! Configuration samplers for optimization mode.

mod parzen;
mod tpe;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::direction::Direction;
use crate::space::{Configuration, Domain, ParamSpec, PipelineSpace, Value};

pub use parzen::{CategoricalEstimator, ParzenEstimator};
pub use tpe::{sample_tpe, select_candidate, TpeParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationState {
    Complete,
    Pruned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub trial_id: u64,
    pub config: Configuration,
    pub value: f64,
    pub state: ObservationState,
}

/// Evaluated trials a sampler conditions on.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationHistory {
    pub direction: Direction,
    pub entries: Vec<Observation>,
}

impl ObservationHistory {
    pub fn new(direction: Direction) -> Self {
        ObservationHistory {
            direction,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, trial_id: u64, config: Configuration, value: f64, state: ObservationState) {
        self.entries.push(Observation {
            trial_id,
            config,
            value,
            state,
        });
    }

    /// Complete entries with a finite value.
    pub fn completed(&self) -> impl Iterator<Item = &Observation> {
        self.entries
            .iter()
            .filter(|o| o.state == ObservationState::Complete && o.value.is_finite())
    }
}

/// Draws one value from a parameter's domain.
pub(crate) fn draw_uniform<R: Rng + ?Sized>(domain: &Domain, rng: &mut R) -> Value {
    match domain {
        Domain::Categorical { choices } => {
            let i = rng.random_range(0..choices.len());
            Value::Str(choices[i].clone())
        }
        Domain::ContinuousLinear { low, high } => Value::Real(rng.random_range(*low..=*high)),
        Domain::ContinuousLog { low, high } => {
            let x = libm::exp(rng.random_range(libm::log(*low)..=libm::log(*high)));
            Value::Real(x.clamp(*low, *high))
        }
        Domain::Integer { low, high } => Value::Int(rng.random_range(*low..=*high)),
    }
}

/// Independent uniform draws per active parameter, parents before children.
pub fn sample_random<R: Rng + ?Sized>(space: &PipelineSpace, rng: &mut R) -> Configuration {
    sample_with(space, |p: &ParamSpec, _: &BTreeMap<String, Value>| draw_uniform(&p.domain, rng))
}

pub(crate) fn sample_with<F>(space: &PipelineSpace, mut draw: F) -> Configuration
where
    F: FnMut(&ParamSpec, &BTreeMap<String, Value>) -> Value,
{
    let mut entries = BTreeMap::new();
    for idx in space.sampling_order() {
        let param = &space.params[idx];
        if space.is_active(param, &entries) {
            let v = draw(param, &entries);
            entries.insert(param.name.clone(), v);
        }
    }
    Configuration {
        space_name: space.name.clone(),
        entries,
    }
}

/// Sampler selection for optimize mode. Grid sampling is driven by the study
/// engine from the enumerated grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplerKind {
    Random,
    Tpe(#[serde(default)] TpeParams),
    Grid,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Stage;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_choice_always_drawn() {
        let space = PipelineSpace::new("s", vec![ParamSpec::categorical("a", Stage::Aggregator, ["A"])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_random(&space, &mut rng).get("a"), Some(&Value::from("A")));
        }
    }

    #[test]
    fn uniform_mean_is_half() {
        let space = PipelineSpace::new(
            "s",
            vec![ParamSpec::new("x", Stage::Training, Domain::ContinuousLinear { low: 0.0, high: 1.0 })],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let sum: f64 = (0..n)
            .map(|_| sample_random(&space, &mut rng).get("x").unwrap().as_f64().unwrap())
            .sum();
        assert!((sum / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn conditional_only_under_parent() {
        let space = PipelineSpace::new(
            "s",
            vec![
                ParamSpec::categorical("k", Stage::Aggregator, ["child_under_b", "a", "b"]).when("p", ["B"]),
                ParamSpec::categorical("p", Stage::Aggregator, ["A", "B"]),
            ],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut saw_child = false;
        for _ in 0..200 {
            let c = sample_random(&space, &mut rng);
            match c.get("p").unwrap().as_str().unwrap() {
                "A" => assert!(c.get("k").is_none()),
                _ => {
                    assert!(c.get("k").is_some());
                    saw_child = true;
                }
            }
            space.check_configuration(&c).unwrap();
        }
        assert!(saw_child);
    }
}
