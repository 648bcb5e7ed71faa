//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use std::path::Path;

use milsweep::core::pruner::PrunerKind;
use milsweep::core::sampler::SamplerKind;
use milsweep::core::trial::StudyMode;
use milsweep::core::{ParamSpec, PipelineSpace, Stage};
use milsweep::engine::{start_study, RunOptions, StudyOutcome, StudyPlan};
use milsweep::evaluator::MilEvaluator;

/// The four pipeline stages of the effect table, 81 configurations.
pub fn planted_space() -> PipelineSpace {
    PipelineSpace::new(
        "planted",
        vec![
            ParamSpec::categorical("tile_size", Stage::Tiling, ["256", "512", "1024"]),
            ParamSpec::categorical("normalization", Stage::Normalization, ["none", "A", "B"]),
            ParamSpec::categorical("feature_extractor", Stage::FeatureExtractor, ["weak", "medium", "strong"]),
            ParamSpec::categorical("aggregator", Stage::Aggregator, ["mean", "max", "attention"]),
        ],
    )
}

pub fn optimize_plan(space: PipelineSpace, sampler: SamplerKind, pruner: PrunerKind, trials: u64, seed: u64) -> StudyPlan {
    let mut plan = StudyPlan::new("opt", StudyMode::Optimize, space);
    plan.sampler = sampler;
    plan.pruner = pruner;
    plan.budget = Some(trials);
    plan.seed = seed;
    plan
}

/// Runs a study in a fresh directory under `root`.
pub fn run_in(root: &Path, name: &str, plan: &StudyPlan, evaluator: &MilEvaluator) -> StudyOutcome {
    let dir = root.join(name);
    start_study(plan, evaluator, &dir, &RunOptions::for_dir(&dir)).expect("study runs")
}

use milsweep::core::mil::Signal;
use milsweep::core::Configuration;
use milsweep::evaluator::{CacheAccess, Completion, EvalError, Evaluator, Report};

/// Cheap deterministic evaluator over a parameter `x`: the value at epoch `e`
/// approaches `(x - 0.3)^2 + jitter * (seed mod 7)` from above. Fails when `x`
/// is exactly `fail_at`.
pub struct Bowl {
    pub epochs: u32,
    pub jitter: f64,
    pub fail_at: Option<f64>,
}

impl Bowl {
    pub fn new(epochs: u32) -> Self {
        Bowl {
            epochs,
            jitter: 1e-3,
            fail_at: None,
        }
    }
}

impl Evaluator for Bowl {
    fn evaluate(
        &self,
        config: &Configuration,
        seed: u64,
        report: &mut Report<'_>,
        cache: &mut dyn CacheAccess,
    ) -> Result<Completion, EvalError> {
        let x = config.get("x").and_then(|v| v.as_f64()).unwrap_or(0.0);
        if Some(x) == self.fail_at {
            return Err(EvalError::Failed("x hit the failure point".into()));
        }
        cache.get_or_compute(&Stage::PREPROCESSING, &mut || Ok(vec![1, 2, 3]))?;
        let base = (x - 0.3) * (x - 0.3) + self.jitter * (seed % 7) as f64;
        let mut value = base;
        for e in 1..=self.epochs {
            value = base + 1.0 / f64::from(e);
            if report(e, value) == Signal::Prune {
                return Ok(Completion::Stopped);
            }
        }
        Ok(Completion::Finished(value))
    }

    fn fingerprint(&self) -> String {
        format!("bowl-{}", self.epochs)
    }
}

pub fn bowl_space() -> PipelineSpace {
    use milsweep::core::Domain;
    PipelineSpace::new(
        "bowl",
        vec![
            ParamSpec::categorical("normalization", Stage::Normalization, ["none", "A"]),
            ParamSpec::new("x", Stage::Training, Domain::ContinuousLinear { low: 0.0, high: 1.0 }),
        ],
    )
}
