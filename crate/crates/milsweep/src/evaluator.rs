//! Evaluation contract between the study engine and trial workloads.
//!
//! An evaluator gets the configuration, the trial seed, a report callback and
//! a cache accessor. It must call `report(step, value)` once per budget unit,
//! stop as soon as a report answers [`Signal::Prune`], and otherwise return
//! its final value.

use milsweep_core::mil::{
    extract_features, generate_tiles, train_mil, MilModel, PipelineEffect, Signal, SyntheticGenSpec, Task, TileSet,
    TrainSettings, AGGREGATOR, DEFAULT_HIDDEN,
};
use milsweep_core::{Configuration, Stage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Trained-model summary written for every finished or pruned trial.
pub const MODEL_SUMMARY: &str = "model.json";

pub type Report<'a> = dyn FnMut(u32, f64) -> Signal + 'a;

/// Why an evaluation ended without a final value.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    Failed(String),
}

impl From<milsweep_core::MilError> for EvalError {
    fn from(e: milsweep_core::MilError) -> Self {
        EvalError::Failed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Completion {
    Finished(f64),
    /// Stopped after a prune signal.
    Stopped,
}

/// Gives evaluators access to reusable artifacts for a stage set of the
/// current configuration. The engine records every lookup in the journal.
pub trait CacheAccess {
    fn get_or_compute(
        &mut self,
        stages: &[Stage],
        producer: &mut dyn FnMut() -> Result<Vec<u8>, String>,
    ) -> Result<Vec<u8>, EvalError>;

    /// Keeps an inspection artifact for the current trial. Discarded unless
    /// the study persists trial artifacts.
    fn record(&mut self, _name: &str, _payload: &[u8]) -> Result<(), EvalError> {
        Ok(())
    }
}

/// Cache accessor that always computes; for callers without a study directory.
pub struct NoCache;

impl CacheAccess for NoCache {
    fn get_or_compute(
        &mut self,
        _stages: &[Stage],
        producer: &mut dyn FnMut() -> Result<Vec<u8>, String>,
    ) -> Result<Vec<u8>, EvalError> {
        producer().map_err(EvalError::Failed)
    }
}

pub trait Evaluator: Send + Sync {
    fn evaluate(
        &self,
        config: &Configuration,
        seed: u64,
        report: &mut Report<'_>,
        cache: &mut dyn CacheAccess,
    ) -> Result<Completion, EvalError>;

    /// Stable description of everything that influences results besides the
    /// configuration and seed; used to namespace shared caches.
    fn fingerprint(&self) -> String;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Classification,
    Regression,
}

impl From<TaskKind> for Task {
    fn from(t: TaskKind) -> Task {
        match t {
            TaskKind::Classification => Task::Classification,
            TaskKind::Regression => Task::Regression,
        }
    }
}

/// Synthetic multiple-instance-learning evaluator. Tiles for the preprocessing
/// subconfiguration go through the cache; the trial seed drives model
/// initialization only, so cached and fresh tiles give identical results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MilEvaluator {
    pub synthetic: SyntheticGenSpec,
    pub effect: PipelineEffect,
    pub hidden: usize,
    pub task: TaskKind,
}

impl Default for MilEvaluator {
    fn default() -> Self {
        MilEvaluator {
            synthetic: SyntheticGenSpec::default(),
            effect: PipelineEffect::default(),
            hidden: DEFAULT_HIDDEN,
            task: TaskKind::Classification,
        }
    }
}

impl MilEvaluator {
    pub fn tiles(&self, config: &Configuration, cache: &mut dyn CacheAccess) -> Result<TileSet, EvalError> {
        let (instances, noise) = self.effect.preprocessing(config)?;
        let bytes = cache.get_or_compute(&Stage::PREPROCESSING, &mut || {
            let tiles = generate_tiles(&self.synthetic, instances, noise).map_err(|e| e.to_string())?;
            serde_json::to_vec(&tiles).map_err(|e| e.to_string())
        })?;
        serde_json::from_slice(&bytes).map_err(|e| EvalError::Failed(format!("unreadable tile artifact: {e}")))
    }
}

impl Evaluator for MilEvaluator {
    fn evaluate(
        &self,
        config: &Configuration,
        seed: u64,
        report: &mut Report<'_>,
        cache: &mut dyn CacheAccess,
    ) -> Result<Completion, EvalError> {
        let knobs = self.effect.knobs(config)?;
        let tiles = self.tiles(config, cache)?;
        let (train, val) = extract_features(&tiles, self.synthetic.d_sig, knobs.amplitude);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MilModel::init(self.synthetic.d, self.hidden, &mut rng);
        let settings = TrainSettings::from_knobs(&knobs, self.task.into());
        let outcome = train_mil(&train, &val, model, &settings, report)?;
        let summary = serde_json::json!({
            "aggregator": config.get(AGGREGATOR).and_then(|v| v.as_str()),
            "lr": settings.lr,
            "weight_decay": settings.weight_decay,
            "epochs_run": outcome.epochs_run,
            "pruned": outcome.pruned,
            "final_metric": outcome.final_metric,
            "train_bags": train.len(),
            "val_bags": val.len(),
            "model": outcome.model,
        });
        cache.record(MODEL_SUMMARY, summary.to_string().as_bytes())?;
        Ok(if outcome.pruned {
            Completion::Stopped
        } else {
            Completion::Finished(outcome.final_metric)
        })
    }

    fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("evaluator settings serialize");
        crate::sha256_hex(&json)
    }
}
