//! Mapping from pipeline configuration values to generator and training knobs.
//!
//! | stage             | parameter           | values → knob                                   |
//! |-------------------|---------------------|-------------------------------------------------|
//! | tiling            | `tile_size`         | n = round(4096 / tile_size) instances per bag    |
//! | normalization     | `normalization`     | none → 1.0, A → 0.8, B → 0.7 noise multiplier    |
//! | feature extractor | `feature_extractor` | weak → 0.5, medium → 1.0, strong → 2.0 amplitude |
//! | aggregator        | `aggregator`        | mean, max, attention                             |
//! | training          | `lr`, `epochs`, `weight_decay` | used as given                         |
//!
//! The planted optimum is (strong, B, attention). Tests across the workspace
//! depend on these constants.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use crate::error::MilError;
use crate::space::{Configuration, Value};

pub const TILE_SIZE: &str = "tile_size";
pub const NORMALIZATION: &str = "normalization";
pub const FEATURE_EXTRACTOR: &str = "feature_extractor";
pub const AGGREGATOR: &str = "aggregator";
pub const LEARNING_RATE: &str = "lr";
pub const EPOCHS: &str = "epochs";
pub const WEIGHT_DECAY: &str = "weight_decay";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Max,
    Attention,
}

impl Aggregator {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(Aggregator::Mean),
            "max" => Some(Aggregator::Max),
            "attention" => Some(Aggregator::Attention),
            _ => None,
        }
    }
}

/// Concrete knob settings for one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Knobs {
    pub instances: usize,
    pub noise_multiplier: f64,
    pub amplitude: f64,
    pub aggregator: Aggregator,
    pub lr: f64,
    pub epochs: u32,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineEffect {
    /// Instances per bag are `round(tile_reference / tile_size)`.
    pub tile_reference: f64,
    pub noise: BTreeMap<String, f64>,
    pub amplitude: BTreeMap<String, f64>,
    /// Training values used when the space leaves them out.
    pub default_lr: f64,
    pub default_epochs: u32,
    pub default_weight_decay: f64,
}

impl Default for PipelineEffect {
    fn default() -> Self {
        let noise = [("none", 1.0), ("A", 0.8), ("B", 0.7)];
        let amplitude = [("weak", 0.5), ("medium", 1.0), ("strong", 2.0)];
        PipelineEffect {
            tile_reference: 4096.0,
            noise: noise.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            amplitude: amplitude.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            default_lr: 0.5,
            default_epochs: 20,
            default_weight_decay: 0.0,
        }
    }
}

fn text(config: &Configuration, param: &str) -> Result<String, MilError> {
    match config.get(param) {
        Some(Value::Str(s)) => Ok(s.clone()),
        Some(other) => Ok(other.to_string()),
        None => Err(MilError::MissingKnob(param.into())),
    }
}

fn number(config: &Configuration, param: &str) -> Option<Result<f64, MilError>> {
    config.get(param).map(|v| {
        v.as_f64().ok_or_else(|| MilError::UnknownKnob {
            param: param.into(),
            value: v.to_string(),
        })
    })
}

impl PipelineEffect {
    pub fn instances_for(&self, tile_size: f64) -> usize {
        (libm::round(self.tile_reference / tile_size) as usize).max(1)
    }

    /// Preprocessing knobs only (tile count, noise multiplier).
    pub fn preprocessing(&self, config: &Configuration) -> Result<(usize, f64), MilError> {
        let tile = number(config, TILE_SIZE).ok_or_else(|| MilError::MissingKnob(TILE_SIZE.into()))??;
        if !(tile > 0.0) {
            return Err(MilError::UnknownKnob {
                param: TILE_SIZE.into(),
                value: text(config, TILE_SIZE)?,
            });
        }
        let norm = text(config, NORMALIZATION)?;
        let noise = *self.noise.get(&norm).ok_or(MilError::UnknownKnob {
            param: NORMALIZATION.into(),
            value: norm,
        })?;
        Ok((self.instances_for(tile), noise))
    }

    pub fn knobs(&self, config: &Configuration) -> Result<Knobs, MilError> {
        let (instances, noise_multiplier) = self.preprocessing(config)?;
        let extractor = text(config, FEATURE_EXTRACTOR)?;
        let amplitude = *self.amplitude.get(&extractor).ok_or(MilError::UnknownKnob {
            param: FEATURE_EXTRACTOR.into(),
            value: extractor,
        })?;
        let agg = text(config, AGGREGATOR)?;
        let aggregator = Aggregator::parse(&agg).ok_or(MilError::UnknownKnob {
            param: AGGREGATOR.into(),
            value: agg,
        })?;
        let lr = number(config, LEARNING_RATE).transpose()?.unwrap_or(self.default_lr);
        let epochs = number(config, EPOCHS)
            .transpose()?
            .map(|e| libm::round(e) as u32)
            .unwrap_or(self.default_epochs);
        let weight_decay = number(config, WEIGHT_DECAY)
            .transpose()?
            .unwrap_or(self.default_weight_decay);
        Ok(Knobs {
            instances,
            noise_multiplier,
            amplitude,
            aggregator,
            lr,
            epochs,
            weight_decay,
        })
    }
}
