//! Synthetic bags standing in for tiled slides.
//!
//! Generation is split in two so the preprocessing half can be cached:
//! [`generate_tiles`] draws the noise matrices and witness masks for a given
//! tile count and noise multiplier, and [`extract_features`] adds the feature
//! extractor's signal amplitude to the informative dims of witness instances.

use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::effect::PipelineEffect;
use crate::error::MilError;
use crate::space::Configuration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticGenSpec {
    pub d: usize,
    pub d_sig: usize,
    pub witness_rate: f64,
    /// Instance noise std before the normalization multiplier. The default
    /// keeps the planted optimum clear of its neighbours over 5 repeats.
    pub base_noise: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

impl Default for SyntheticGenSpec {
    fn default() -> Self {
        SyntheticGenSpec {
            d: 16,
            d_sig: 4,
            witness_rate: 0.1,
            base_noise: 1.6,
            n_train: 64,
            n_val: 64,
            seed: 0,
        }
    }
}

impl SyntheticGenSpec {
    pub fn validate(&self) -> Result<(), MilError> {
        if self.d_sig < 1 || self.d_sig > self.d {
            return Err(MilError::InvalidSpec("requires 1 <= d_sig <= d"));
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return Err(MilError::InvalidSpec("requires 0 < witness_rate <= 1"));
        }
        if !(self.base_noise >= 0.0 && self.base_noise.is_finite()) {
            return Err(MilError::InvalidSpec("base_noise must be finite and non-negative"));
        }
        if self.n_train < 2 || self.n_val < 2 {
            return Err(MilError::InvalidSpec("need at least two bags per split"));
        }
        Ok(())
    }
}

/// A bag of instance feature vectors, stored row-major (`n × d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: u32,
    pub n: usize,
    pub d: usize,
    pub instances: Vec<f64>,
    pub label: f64,
}

impl Bag {
    pub fn new(id: u32, n: usize, d: usize, instances: Vec<f64>, label: f64) -> Self {
        assert!(n >= 1 && instances.len() == n * d);
        Bag {
            id,
            n,
            d,
            instances,
            label,
        }
    }

    pub fn instance(&self, k: usize) -> &[f64] {
        &self.instances[k * self.d..(k + 1) * self.d]
    }

    pub fn is_positive(&self) -> bool {
        self.label > 0.5
    }
}

/// Preprocessed (tiled, normalized) bag before feature extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileBag {
    pub id: u32,
    pub n: usize,
    pub noise: Vec<f64>,
    pub witness: Vec<bool>,
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSet {
    pub d: usize,
    pub train: Vec<TileBag>,
    pub val: Vec<TileBag>,
}

fn tile_split(
    rng: &mut ChaCha8Rng,
    count: usize,
    first_id: u32,
    n: usize,
    d: usize,
    noise_std: f64,
    witnesses: usize,
) -> Vec<TileBag> {
    (0..count)
        .map(|j| {
            let label = (j % 2) as f64;
            let noise: Vec<f64> = (0..n * d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * noise_std
                })
                .collect();
            let mut witness = alloc::vec![false; n];
            let chosen = index::sample(rng, n, witnesses);
            if label > 0.5 {
                for k in chosen {
                    witness[k] = true;
                }
            }
            TileBag {
                id: first_id + j as u32,
                n,
                noise,
                witness,
                label,
            }
        })
        .collect()
}

/// Draws tiles for `instances` per bag. The random stream depends on the
/// seed and tile count only, so normalization choices rescale identical draws.
pub fn generate_tiles(spec: &SyntheticGenSpec, instances: usize, noise_multiplier: f64) -> Result<TileSet, MilError> {
    spec.validate()?;
    let n = instances.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(n as u64);
    let witnesses = (libm::ceil(spec.witness_rate * n as f64) as usize).clamp(1, n);
    let noise_std = spec.base_noise * noise_multiplier;
    let train = tile_split(&mut rng, spec.n_train, 0, n, spec.d, noise_std, witnesses);
    let val = tile_split(&mut rng, spec.n_val, spec.n_train as u32, n, spec.d, noise_std, witnesses);
    Ok(TileSet { d: spec.d, train, val })
}

fn featurize(tiles: &[TileBag], d: usize, d_sig: usize, amplitude: f64) -> Vec<Bag> {
    tiles
        .iter()
        .map(|t| {
            let mut instances = t.noise.clone();
            for (k, &w) in t.witness.iter().enumerate() {
                if w {
                    for j in 0..d_sig {
                        instances[k * d + j] += amplitude;
                    }
                }
            }
            Bag::new(t.id, t.n, d, instances, t.label)
        })
        .collect()
}

/// Adds `amplitude` to the first `d_sig` dims of every witness instance.
pub fn extract_features(tiles: &TileSet, d_sig: usize, amplitude: f64) -> (Vec<Bag>, Vec<Bag>) {
    (
        featurize(&tiles.train, tiles.d, d_sig, amplitude),
        featurize(&tiles.val, tiles.d, d_sig, amplitude),
    )
}

/// Train and validation bags for one configuration.
pub fn generate_bags(
    spec: &SyntheticGenSpec,
    effect: &PipelineEffect,
    config: &Configuration,
) -> Result<(Vec<Bag>, Vec<Bag>), MilError> {
    let knobs = effect.knobs(config)?;
    let tiles = generate_tiles(spec, knobs.instances, knobs.noise_multiplier)?;
    Ok(extract_features(&tiles, spec.d_sig, knobs.amplitude))
}
