//! Desk-scale multiple-instance learning: synthetic bags whose difficulty is
//! set by the pipeline configuration, attention/mean/max pooling, and
//! deterministic full-batch training with per-epoch validation reports.

mod auc;
mod data;
mod effect;
mod model;
mod train;

pub use auc::auc;
pub use data::{extract_features, generate_bags, generate_tiles, Bag, SyntheticGenSpec, TileBag, TileSet};
pub use effect::{
    Aggregator, Knobs, PipelineEffect, AGGREGATOR, EPOCHS, FEATURE_EXTRACTOR, LEARNING_RATE, NORMALIZATION,
    TILE_SIZE, WEIGHT_DECAY,
};
pub use model::{attention_forward, gradient, objective, pool, predict, MilModel, Task};
pub use train::{train_mil, validation_metric, Signal, TrainOutcome, TrainSettings};

/// Attention hidden width used by the evaluator.
pub const DEFAULT_HIDDEN: usize = 8;
