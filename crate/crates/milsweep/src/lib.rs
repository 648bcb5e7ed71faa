//! Study runner for conditional pipeline search spaces: exhaustive benchmarks,
//! budgeted optimization with samplers and pruners, a crash-safe journal with
//! resume, a content-addressed artifact cache, CSV export and a read-only HTTP
//! API. Algorithms live in `milsweep-core`.

pub mod cache;
pub mod config;
pub mod engine;
mod error;
pub mod evaluator;
pub mod export;
pub mod journal;
pub mod lock;
pub mod service;

pub use error::{Error, Result};
pub use milsweep_core as core;

use sha2::{Digest, Sha256};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
