//! Core algorithms for benchmarking and budgeted search over conditional
//! pipeline configuration spaces.
//!
//! Everything here is `no_std` + `alloc` and free of IO: search spaces and
//! grid enumeration, random and TPE samplers, median and Hyperband pruners,
//! the synthetic multiple-instance-learning evaluator, journal replay and the
//! result query layer. The `milsweep` crate adds persistence, the study
//! engine, the HTTP service and the CLI.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod direction;
pub mod error;
pub mod mil;
pub mod pruner;
pub mod results;
pub mod sampler;
pub mod space;
pub mod speedup;
pub mod trial;

pub use direction::Direction;
pub use error::{JournalError, MilError, PrunerError, QueryError, SamplerError, SpaceError, SpeedupError};
pub use space::{Configuration, Domain, ParamSpec, PipelineSpace, Stage, Value};
