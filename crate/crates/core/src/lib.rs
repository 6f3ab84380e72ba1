//! Concrete score matching on finite discrete spaces.
//!
//! Everything here needs only `alloc`. File formats, configuration and the
//! command line live in the `csm` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod denoise;
pub mod error;
pub mod exact;
pub mod graph;
pub mod math;
pub mod models;
pub mod objectives;
pub mod rng;
pub mod samplers;
pub mod space;
pub mod tape;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use exact::{concrete_score_exact, reconstruct_density, TabularDistribution};
pub use graph::{build_structure, Boundary, NeighborhoodStructure, StructureKind};
pub use space::{DiscreteSpace, State};
