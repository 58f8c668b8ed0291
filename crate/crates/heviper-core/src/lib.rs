//! Height-aware visual place recognition engine.
//!
//! Two-stage retrieval: a height descriptor queried against a compact
//! height database selects height-level sub-databases, then a place
//! descriptor is matched within the selected partition. Both descriptors
//! come from lightweight bypass-adapter branches sharing one (stubbed)
//! backbone forward pass.

pub mod descriptor;
pub mod error;
pub mod eval;
pub mod heightdb;
pub(crate) mod fileio;
pub mod raster;
pub mod retrieval;
pub mod rng;
pub mod adapter;
pub mod tensor;

pub use error::{Error, Result};
