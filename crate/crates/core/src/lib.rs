//! Person-specific facial-motion modelling.
//!
//! The crate learns per-person facial-movement embeddings with a
//! facial-motion cycle-consistency model (expression removal to a neutral
//! face, expression retrieval back to the input) and evaluates them with
//! linear-probe AU detection, transfer protocols, curriculum temporal pair
//! sampling and density-based cluster discovery.

pub mod align;
pub mod au;
pub mod cluster;
pub mod data;
pub mod error;
pub mod image;
pub mod model;
pub mod nn;
pub mod probe;
pub mod regimes;
pub mod report;

pub use error::{Error, Result};
