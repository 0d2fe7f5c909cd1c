//! Submap-based LiDAR place recognition and 6-DoF registration over
//! semantic object graphs.

pub mod cli;
pub mod descriptors;
pub mod error;
pub mod geometry;
pub mod graphnet;
pub mod instances;
pub mod objectives;
pub mod pipeline;
pub mod registration;
pub mod retrieval;
pub mod spatial;
pub mod submap;
pub mod synth;

pub use error::{Error, Result};
