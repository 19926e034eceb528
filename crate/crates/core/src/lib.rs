//! Single-image rain streak removal with squeeze-and-excitation context
//! aggregation networks and their recurrent multi-stage extension.

pub mod audit;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rain;
pub mod raster;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
