//! Near-field XL-MIMO channel reconstruction: spherical-wave channel model,
//! Cartesian/polar codebooks, channel images, keypoint detection, NOMP-style
//! refinement, a full-codebook baseline and benchmarking.

pub mod baseline;
pub mod bench;
pub mod channel;
pub mod codebook;
pub mod cost;
pub mod detect;
pub mod error;
pub mod imaging;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod profile;
pub mod refiner;
pub mod scenegen;

pub use error::{Error, Result};
