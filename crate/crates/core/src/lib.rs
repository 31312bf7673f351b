//! Six-dimensional pose estimation (position and ZYX Euler rotation) of a
//! mobile station in an indoor RIS-aided mmWave system.
//!
//! The crate synthesizes geometric channel parameters, computes Cramér–Rao
//! position and rotation error bounds from analytic Jacobians, and estimates
//! the pose from noisy parameter observations with a Bayesian network sampled
//! by a No-U-Turn Sampler.

pub mod channel;
pub mod crlb;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod posterior;
pub mod sampler;

pub use error::{Error, Result};

/// Seedable generator used for every random draw in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;
