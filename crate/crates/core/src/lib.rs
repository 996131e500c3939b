//! Nested sequential Monte Carlo.
//!
//! The central abstraction is the properly weighted sampler
//! ([`sampler::ProperSampler`]): an object built for an unnormalized density
//! that reports an unbiased estimate of its normalizing constant and produces
//! draws that are properly weighted by it. Importance samplers and SMC runs
//! are both such samplers, so either can serve as the proposal mechanism of
//! another, to any depth.

pub mod backward;
pub mod engine;
pub mod error;
pub mod history;
pub mod metrics;
pub mod models;
pub mod nested_is;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod sis;
pub mod target;
pub mod weight;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use weight::LogWeight;
