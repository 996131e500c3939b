//! Exact inference for the models small or structured enough to allow it.

pub mod enumerate;
pub mod gaussian;
pub mod hmm;
