//! Models used by the experiments and tests.

pub mod drought;
pub mod hmm;
pub mod lattice;
pub mod scalar;
