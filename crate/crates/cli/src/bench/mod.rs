//! Benchmark runners. Each returns a table whose rows are ordered by cell key.

pub mod audit;
pub mod bands;
pub mod convergence;
pub mod repulsion;
