//! Experiment runner for nonconformity flows: configs, tensor files, benchmarks,
//! CSV results and SVG plots.

pub mod bench;
pub mod commands;
pub mod config;
pub mod plot;
pub mod prep;
pub mod table;
pub mod tensor_file;
