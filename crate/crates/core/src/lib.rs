//! Nonconformity flows for conformal prediction.
//!
//! Any differentiable nonconformity score induces a flow whose trajectories
//! converge to the boundary of the split-conformal prediction set. On top of that
//! flow this crate provides boundary sampling, tangent repulsion, conformal
//! predictive distributions (mixtures over confidence levels), risk-controlling
//! prediction bands, synthetic data generators and distributional metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bands;
pub mod calibration;
pub mod cpd;
pub mod datagen;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod numerics;
pub mod repulsion;
pub mod scores;

pub use calibration::{conformal_threshold, Filtration};
pub use error::{Error, Result};
pub use flow::{auto_lambda, integrate_to_boundary, FlowOptions, FlowResult};
pub use numerics::{RngStream, Tensor};
pub use scores::{ScoreFamily, ScoreModel};
