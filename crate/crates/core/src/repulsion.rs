//! Tangent repulsion: spread boundary points along a level set of the score.
//!
//! Each round pushes every point away from the others with an inverse-distance
//! field, removes the component along the score gradient, takes a step and then
//! flows the point back onto the level set.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{integrate_to_boundary, FlowOptions};
use crate::numerics::{RngStream, Tensor};
use crate::scores::{ScoreModel, DEGENERATE_GRAD_SQ};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepulsionOptions {
    pub steps: usize,
    pub step_size: f64,
    /// Pairs closer than this are treated as coincident.
    pub coincidence_floor: f64,
    /// Fixed-step budget of the flow correction after each tangent step.
    pub correction_steps: usize,
}

impl Default for RepulsionOptions {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.1,
            coincidence_floor: 1e-9,
            correction_steps: 5,
        }
    }
}

/// `R_i = sum_{j != i} (y_i - y_j) / |y_i - y_j|^2`.
///
/// Coincident pairs get a random unit direction of magnitude `1 / floor`, drawn
/// from a stream addressed by the pair. Returns the forces and the number of such
/// pairs.
pub fn repulsion_scores(batch: &[Tensor], floor: f64, stream: RngStream) -> Result<(Vec<Tensor>, usize)> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::InvalidArgument(format!("repulsion needs at least 2 points, got {b}")));
    }
    for y in &batch[1..] {
        batch[0].check_same_shape(y)?;
    }
    let shape = batch[0].shape().to_vec();
    // Coincident-pair directions, generated up front so the sum below is pure.
    let mut kicks: Vec<(usize, usize, Tensor)> = Vec::new();
    for i in 0..b {
        for j in i + 1..b {
            if batch[i].distance(&batch[j]) < floor {
                let mut rng = stream.child((i * b + j) as u64).rng();
                let mut u = Tensor::from_fn(&shape, |_| rng.sample(StandardNormal));
                let n = u.norm();
                u = u.scale(1.0 / (n * floor));
                kicks.push((i, j, u));
            }
        }
    }
    let forces = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut r = Tensor::zeros(&shape);
            for j in 0..b {
                if j == i {
                    continue;
                }
                let diff = batch[i].sub(&batch[j]);
                let d2 = diff.norm_sq();
                if d2.sqrt() >= floor {
                    r.axpy(1.0 / d2, &diff);
                }
            }
            for (a, c, u) in &kicks {
                if *a == i {
                    r.axpy(1.0, u);
                } else if *c == i {
                    r.axpy(-1.0, u);
                }
            }
            r
        })
        .collect();
    Ok((forces, kicks.len()))
}

/// `(I - g g^T / |g|^2) r`, applied twice to suppress rounding in the projection.
pub fn tangent_project(r: &Tensor, g: &Tensor) -> Result<Tensor> {
    r.check_same_shape(g)?;
    let gg = g.norm_sq();
    if gg < DEGENERATE_GRAD_SQ {
        return Err(Error::DegenerateGradient { norm_sq: gg });
    }
    let mut v = r.clone();
    for _ in 0..2 {
        let c = g.dot(&v) / gg;
        v.axpy(-c, g);
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepulsionResult {
    pub batch: Vec<Tensor>,
    pub coincident_pairs: usize,
    /// Largest `|<g, v>| / (|g| |v|)` over all applied tangent velocities.
    pub max_orthogonality_residual: f64,
}

/// Runs `opts.steps` rounds of tangent repulsion on points already on the level set
/// `S(y_hat, .) = tau`.
pub fn repulse(
    batch: &[Tensor],
    model: &ScoreModel,
    yhat: &Tensor,
    tau: f64,
    opts: &RepulsionOptions,
    flow_opts: &FlowOptions,
    stream: RngStream,
) -> Result<RepulsionResult> {
    if !(opts.step_size > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {}", opts.step_size)));
    }
    for (i, y) in batch.iter().enumerate() {
        let s = model.evaluate(yhat, y)?;
        if (s - tau).abs() > flow_opts.tolerance {
            return Err(Error::InvalidArgument(format!(
                "batch member {i} is off the level set: |S - tau| = {:e}",
                (s - tau).abs()
            )));
        }
    }
    let correction = FlowOptions {
        steps: opts.correction_steps.clamp(1, flow_opts.steps.max(1)),
        ..*flow_opts
    };
    let mut points = batch.to_vec();
    let mut coincident_pairs = 0;
    let mut worst: f64 = 0.0;
    for round in 0..opts.steps {
        let round_stream = stream.child(round as u64);
        let (forces, kicks) = repulsion_scores(&points, opts.coincidence_floor, round_stream.child(0))?;
        coincident_pairs += kicks;
        let corr_stream = round_stream.child(1);
        let moved: Vec<Result<(Tensor, f64)>> = points
            .par_iter()
            .zip(forces.par_iter())
            .enumerate()
            .map(|(i, (y, r))| {
                let g = model.gradient(yhat, y)?;
                let v = tangent_project(r, &g)?;
                let vn = v.norm();
                let resid = if vn > 0.0 { g.dot(&v).abs() / (g.norm() * vn) } else { 0.0 };
                let mut stepped = y.clone();
                stepped.axpy(opts.step_size, &v);
                let res = integrate_to_boundary(model, yhat, &stepped, tau, &correction, corr_stream.child(i as u64))
                    .map_err(|_| Error::CorrectionFailed { index: i })?;
                if !res.converged {
                    return Err(Error::CorrectionFailed { index: i });
                }
                Ok((res.terminal, resid))
            })
            .collect();
        let mut next = Vec::with_capacity(points.len());
        for m in moved {
            let (y, resid) = m?;
            worst = worst.max(resid);
            next.push(y);
        }
        points = next;
    }
    Ok(RepulsionResult {
        batch: points,
        coincident_pairs,
        max_orthogonality_residual: worst,
    })
}

/// Smallest distance over all pairs.
pub fn min_pairwise_distance(points: &[Tensor]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(points[i].distance(&points[j]));
        }
    }
    best
}

/// Mean over points of the distance to the nearest other point.
pub fn mean_nearest_neighbour_distance(points: &[Tensor]) -> f64 {
    let n = points.len();
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| points[i].distance(&points[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / n as f64
}
