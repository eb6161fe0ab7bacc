//! The nonconformity flow `dy/dt = -lambda (S - tau) grad S / |grad S|^2`.
//!
//! Along the flow the score error obeys `d(S - tau)/dt = -lambda (S - tau)`, so it
//! decays as `exp(-lambda t)` and trajectories land on the level set `S = tau`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::standard_normal_like;
use crate::numerics::{RngStream, Tensor};
use crate::scores::{ScoreModel, DEGENERATE_GRAD_SQ};

/// Backtracking halvings tried per polish step.
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowOptions {
    pub steps: usize,
    pub horizon: f64,
    pub tolerance: f64,
    pub max_polish_steps: usize,
    pub jitter_sigma: f64,
    pub jitter_retries: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            steps: 20,
            horizon: 1.0,
            tolerance: 1e-6,
            max_polish_steps: 200,
            jitter_sigma: 1e-6,
            jitter_retries: 3,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.tolerance > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "flow options need steps >= 1, tolerance > 0, horizon > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub terminal: Tensor,
    /// Score at the start, after every integration step and after every polish step.
    pub score_trace: Vec<f64>,
    pub converged: bool,
    pub lambda_used: f64,
    pub polish_steps_used: usize,
    /// `|S - tau|` at the end of the fixed-step phase, before polishing.
    pub error_after_steps: f64,
    /// Jitter retries spent on a degenerate starting gradient.
    pub jitter_used: usize,
}

impl FlowResult {
    pub fn final_score(&self) -> f64 {
        *self.score_trace.last().expect("trace is never empty")
    }
}

/// `lambda = ln(|s0 - tau| / eps) / horizon`, or 0 when already within `eps`.
pub fn auto_lambda(s0: f64, tau: f64, eps: f64, horizon: f64) -> f64 {
    let gap = (s0 - tau).abs();
    if gap <= eps {
        0.0
    } else {
        (gap / eps).ln() / horizon
    }
}

/// Time at which `|S - tau|` reaches `eps` under exponential decay at rate `lambda`.
pub fn hitting_time(s0: f64, tau: f64, eps: f64, lambda: f64) -> Result<f64> {
    let gap = (s0 - tau).abs();
    if gap <= eps {
        return Ok(0.0);
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive when |s0 - tau| > eps, got {lambda}"
        )));
    }
    Ok((gap / eps).ln() / lambda)
}

fn velocity_from(s: f64, grad: &Tensor, tau: f64, lambda: f64) -> Result<Tensor> {
    let gap = s - tau;
    if gap == 0.0 {
        return Ok(Tensor::zeros(grad.shape()));
    }
    let norm_sq = grad.norm_sq();
    if norm_sq < DEGENERATE_GRAD_SQ {
        return Err(Error::DegenerateGradient { norm_sq });
    }
    Ok(grad.scale(-lambda * gap / norm_sq))
}

/// Minimum-norm velocity that makes the score error decay at rate `lambda`.
pub fn velocity(model: &ScoreModel, yhat: &Tensor, y: &Tensor, tau: f64, lambda: f64) -> Result<Tensor> {
    let (s, g) = model.value_and_gradient(yhat, y)?;
    velocity_from(s, &g, tau, lambda)
}

fn rk4_step(model: &ScoreModel, yhat: &Tensor, y: &Tensor, tau: f64, lambda: f64, dt: f64) -> Result<Tensor> {
    let f = |p: &Tensor| velocity(model, yhat, p, tau, lambda);
    let k1 = f(y)?;
    let mut p = y.clone();
    p.axpy(0.5 * dt, &k1);
    let k2 = f(&p)?;
    let mut p = y.clone();
    p.axpy(0.5 * dt, &k2);
    let k3 = f(&p)?;
    let mut p = y.clone();
    p.axpy(dt, &k3);
    let k4 = f(&p)?;
    let mut out = y.clone();
    out.axpy(dt / 6.0, &k1);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    Ok(out)
}

/// Flows `y0` to the level set `S(y_hat, .) = tau`.
///
/// A fixed number of classic Runge-Kutta steps covers `[0, horizon]` with the rate
/// chosen so the continuous flow would arrive within `tolerance` at `horizon`. Any
/// remaining gap is closed by polish steps: explicit Euler steps of the same field
/// with `lambda dt = 1`, halved until the error decreases.
pub fn integrate_to_boundary(
    model: &ScoreModel,
    yhat: &Tensor,
    y0: &Tensor,
    tau: f64,
    opts: &FlowOptions,
    stream: RngStream,
) -> Result<FlowResult> {
    opts.validate()?;
    if !y0.is_finite() || !tau.is_finite() {
        return Err(Error::NonFinite);
    }
    let eps = opts.tolerance;
    let mut y = y0.clone();
    let (mut s, mut g) = model.value_and_gradient(yhat, &y)?;
    let mut jitter_used = 0;
    if (s - tau).abs() > eps && g.norm_sq() < DEGENERATE_GRAD_SQ {
        let mut rng = stream.rng();
        loop {
            if jitter_used == opts.jitter_retries {
                return Err(Error::DegenerateGradient { norm_sq: g.norm_sq() });
            }
            jitter_used += 1;
            y = y0.add(&standard_normal_like(&mut rng, y0.shape()).scale(opts.jitter_sigma));
            (s, g) = model.value_and_gradient(yhat, &y)?;
            if g.norm_sq() >= DEGENERATE_GRAD_SQ || (s - tau).abs() <= eps {
                break;
            }
        }
    }
    let lambda = auto_lambda(s, tau, eps, opts.horizon);
    let mut trace = vec![s];
    if lambda > 0.0 {
        let dt = opts.horizon / opts.steps as f64;
        for _ in 0..opts.steps {
            y = rk4_step(model, yhat, &y, tau, lambda, dt)?;
            if !y.is_finite() {
                return Err(Error::NonFinite);
            }
            s = model.evaluate(yhat, &y)?;
            trace.push(s);
        }
    }
    let error_after_steps = (s - tau).abs();

    let mut polish = 0;
    while (s - tau).abs() > eps && polish < opts.max_polish_steps {
        let (s_now, g_now) = model.value_and_gradient(yhat, &y)?;
        let dir = match velocity_from(s_now, &g_now, tau, 1.0) {
            Ok(d) => d,
            Err(Error::DegenerateGradient { .. }) => break,
            Err(e) => return Err(e),
        };
        let err_now = (s_now - tau).abs();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut cand = y.clone();
            cand.axpy(step, &dir);
            if cand.is_finite() {
                let s_c = model.evaluate(yhat, &cand)?;
                if (s_c - tau).abs() < err_now {
                    accepted = Some((cand, s_c));
                    break;
                }
            }
            step *= 0.5;
        }
        polish += 1;
        match accepted {
            Some((cand, s_c)) => {
                y = cand;
                s = s_c;
                trace.push(s);
            }
            None => break,
        }
    }
    Ok(FlowResult {
        terminal: y,
        converged: (s - tau).abs() <= eps,
        score_trace: trace,
        lambda_used: lambda,
        polish_steps_used: polish,
        error_after_steps,
        jitter_used,
    })
}

/// One trajectory of a batch.
#[derive(Debug, Clone)]
pub struct FlowJob<'a> {
    pub yhat: &'a Tensor,
    pub y0: Tensor,
    pub tau: f64,
}

/// Integrates every job in parallel. Job `i` draws from `stream.child(i)`, so the
/// output does not depend on the thread count.
pub fn integrate_batch(
    model: &ScoreModel,
    jobs: &[FlowJob<'_>],
    opts: &FlowOptions,
    stream: RngStream,
) -> Vec<Result<FlowResult>> {
    jobs.par_iter()
        .enumerate()
        .map(|(i, job)| integrate_to_boundary(model, job.yhat, &job.y0, job.tau, opts, stream.child(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::ScoreFamily;

    fn l2() -> ScoreModel {
        ScoreModel::new(ScoreFamily::L2)
    }

    #[test]
    fn velocity_examples() {
        let v = velocity(&l2(), &Tensor::vector(vec![0.0]), &Tensor::vector(vec![2.0]), 1.0, 1.0).unwrap();
        assert!((v.data()[0] + 1.0).abs() < 1e-15);

        let y = Tensor::vector(vec![3.0, 4.0]);
        let v = velocity(&l2(), &Tensor::zeros(&[2]), &y, 1.0, 1.0).unwrap();
        let s = 12.5f64.sqrt();
        let expect = [-(s - 1.0) * 0.848_528_137_423_857, -(s - 1.0) * 1.131_370_849_898_476];
        for (a, b) in v.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }

        let on = Tensor::vector(vec![1.0, 1.0]);
        let v = velocity(&l2(), &Tensor::zeros(&[2]), &on, 1.0, 5.0).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lambda_and_hitting_time_examples() {
        assert!((auto_lambda(3.0, 1.0, 1e-6, 1.0) - 2e6f64.ln()).abs() < 1e-12);
        assert_eq!(auto_lambda(1.0, 1.0, 1e-6, 1.0), 0.0);
        assert_eq!(auto_lambda(1.0 + 1e-6, 1.0, 1e-6, 1.0), 0.0);
        assert!((auto_lambda(3.0, 1.0, 1e-6, 1.0) - 14.508_657_738_524_219).abs() < 1e-9);

        assert_eq!(hitting_time(3.0, 1.0, 1e-6, 2e6f64.ln()).unwrap(), 1.0);
        assert_eq!(hitting_time(1.0 + 1e-7, 1.0, 1e-6, 0.0).unwrap(), 0.0);
        let e2 = std::f64::consts::E.powi(2);
        assert!((hitting_time(e2 * 1e-6, 0.0, 1e-6, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(hitting_time(3.0, 1.0, 1e-6, 0.0).is_err());
    }

    #[test]
    fn radial_projection_example() {
        let opts = FlowOptions::default();
        let r = integrate_to_boundary(
            &l2(),
            &Tensor::zeros(&[2]),
            &Tensor::vector(vec![3.0, 4.0]),
            1.0,
            &opts,
            RngStream::new(0, 0),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.terminal.data()[0] - 0.848_528_137_423_857).abs() < 1e-6);
        assert!((r.terminal.data()[1] - 1.131_370_849_898_476).abs() < 1e-6);
        assert_eq!(r.score_trace.len(), 1 + opts.steps + r.polish_steps_used);
    }

    #[test]
    fn start_on_boundary_is_a_fixed_point() {
        let y0 = Tensor::vector(vec![1.0, -1.0]);
        let r = integrate_to_boundary(&l2(), &Tensor::zeros(&[2]), &y0, 1.0, &FlowOptions::default(), RngStream::new(0, 0))
            .unwrap();
        assert!(r.converged);
        assert_eq!(r.terminal, y0);
        assert_eq!(r.polish_steps_used, 0);
        assert_eq!(r.lambda_used, 0.0);
    }

    #[test]
    fn degenerate_start_is_jittered() {
        let yhat = Tensor::vector(vec![0.5, 0.5, 0.5]);
        let r = integrate_to_boundary(&l2(), &yhat, &yhat, 1.0, &FlowOptions::default(), RngStream::new(3, 1)).unwrap();
        assert!(r.converged);
        assert_eq!(r.jitter_used, 1);

        let no_retry = FlowOptions { jitter_retries: 0, ..FlowOptions::default() };
        let err = integrate_to_boundary(&l2(), &yhat, &yhat, 1.0, &no_retry, RngStream::new(3, 1)).unwrap_err();
        assert!(matches!(err, Error::DegenerateGradient { .. }));
    }

    #[test]
    fn rejects_non_finite_start() {
        let y0 = Tensor::vector(vec![f64::NAN, 1.0]);
        let err = integrate_to_boundary(&l2(), &Tensor::zeros(&[2]), &y0, 1.0, &FlowOptions::default(), RngStream::new(0, 0))
            .unwrap_err();
        assert_eq!(err, Error::NonFinite);
    }
}
