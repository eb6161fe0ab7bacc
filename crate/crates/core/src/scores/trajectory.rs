//! Scores on planar trajectories stored as `T x 2` tensors.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Bound applied to the cosine before `acos`.
pub const ACOS_CLIP: f64 = 1.0 - 1e-7;

pub const CGT_TERMS: [&str; 6] = ["pos", "vel", "curv", "speed", "turn", "len"];

pub(crate) fn traj_len(t: &Tensor) -> Result<usize> {
    match *t.shape() {
        [n, 2] => Ok(n),
        _ => Err(Error::Dimension(format!(
            "expected a T x 2 trajectory, got {:?}",
            t.shape()
        ))),
    }
}

fn pt(d: &[f64], t: usize) -> [f64; 2] {
    [d[2 * t], d[2 * t + 1]]
}

fn vel(d: &[f64], t: usize) -> [f64; 2] {
    [d[2 * t + 2] - d[2 * t], d[2 * t + 3] - d[2 * t + 1]]
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = norm2(v);
    if n > 0.0 {
        [v[0] / n, v[1] / n]
    } else {
        [0.0, 0.0]
    }
}

/// Adds `u` to the gradient of velocity `t` (which is `y[t+1] - y[t]`).
fn scatter_vel(g: &mut [f64], t: usize, u: [f64; 2]) {
    for k in 0..2 {
        g[2 * (t + 1) + k] += u[k];
        g[2 * t + k] -= u[k];
    }
}

/// Cosine of the turn between velocities `t` and `t+1`, clipped, with its
/// partial derivatives with respect to both velocities (zero when clipped).
fn turn_cos(a: [f64; 2], b: [f64; 2], eps: f64) -> (f64, [f64; 2], [f64; 2]) {
    let (na, nb) = (norm2(a), norm2(b));
    let dot = a[0] * b[0] + a[1] * b[1];
    let den = na * nb + eps;
    let c = dot / den;
    if c.abs() >= ACOS_CLIP {
        return (c.clamp(-ACOS_CLIP, ACOS_CLIP), [0.0; 2], [0.0; 2]);
    }
    let (ua, ub) = (unit(a), unit(b));
    let k = dot / (den * den);
    let da = [b[0] / den - k * nb * ua[0], b[1] / den - k * nb * ua[1]];
    let db = [a[0] / den - k * na * ub[0], a[1] / den - k * na * ub[1]];
    (c, da, db)
}

pub(crate) fn turning_angles(d: &[f64], t_len: usize, eps: f64) -> Vec<f64> {
    (0..t_len.saturating_sub(2))
        .map(|t| turn_cos(vel(d, t), vel(d, t + 1), eps).0.acos())
        .collect()
}

pub(crate) fn path_length(d: &[f64], t_len: usize) -> f64 {
    (0..t_len - 1).map(|t| norm2(vel(d, t))).sum()
}

pub(crate) fn traj_l2(yhat: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
    traj_len(y)?;
    let e = y.sub(yhat);
    let s = e.rms();
    let g = if s > 0.0 {
        e.scale(1.0 / (e.len() as f64 * s))
    } else {
        Tensor::zeros(e.shape())
    };
    Ok((s, g))
}

/// The six raw CGT terms and, optionally, their gradients with respect to `y`.
pub(crate) fn cgt_terms(
    yhat: &Tensor,
    y: &Tensor,
    eps: f64,
    want_grad: bool,
) -> Result<([f64; 6], Option<Vec<Vec<f64>>>)> {
    let t_len = traj_len(y)?;
    if t_len < 3 {
        return Err(Error::Dimension(format!(
            "CGT needs at least 3 time steps, got {t_len}"
        )));
    }
    let (yd, hd) = (y.data(), yhat.data());
    let tf = t_len as f64;
    let mut grads = vec![vec![0.0; yd.len()]; 6];

    // Position.
    let mut a = 0.0;
    for t in 0..t_len {
        let (p, q) = (pt(yd, t), pt(hd, t));
        for k in 0..2 {
            a += (p[k] - q[k]).powi(2);
            grads[0][2 * t + k] = (p[k] - q[k]) / tf;
        }
    }
    let t_pos = (a / (2.0 * tf) + eps).sqrt();

    // Velocity and speed.
    let nv = tf - 1.0;
    let mut b = 0.0;
    let mut sp = 0.0;
    for t in 0..t_len - 1 {
        let (v, vh) = (vel(yd, t), vel(hd, t));
        let dv = [v[0] - vh[0], v[1] - vh[1]];
        b += dv[0] * dv[0] + dv[1] * dv[1];
        scatter_vel(&mut grads[1], t, [dv[0] / nv, dv[1] / nv]);
        let ds = norm2(v) - norm2(vh);
        sp += ds * ds;
        let u = unit(v);
        scatter_vel(&mut grads[3], t, [2.0 * ds * u[0] / nv, 2.0 * ds * u[1] / nv]);
    }
    let t_vel = (b / (2.0 * nv) + eps).sqrt();
    let t_speed = (sp / nv + eps).sqrt();

    // Curvature.
    let nc = tf - 2.0;
    let mut cv = 0.0;
    for t in 0..t_len - 2 {
        for k in 0..2 {
            let d2 = yd[2 * (t + 2) + k] - 2.0 * yd[2 * (t + 1) + k] + yd[2 * t + k];
            let d2h = hd[2 * (t + 2) + k] - 2.0 * hd[2 * (t + 1) + k] + hd[2 * t + k];
            let dd = d2 - d2h;
            cv += dd * dd;
            let u = dd / nc;
            grads[2][2 * t + k] += u;
            grads[2][2 * (t + 1) + k] -= 2.0 * u;
            grads[2][2 * (t + 2) + k] += u;
        }
    }
    let t_curv = (cv / (2.0 * nc) + eps).sqrt();

    // Turning angles.
    let th = turning_angles(hd, t_len, eps);
    let mut tn = 0.0;
    for t in 0..t_len - 2 {
        let (c, da, db) = turn_cos(vel(yd, t), vel(yd, t + 1), eps);
        let dth = c.acos() - th[t];
        tn += dth * dth;
        let dc = -1.0 / (1.0 - c * c).sqrt();
        let f = 2.0 * dth * dc / nc;
        scatter_vel(&mut grads[4], t, [f * da[0], f * da[1]]);
        scatter_vel(&mut grads[4], t + 1, [f * db[0], f * db[1]]);
    }
    let t_turn = (tn / nc + eps).sqrt();

    // Path length.
    let dl = path_length(yd, t_len) - path_length(hd, t_len);
    let t_lenterm = dl.abs();
    let sgn = if dl > 0.0 {
        1.0
    } else if dl < 0.0 {
        -1.0
    } else {
        0.0
    };
    for t in 0..t_len - 1 {
        let u = unit(vel(yd, t));
        scatter_vel(&mut grads[5], t, [sgn * u[0], sgn * u[1]]);
    }

    let terms = [t_pos, t_vel, t_curv, t_speed, t_turn, t_lenterm];
    if !want_grad {
        return Ok((terms, None));
    }
    // Derivatives so far are of the radicands.
    for k in 0..5 {
        let inv = 1.0 / (2.0 * terms[k]);
        grads[k].iter_mut().for_each(|g| *g *= inv);
    }
    Ok((terms, Some(grads)))
}
