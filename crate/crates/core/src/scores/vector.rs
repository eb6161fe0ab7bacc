//! Scores on `R^D` residuals `r = y - y_hat`. Each routine returns the value and
//! the gradient with respect to `y` (which equals the gradient with respect to `r`).

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Calibration residuals `r_i = y_i - y_hat_i`, stored as an `n x D` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBank {
    pub residuals: Tensor,
}

impl ResidualBank {
    pub fn from_rows(rows: &[Tensor]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("residual bank"))?;
        let d = first.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: vec![d],
                    got: r.shape().to_vec(),
                });
            }
            data.extend_from_slice(r.data());
        }
        Ok(Self {
            residuals: Tensor::new(data, vec![rows.len(), d])?,
        })
    }

    /// Residuals of paired predictions and targets.
    pub fn from_pairs(predictions: &[Tensor], targets: &[Tensor]) -> Result<Self> {
        if predictions.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![predictions.len()],
                got: vec![targets.len()],
            });
        }
        let rows: Vec<Tensor> = predictions
            .iter()
            .zip(targets)
            .map(|(p, t)| t.sub(p))
            .collect();
        Self::from_rows(&rows)
    }

    pub fn n(&self) -> usize {
        self.residuals.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.residuals.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.residuals.data()[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.residuals.data().chunks(self.dim())
    }
}

/// Per-coordinate location and variance of a diagonal residual model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalFit {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) fn l2(r: &[f64]) -> (f64, Vec<f64>) {
    let d = r.len() as f64;
    let s = (r.iter().map(|v| v * v).sum::<f64>() / d).sqrt();
    let grad = if s > 0.0 {
        r.iter().map(|v| v / (d * s)).collect()
    } else {
        vec![0.0; r.len()]
    };
    (s, grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn l1(r: &[f64]) -> (f64, Vec<f64>) {
    let d = r.len() as f64;
    let s = r.iter().map(|v| v.abs()).sum::<f64>() / d;
    (s, r.iter().map(|&v| sign(v) / d).collect())
}

pub(crate) fn huber(r: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let d = r.len() as f64;
    let mut s = 0.0;
    let mut grad = Vec::with_capacity(r.len());
    for &v in r {
        if v.abs() < delta {
            s += 0.5 * v * v;
            grad.push(v / d);
        } else {
            s += delta * (v.abs() - 0.5 * delta);
            grad.push(delta * sign(v) / d);
        }
    }
    (s / d, grad)
}

/// Indices of the `k` nearest bank rows, ties broken by row index.
fn nearest(bank: &ResidualBank, r: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut dist: Vec<(usize, f64)> = bank
        .rows()
        .enumerate()
        .map(|(i, row)| {
            let d2 = row.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (i, d2)
        })
        .collect();
    dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    dist.truncate(k);
    dist
}

pub(crate) fn knn(r: &[f64], k: usize, bank: &ResidualBank) -> Result<(f64, Vec<f64>)> {
    if bank.dim() != r.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![bank.dim()],
            got: vec![r.len()],
        });
    }
    if k == 0 || bank.n() < k {
        return Err(Error::InvalidArgument(format!(
            "kNN needs 1 <= k <= n, got k={k}, n={}",
            bank.n()
        )));
    }
    let nn = nearest(bank, r, k);
    let kf = k as f64;
    let s = nn.iter().map(|(_, d2)| d2).sum::<f64>() / kf;
    let mut grad = vec![0.0; r.len()];
    for (i, _) in &nn {
        for ((g, rv), bv) in grad.iter_mut().zip(r).zip(bank.row(*i)) {
            *g += 2.0 * (rv - bv) / kf;
        }
    }
    Ok((s, grad))
}

fn check_fit(fit: &DiagonalFit, r: &[f64]) -> Result<()> {
    if fit.mean.len() != r.len() || fit.var.len() != r.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![fit.mean.len()],
            got: vec![r.len()],
        });
    }
    Ok(())
}

/// `-log N(r; mu, diag(var))`.
pub(crate) fn gauss_nll(r: &[f64], fit: &DiagonalFit) -> Result<(f64, Vec<f64>)> {
    check_fit(fit, r)?;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut s = 0.0;
    let mut grad = Vec::with_capacity(r.len());
    for ((&v, &m), &var) in r.iter().zip(&fit.mean).zip(&fit.var) {
        let z = v - m;
        s += 0.5 * (z * z / var + var.ln() + ln2pi);
        grad.push(z / var);
    }
    Ok((s, grad))
}

/// Negative log-density of a multivariate Student-t with diagonal scale matrix.
pub(crate) fn student_t_nll(r: &[f64], nu: f64, fit: &DiagonalFit) -> Result<(f64, Vec<f64>)> {
    check_fit(fit, r)?;
    let d = r.len() as f64;
    let mut q = 0.0;
    let mut log_det = 0.0;
    for ((&v, &m), &var) in r.iter().zip(&fit.mean).zip(&fit.var) {
        q += (v - m) * (v - m) / var;
        log_det += var.ln();
    }
    let s = -ln_gamma(0.5 * (nu + d)) + ln_gamma(0.5 * nu)
        + 0.5 * d * (nu * std::f64::consts::PI).ln()
        + 0.5 * log_det
        + 0.5 * (nu + d) * (q / nu).ln_1p();
    let factor = (nu + d) / (nu + q);
    let grad = r
        .iter()
        .zip(&fit.mean)
        .zip(&fit.var)
        .map(|((&v, &m), &var)| factor * (v - m) / var)
        .collect();
    Ok((s, grad))
}

/// Per-coordinate mean and population variance floored at `floor`.
pub(crate) fn fit_diagonal(bank: &ResidualBank, floor: f64) -> DiagonalFit {
    let n = bank.n() as f64;
    let d = bank.dim();
    let mut mean = vec![0.0; d];
    for row in bank.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for row in bank.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for v in var.iter_mut() {
        *v = v.max(floor);
    }
    DiagonalFit { mean, var }
}
