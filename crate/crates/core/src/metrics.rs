//! Distributional evaluation of sample banks against a target.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::fft::fft2_power;
use crate::numerics::quantile::median;
use crate::numerics::tensor::field_dims;
use crate::numerics::Tensor;

const LSD_BETA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub patch: usize,
    pub stride: usize,
    /// Multipliers of the median-heuristic bandwidth.
    pub bandwidths: Vec<f64>,
    /// Standardize each patch to zero mean and unit variance.
    pub standardize: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { patch: 7, stride: 4, bandwidths: vec![0.5, 1.0, 2.0], standardize: false }
    }
}

fn check_bank(samples: &[Tensor], target: &Tensor) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    samples.iter().try_for_each(|s| target.check_same_shape(s))
}

fn rms_distance(a: &Tensor, b: &Tensor) -> f64 {
    a.distance(b) / (a.len() as f64).sqrt()
}

/// `(1/K) sum_k |y_k - y| - (1/2K^2) sum_{k,k'} |y_k - y_k'|` with RMS norms.
pub fn energy_distance(samples: &[Tensor], target: &Tensor) -> Result<f64> {
    check_bank(samples, target)?;
    let k = samples.len() as f64;
    let fit: f64 = samples.iter().map(|s| rms_distance(s, target)).sum::<f64>() / k;
    let spread: f64 = samples
        .par_iter()
        .map(|a| samples.iter().map(|b| rms_distance(a, b)).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(fit - spread / (2.0 * k * k))
}

/// `log(1 + S / beta)` of the 2-D power spectrum, `beta` given.
fn log_spectrum(field: &Tensor, beta: f64) -> Result<Vec<f64>> {
    Ok(fft2_power(field)?.data().iter().map(|p| (p / beta).ln_1p()).collect())
}

/// Log-spectral distance: mean over samples of the mean squared difference of
/// `log(1 + S / beta)` spectra, with `beta` the mean target power.
pub fn lsd(samples: &[Tensor], target: &Tensor) -> Result<f64> {
    check_bank(samples, target)?;
    let target_power = fft2_power(target)?;
    let beta = target_power.mean().max(LSD_BETA_FLOOR);
    let t: Vec<f64> = target_power.data().iter().map(|p| (p / beta).ln_1p()).collect();
    let per = samples
        .par_iter()
        .map(|s| {
            let ls = log_spectrum(s, beta)?;
            Ok(ls.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// All `patch x patch` windows (every channel) on the stride grid.
pub fn extract_patches(field: &Tensor, patch: usize, stride: usize, standardize: bool) -> Result<Vec<Vec<f64>>> {
    let (h, w, c) = field_dims(field)?;
    if patch == 0 || patch > h || patch > w || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "patch {patch} / stride {stride} invalid for a {h}x{w} field"
        )));
    }
    let d = field.data();
    let mut out = Vec::new();
    for r in (0..=h - patch).step_by(stride) {
        for q in (0..=w - patch).step_by(stride) {
            let mut p = Vec::with_capacity(patch * patch * c);
            for i in 0..patch {
                let start = ((r + i) * w + q) * c;
                p.extend_from_slice(&d[start..start + patch * c]);
            }
            if standardize {
                let n = p.len() as f64;
                let m = p.iter().sum::<f64>() / n;
                let sd = (p.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                let sd = if sd > 0.0 { sd } else { 1.0 };
                p.iter_mut().for_each(|v| *v = (*v - m) / sd);
            }
            out.push(p);
        }
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian kernel `exp(-d^2 / (2 h^2))`.
pub fn gaussian_kernel(d2: f64, h: f64) -> f64 {
    (-d2 / (2.0 * h * h)).exp()
}

/// Sum of `k(a_i, b_j)` for each bandwidth, skipping `i == j` when `same`.
fn kernel_sums(a: &[Vec<f64>], b: &[Vec<f64>], hs: &[f64], same: bool) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut acc = vec![0.0; hs.len()];
            for (j, y) in b.iter().enumerate() {
                if same && i == j {
                    continue;
                }
                let d2 = sq_dist(x, y);
                for (s, h) in acc.iter_mut().zip(hs) {
                    *s += gaussian_kernel(d2, *h);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; hs.len()];
    for r in rows {
        for (t, v) in total.iter_mut().zip(r) {
            *t += v;
        }
    }
    total
}

/// Median pairwise distance over the pooled patch set (1 if zero).
fn median_heuristic(pool: &[&Vec<f64>]) -> Result<f64> {
    let dists: Vec<f64> = (0..pool.len())
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..pool.len()).map(move |j| sq_dist(pool[i], pool[j]).sqrt()))
        .collect();
    let m = median(&dists)?;
    Ok(if m > 0.0 { m } else { 1.0 })
}

/// Unbiased Gaussian-kernel MMD^2 between target patches and pooled sample
/// patches, averaged over the configured bandwidths.
pub fn patch_mmd(samples: &[Tensor], target: &Tensor, cfg: &MetricConfig) -> Result<f64> {
    check_bank(samples, target)?;
    if cfg.bandwidths.is_empty() || cfg.bandwidths.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::InvalidArgument("bandwidth multipliers must be positive".into()));
    }
    let x = extract_patches(target, cfg.patch, cfg.stride, cfg.standardize)?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 patches per side, got {}", x.len())));
    }
    let mut y = Vec::new();
    for s in samples {
        y.extend(extract_patches(s, cfg.patch, cfg.stride, cfg.standardize)?);
    }
    let pool: Vec<&Vec<f64>> = x.iter().chain(&y).collect();
    let h0 = median_heuristic(&pool)?;
    let hs: Vec<f64> = cfg.bandwidths.iter().map(|m| m * h0).collect();
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sums(&x, &x, &hs, true);
    let kyy = kernel_sums(&y, &y, &hs, true);
    let kxy = kernel_sums(&x, &y, &hs, false);
    let mmd: f64 = (0..hs.len())
        .map(|b| kxx[b] / (nx * (nx - 1.0)) + kyy[b] / (ny * (ny - 1.0)) - 2.0 * kxy[b] / (nx * ny))
        .sum();
    Ok(mmd / hs.len() as f64)
}

/// `exp(entropy)` of the eigenvalues of `K / n`, with `K` the cosine-similarity
/// matrix of the mean-removed, flattened samples.
pub fn vendi(samples: &[Tensor]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("vendi samples"));
    }
    let n = samples.len();
    let units = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let m = s.mean();
            let c = s.map(|v| v - m);
            let norm = c.norm();
            if !(norm > 0.0) {
                return Err(Error::InvalidArgument(format!("sample {i} has zero norm after mean removal")));
            }
            Ok(c.scale(1.0 / norm))
        })
        .collect::<Result<Vec<Tensor>>>()?;
    samples[1..].iter().try_for_each(|s| samples[0].check_same_shape(s))?;
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| (0..n).map(|j| units[i].dot(&units[j])).collect()).collect();
    let k = DMatrix::from_fn(n, n, |i, j| rows[i][j] / n as f64);
    let eig = SymmetricEigen::new(k).eigenvalues;
    let entropy: f64 = eig
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| -l * l.ln())
        .sum();
    Ok(entropy.exp())
}

/// `vendi(samples) / vendi(reference)`.
pub fn vendi_ratio(samples: &[Tensor], reference: &[Tensor]) -> Result<f64> {
    Ok(vendi(samples)? / vendi(reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        let y = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(energy_distance(&[y.clone(), y.clone()], &y).unwrap(), 0.0);
        let s = [Tensor::vector(vec![0.0]), Tensor::vector(vec![2.0])];
        assert_eq!(energy_distance(&s, &Tensor::vector(vec![1.0])).unwrap(), 0.5);
        let a = Tensor::vector(vec![3.0, 1.0]);
        assert!((energy_distance(std::slice::from_ref(&a), &y).unwrap() - rms_distance(&a, &y)).abs() < 1e-15);
    }

    #[test]
    fn lsd_examples() {
        let t = Tensor::from_fn(&[8, 8], |i| ((i * 7) % 5) as f64 - 2.0);
        assert_eq!(lsd(std::slice::from_ref(&t), &t).unwrap(), 0.0);
        assert!(lsd(&[t.scale(2.0)], &t).unwrap() > 0.0);
        let z = Tensor::zeros(&[4, 4]);
        assert!(lsd(std::slice::from_ref(&z), &z).unwrap().is_finite());
    }

    #[test]
    fn mmd_examples() {
        assert_eq!(gaussian_kernel(0.0, 0.3), 1.0);
        let cfg = MetricConfig::default();
        let zero = Tensor::zeros(&[16, 16]);
        let one = Tensor::filled(&[16, 16], 1.0);
        assert!(patch_mmd(&[one], &zero, &cfg).unwrap() > 0.0);
        assert!(patch_mmd(&[Tensor::zeros(&[8, 8])], &Tensor::zeros(&[8, 8]), &cfg).is_err());
    }

    #[test]
    fn vendi_examples() {
        let s = Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]);
        assert!((vendi(&[s.clone(), s.clone(), s.clone()]).unwrap() - 1.0).abs() < 1e-9);
        // Rows 1..4 of the 4x4 Hadamard matrix: mutually orthogonal and zero mean.
        let h = [[1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
        let rows: Vec<Tensor> = h.iter().map(|r| Tensor::vector(r.to_vec())).collect();
        assert!((vendi(&rows).unwrap() - 3.0).abs() < 1e-9);
        assert!((vendi_ratio(&rows, &rows).unwrap() - 1.0).abs() < 1e-12);
        assert!(vendi(&[Tensor::filled(&[3], 2.0)]).is_err());
    }
}
