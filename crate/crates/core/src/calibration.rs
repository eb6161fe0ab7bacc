//! Split-conformal thresholds and input-localized (weighted-quantile) thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::quantile::{median, weighted_quantile};
use crate::numerics::resize::{resize, ResizeMode};
use crate::numerics::tensor::{channel, field_dims};
use crate::numerics::Tensor;
use crate::scores::{traj_len, turning_angles, EPS_NUM};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0,1)")));
    }
    Ok(())
}

/// Sorted calibration scores: the map `alpha -> tau_alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filtration {
    sorted_scores: Vec<f64>,
}

/// A threshold together with the 1-based order statistic it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub tau: f64,
    pub k: usize,
    /// `alpha` was outside `[1/(n+1), n/(n+1)]` and `k` was clamped into `1..=n`.
    pub clamped: bool,
}

impl Filtration {
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("calibration scores"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut sorted_scores = scores.to_vec();
        sorted_scores.sort_by(f64::total_cmp);
        Ok(Self { sorted_scores })
    }

    pub fn n(&self) -> usize {
        self.sorted_scores.len()
    }

    pub fn sorted_scores(&self) -> &[f64] {
        &self.sorted_scores
    }

    /// `tau_alpha = S_(k)` with `k = ceil((1 - alpha)(n + 1))`.
    pub fn threshold(&self, alpha: f64) -> Result<Threshold> {
        check_alpha(alpha)?;
        let n = self.n();
        // Guard against (1 - alpha)(n + 1) landing a hair above an integer.
        let x = (1.0 - alpha) * (n + 1) as f64 - 1e-9;
        let k_raw = x.ceil().max(0.0) as usize;
        let k = k_raw.clamp(1, n);
        Ok(Threshold {
            tau: self.sorted_scores[k - 1],
            k,
            clamped: k_raw > n || x < 1.0 - 2e-9,
        })
    }

    /// Fraction of calibration scores `<= s`.
    pub fn cdf(&self, s: f64) -> f64 {
        self.sorted_scores.partition_point(|&v| v <= s) as f64 / self.n() as f64
    }
}

/// Global split-conformal threshold and its clamp flag.
pub fn conformal_threshold(filtration: &Filtration, alpha: f64) -> Result<(f64, bool)> {
    let t = filtration.threshold(alpha)?;
    Ok((t.tau, t.clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Per-channel mean and std plus an 8x8 nearest resize of the channel mean.
    Field,
    /// Mean and std of speed, mean curvature and mean turning angle.
    Trajectory,
}

impl FeatureKind {
    pub fn extract(self, x: &Tensor) -> Result<Vec<f64>> {
        match self {
            FeatureKind::Field => extract_field_features(x),
            FeatureKind::Trajectory => Ok(extract_traj_features(x)?.to_vec()),
        }
    }
}

/// Feature standardization and RBF bandwidth, all fitted on calibration inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    pub kind: FeatureKind,
    pub bandwidth: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl LocalizerConfig {
    pub fn standardize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.feature_mean.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.feature_mean.len()],
                got: vec![raw.len()],
            });
        }
        Ok(raw
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }
}

/// Calibration scores paired with standardized calibration features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFiltration {
    pub config: LocalizerConfig,
    scores: Vec<f64>,
    features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalThreshold {
    pub tau: f64,
    /// Every RBF weight underflowed and uniform weights were used instead.
    pub uniform_fallback: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of all pairwise Euclidean distances, or 1 when that median is 0.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    match median(&d) {
        Ok(m) if m > 0.0 => m,
        _ => 1.0,
    }
}

impl LocalFiltration {
    /// Fits standardization statistics on `raw_features` (one row per calibration
    /// sample). `bandwidth = None` selects the median pairwise distance.
    pub fn fit(
        kind: FeatureKind,
        scores: &[f64],
        raw_features: &[Vec<f64>],
        bandwidth: Option<f64>,
    ) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("calibration scores"));
        }
        if scores.len() != raw_features.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![scores.len()],
                got: vec![raw_features.len()],
            });
        }
        let d = raw_features[0].len();
        if raw_features.iter().any(|f| f.len() != d) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        let n = scores.len() as f64;
        let mut mean = vec![0.0; d];
        for f in raw_features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for f in raw_features {
            for ((s, v), m) in std.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in std.iter_mut() {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let mut config = LocalizerConfig {
            kind,
            bandwidth: 1.0,
            feature_mean: mean,
            feature_std: std,
        };
        let features = raw_features
            .iter()
            .map(|f| config.standardize(f))
            .collect::<Result<Vec<_>>>()?;
        config.bandwidth = match bandwidth {
            Some(h) if h > 0.0 => h,
            Some(h) => return Err(Error::InvalidArgument(format!("bandwidth {h} must be > 0"))),
            None => median_pairwise_distance(&features),
        };
        Ok(Self {
            config,
            scores: scores.to_vec(),
            features,
        })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Normalized RBF weights for a raw query feature vector.
    pub fn weights(&self, query_raw: &[f64]) -> Result<(Vec<f64>, bool)> {
        let q = self.config.standardize(query_raw)?;
        let h2 = 2.0 * self.config.bandwidth * self.config.bandwidth;
        let mut w: Vec<f64> = self.features.iter().map(|f| (-sq_dist(f, &q) / h2).exp()).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 && total.is_finite() {
            w.iter_mut().for_each(|v| *v /= total);
            Ok((w, false))
        } else {
            Ok((vec![1.0 / self.n() as f64; self.n()], true))
        }
    }

    pub fn threshold(&self, query_raw: &[f64], alpha: f64) -> Result<LocalThreshold> {
        check_alpha(alpha)?;
        let (w, uniform_fallback) = self.weights(query_raw)?;
        Ok(LocalThreshold {
            tau: weighted_quantile(&self.scores, &w, 1.0 - alpha)?,
            uniform_fallback,
        })
    }
}

/// Weighted `(1 - alpha)` quantile of calibration scores under RBF weights
/// centred on the query input.
pub fn local_threshold(filtration: &LocalFiltration, query_raw: &[f64], alpha: f64) -> Result<LocalThreshold> {
    filtration.threshold(query_raw, alpha)
}

/// `[mean_c, std_c]` for each channel, then the 8x8 nearest resize of the
/// channel-mean field, row-major.
pub fn extract_field_features(x: &Tensor) -> Result<Vec<f64>> {
    let (h, w, c) = field_dims(x)?;
    let mut out = Vec::with_capacity(2 * c + 64);
    let mut avg = vec![0.0; h * w];
    for ch in 0..c {
        let v = channel(x, ch);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s = (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64).sqrt();
        out.push(m);
        out.push(s);
        for (a, b) in avg.iter_mut().zip(&v) {
            *a += b / c as f64;
        }
    }
    let pooled = resize(&Tensor::new(avg, vec![h, w])?, 8, 8, ResizeMode::Nearest)?;
    out.extend_from_slice(pooled.data());
    Ok(out)
}

/// `(mean_speed, std_speed, mean_curvature, mean_turn)` of a `T x 2` trajectory.
pub fn extract_traj_features(traj: &Tensor) -> Result<[f64; 4]> {
    let t = traj_len(traj)?;
    if t < 3 {
        return Err(Error::Dimension(format!(
            "trajectory features need at least 3 time steps, got {t}"
        )));
    }
    let d = traj.data();
    let speeds: Vec<f64> = (0..t - 1)
        .map(|i| (d[2 * i + 2] - d[2 * i]).hypot(d[2 * i + 3] - d[2 * i + 1]))
        .collect();
    let ms = speeds.iter().sum::<f64>() / speeds.len() as f64;
    let ss = (speeds.iter().map(|s| (s - ms) * (s - ms)).sum::<f64>() / speeds.len() as f64).sqrt();
    let curv = (0..t - 2)
        .map(|i| {
            let ax = d[2 * i + 4] - 2.0 * d[2 * i + 2] + d[2 * i];
            let ay = d[2 * i + 5] - 2.0 * d[2 * i + 3] + d[2 * i + 1];
            ax.hypot(ay)
        })
        .sum::<f64>()
        / (t - 2) as f64;
    let turns = turning_angles(d, t, EPS_NUM);
    let mt = turns.iter().sum::<f64>() / turns.len() as f64;
    Ok([ms, ss, curv, mt])
}
