//! Conformal predictive distributions: draw a confidence level from a mixing
//! measure, an initial point from a base measure, and flow it to that level's
//! boundary.

use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{Filtration, LocalFiltration};
use crate::error::{Error, Result};
use crate::flow::{integrate_to_boundary, FlowOptions};
use crate::numerics::quantile::weighted_quantile;
use crate::numerics::rng::standard_normal_like;
use crate::numerics::{RngStream, Tensor};
use crate::scores::ScoreModel;

/// Distribution `pi` of the miscoverage level `alpha` over `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingMeasure {
    Uniform01,
    UniformRange { a: f64, b: f64 },
    DiscreteGrid { levels: Vec<f64>, masses: Vec<f64> },
}

impl MixingMeasure {
    pub fn point(alpha: f64) -> Self {
        MixingMeasure::DiscreteGrid { levels: vec![alpha], masses: vec![1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MixingMeasure::Uniform01 => Ok(()),
            MixingMeasure::UniformRange { a, b } => {
                if !(0.0 <= *a && a < b && *b <= 1.0) {
                    return Err(Error::InvalidArgument(format!("need 0 <= a < b <= 1, got ({a}, {b})")));
                }
                Ok(())
            }
            MixingMeasure::DiscreteGrid { levels, masses } => {
                if levels.is_empty() || levels.len() != masses.len() {
                    return Err(Error::InvalidArgument("grid needs matching nonempty levels and masses".into()));
                }
                if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
                    return Err(Error::InvalidArgument("grid levels must lie in (0,1)".into()));
                }
                if masses.iter().any(|&m| !(m >= 0.0)) {
                    return Err(Error::InvalidArgument("grid masses must be nonnegative".into()));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!("grid masses sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// `pi([beta, 1))`.
    pub fn mass_at_least(&self, beta: f64) -> f64 {
        match self {
            MixingMeasure::Uniform01 => (1.0 - beta).clamp(0.0, 1.0),
            MixingMeasure::UniformRange { a, b } => ((b - a.max(beta)) / (b - a)).clamp(0.0, 1.0),
            MixingMeasure::DiscreteGrid { levels, masses } => levels
                .iter()
                .zip(masses)
                .filter(|(l, _)| **l >= beta)
                .map(|(_, m)| m)
                .sum(),
        }
    }
}

/// Draws `alpha ~ pi`.
pub fn sample_alpha<R: Rng + ?Sized>(pi: &MixingMeasure, rng: &mut R) -> f64 {
    match pi {
        MixingMeasure::Uniform01 => rng.sample(Open01),
        MixingMeasure::UniformRange { a, b } => {
            let u: f64 = rng.sample(Open01);
            (a + (b - a) * u).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
        }
        MixingMeasure::DiscreteGrid { levels, masses } => {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            for (l, m) in levels.iter().zip(masses) {
                cum += m;
                if u < cum {
                    return *l;
                }
            }
            *levels.last().expect("validated grid")
        }
    }
}

/// Distribution of the initial point `y0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseMeasure {
    /// Calibration targets drawn uniformly, plus Gaussian jitter.
    EmpiricalCalibration { targets: Vec<Tensor>, jitter: f64 },
    /// Calibration residuals drawn uniformly and added to the prediction, plus jitter.
    EmpiricalResiduals { residuals: Vec<Tensor>, jitter: f64 },
    GaussianAroundPrediction { scale: f64 },
    ProvidedSamples { samples: Vec<Tensor> },
}

impl BaseMeasure {
    pub fn validate(&self, shape: &[usize]) -> Result<()> {
        let bank = match self {
            BaseMeasure::EmpiricalCalibration { targets, jitter } => {
                if !(*jitter >= 0.0) {
                    return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter}")));
                }
                targets
            }
            BaseMeasure::EmpiricalResiduals { residuals, jitter } => {
                if !(*jitter >= 0.0) {
                    return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter}")));
                }
                residuals
            }
            BaseMeasure::GaussianAroundPrediction { scale } => {
                if !(*scale > 0.0) {
                    return Err(Error::InvalidArgument(format!("scale must be > 0, got {scale}")));
                }
                return Ok(());
            }
            BaseMeasure::ProvidedSamples { samples } => samples,
        };
        if bank.is_empty() {
            return Err(Error::Empty("base measure samples"));
        }
        for t in bank {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.to_vec(),
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, yhat: &Tensor, rng: &mut R) -> Tensor {
        let pick = |bank: &[Tensor], rng: &mut R| bank[rng.random_range(0..bank.len())].clone();
        let jittered = |mut t: Tensor, jitter: f64, rng: &mut R| {
            if jitter > 0.0 {
                t.axpy(jitter, &standard_normal_like(rng, t.shape()));
            }
            t
        };
        match self {
            BaseMeasure::EmpiricalCalibration { targets, jitter } => {
                let t = pick(targets, rng);
                jittered(t, *jitter, rng)
            }
            BaseMeasure::EmpiricalResiduals { residuals, jitter } => {
                let t = yhat.add(&pick(residuals, rng));
                jittered(t, *jitter, rng)
            }
            BaseMeasure::GaussianAroundPrediction { scale } => {
                yhat.add(&standard_normal_like(rng, yhat.shape()).scale(*scale))
            }
            BaseMeasure::ProvidedSamples { samples } => pick(samples, rng),
        }
    }
}

/// Source of the level-`alpha` threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Thresholds {
    Global(Filtration),
    /// Weighted-quantile thresholds localized at `query` (raw input features).
    Local { filtration: LocalFiltration, query: Vec<f64> },
}

/// Everything needed to sample the predictive distribution at one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdSpec {
    pub model: ScoreModel,
    pub thresholds: Thresholds,
    pub base: BaseMeasure,
    pub mixing: MixingMeasure,
    #[serde(default)]
    pub flow: FlowOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdSample {
    pub y: Tensor,
    pub alpha: f64,
    pub tau: f64,
    pub clamped: bool,
    pub converged: bool,
    /// Final score of `y`.
    pub score: f64,
}

/// `tau(alpha)` with precomputed localization weights.
enum Planned<'a> {
    Global(&'a Filtration),
    Local { scores: &'a [f64], weights: Vec<f64> },
}

impl Planned<'_> {
    fn tau(&self, alpha: f64) -> Result<(f64, bool)> {
        match self {
            Planned::Global(f) => {
                let t = f.threshold(alpha)?;
                Ok((t.tau, t.clamped))
            }
            Planned::Local { scores, weights } => Ok((weighted_quantile(scores, weights, 1.0 - alpha)?, false)),
        }
    }
}

/// Draws `m` samples; sample `i` uses stream `(root_seed, 0).child(i)`.
///
/// Samples whose flow did not converge are returned with `converged = false`.
/// Hard flow errors abort with the offending index.
pub fn sample_cpd(spec: &CpdSpec, yhat: &Tensor, m: usize, root_seed: u64) -> Result<Vec<CpdSample>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    spec.mixing.validate()?;
    spec.base.validate(yhat.shape())?;
    spec.flow.validate()?;
    let planned = match &spec.thresholds {
        Thresholds::Global(f) => Planned::Global(f),
        Thresholds::Local { filtration, query } => {
            let (weights, _) = filtration.weights(query)?;
            Planned::Local { scores: filtration.scores(), weights }
        }
    };
    let root = RngStream::new(root_seed, 0);
    (0..m)
        .into_par_iter()
        .map(|i| {
            let stream = root.child(i as u64);
            let mut rng = stream.rng();
            let alpha = sample_alpha(&spec.mixing, &mut rng);
            let y0 = spec.base.sample(yhat, &mut rng);
            let run = || -> Result<CpdSample> {
                let (tau, clamped) = planned.tau(alpha)?;
                let res = integrate_to_boundary(&spec.model, yhat, &y0, tau, &spec.flow, stream.child(0))?;
                Ok(CpdSample {
                    score: res.final_score(),
                    y: res.terminal,
                    alpha,
                    tau,
                    clamped,
                    converged: res.converged,
                })
            };
            run().map_err(|e| Error::Sample { index: i, source: Box::new(e) })
        })
        .collect()
}

/// Fraction of samples whose flow did not converge.
pub fn failure_rate(samples: &[CpdSample]) -> f64 {
    samples.iter().filter(|s| !s.converged).count() as f64 / samples.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub beta: f64,
    pub tau_beta: f64,
    /// Fraction of samples with `S <= tau_beta + eps`.
    pub coverage: f64,
    /// `pi([beta, 1))`.
    pub target: f64,
    pub clamped_fraction: f64,
}

/// Empirical coverage of the level-`beta` conformal sets by the samples.
pub fn coverage_audit(
    samples: &[CpdSample],
    filtration: &Filtration,
    mixing: &MixingMeasure,
    betas: &[f64],
    eps: f64,
) -> Result<Vec<AuditRow>> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let m = samples.len() as f64;
    let clamped_fraction = samples.iter().filter(|s| s.clamped).count() as f64 / m;
    betas
        .iter()
        .map(|&beta| {
            let tau_beta = filtration.threshold(beta)?.tau;
            let covered = samples.iter().filter(|s| s.score <= tau_beta + eps).count();
            Ok(AuditRow {
                beta,
                tau_beta,
                coverage: covered as f64 / m,
                target: mixing.mass_at_least(beta),
                clamped_fraction,
            })
        })
        .collect()
}
