//! Nonconformity score families with analytic gradients in the candidate output.
//!
//! Every score is written `S(y_hat, y)`: `y_hat` is the fixed prediction and `y` the
//! candidate that the flow moves. Gradients are always with respect to `y`.

mod field;
mod trajectory;
mod vector;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mad, median, Tensor};

pub use trajectory::{ACOS_CLIP, CGT_TERMS};
pub use vector::{DiagonalFit, ResidualBank};

pub(crate) use trajectory::{traj_len, turning_angles};

/// Numerical jitter used wherever a score adds an unspecified small constant.
pub const EPS_NUM: f64 = 1e-8;

/// Gradients with squared norm below this are reported as degenerate.
pub const DEGENERATE_GRAD_SQ: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDomain {
    Vector,
    Field,
    Trajectory,
}

/// A score family together with any fitted parameters. Parameters that must be
/// estimated from calibration data are `None` until fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScoreFamily {
    L2,
    L1,
    Huber {
        delta: f64,
    },
    Knn {
        k: usize,
        #[serde(default)]
        bank: Option<ResidualBank>,
    },
    GaussNll {
        #[serde(default)]
        fit: Option<DiagonalFit>,
    },
    StudentTNll {
        nu: f64,
        #[serde(default)]
        fit: Option<DiagonalFit>,
    },
    FieldL2,
    Sobolev {
        lambda: f64,
    },
    Psd,
    Wavelet {
        depth: usize,
    },
    /// `max(s_sob / (k_sob + eps), s_psd / (k_psd + eps))`.
    ComboMax {
        lambda: f64,
        #[serde(default)]
        scales: Option<[f64; 2]>,
    },
    /// Weighted RMS of the normalized pixel and log-spectral terms.
    LocalCombined {
        w_l2: f64,
        w_spec: f64,
        eps_spec: f64,
        #[serde(default)]
        scales: Option<[f64; 2]>,
    },
    TrajL2,
    Cgt {
        weights: [f64; 6],
        #[serde(default)]
        scales: Option<[f64; 6]>,
    },
}

impl ScoreFamily {
    pub fn knn(k: usize) -> Self {
        ScoreFamily::Knn { k, bank: None }
    }

    pub fn gauss_nll() -> Self {
        ScoreFamily::GaussNll { fit: None }
    }

    pub fn student_t_nll(nu: f64) -> Self {
        ScoreFamily::StudentTNll { nu, fit: None }
    }

    pub fn combo_max() -> Self {
        ScoreFamily::ComboMax { lambda: 1.0, scales: None }
    }

    pub fn local_combined() -> Self {
        ScoreFamily::LocalCombined {
            w_l2: 10.0,
            w_spec: 1.0,
            eps_spec: 1e-8,
            scales: None,
        }
    }

    pub fn cgt() -> Self {
        ScoreFamily::Cgt { weights: [1.0; 6], scales: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreFamily::L2 => "l2",
            ScoreFamily::L1 => "l1",
            ScoreFamily::Huber { .. } => "huber",
            ScoreFamily::Knn { .. } => "knn",
            ScoreFamily::GaussNll { .. } => "gauss_nll",
            ScoreFamily::StudentTNll { .. } => "student_t_nll",
            ScoreFamily::FieldL2 => "field_l2",
            ScoreFamily::Sobolev { .. } => "sobolev",
            ScoreFamily::Psd => "psd",
            ScoreFamily::Wavelet { .. } => "wavelet",
            ScoreFamily::ComboMax { .. } => "combo_max",
            ScoreFamily::LocalCombined { .. } => "local_combined",
            ScoreFamily::TrajL2 => "traj_l2",
            ScoreFamily::Cgt { .. } => "cgt",
        }
    }

    pub fn domain(&self) -> ScoreDomain {
        use ScoreFamily::*;
        match self {
            L2 | L1 | Huber { .. } | Knn { .. } | GaussNll { .. } | StudentTNll { .. } => {
                ScoreDomain::Vector
            }
            FieldL2 | Sobolev { .. } | Psd | Wavelet { .. } | ComboMax { .. } | LocalCombined { .. } => {
                ScoreDomain::Field
            }
            TrajL2 | Cgt { .. } => ScoreDomain::Trajectory,
        }
    }

    /// False for the families whose gradient is only piecewise defined in a way that
    /// defeats the flow (sign changes of L1, neighbour switches of kNN).
    pub fn is_smooth(&self) -> bool {
        !matches!(self, ScoreFamily::L1 | ScoreFamily::Knn { .. })
    }
}

/// Which residual model to fit from a bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ResidualModel {
    Gauss,
    StudentT { nu: f64 },
    Knn { k: usize },
}

/// How per-term calibration scales are summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleRule {
    Median,
    MadPlusEps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub family: ScoreFamily,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    EPS_NUM
}

impl From<ScoreFamily> for ScoreModel {
    fn from(family: ScoreFamily) -> Self {
        ScoreModel::new(family)
    }
}

impl ScoreModel {
    pub fn new(family: ScoreFamily) -> Self {
        Self { family, eps: EPS_NUM }
    }

    pub fn domain(&self) -> ScoreDomain {
        self.family.domain()
    }

    pub fn is_fitted(&self) -> bool {
        use ScoreFamily::*;
        match &self.family {
            Knn { bank, .. } => bank.is_some(),
            GaussNll { fit } | StudentTNll { fit, .. } => fit.is_some(),
            ComboMax { scales, .. } | LocalCombined { scales, .. } => scales.is_some(),
            Cgt { scales, .. } => scales.is_some(),
            _ => true,
        }
    }

    pub fn evaluate(&self, yhat: &Tensor, y: &Tensor) -> Result<f64> {
        Ok(self.compute(yhat, y, false)?.0)
    }

    /// Analytic gradient with respect to `y`. A gradient whose squared norm is below
    /// [`DEGENERATE_GRAD_SQ`] is reported as [`Error::DegenerateGradient`].
    pub fn gradient(&self, yhat: &Tensor, y: &Tensor) -> Result<Tensor> {
        let (_, g) = self.value_and_gradient(yhat, y)?;
        let norm_sq = g.norm_sq();
        if norm_sq < DEGENERATE_GRAD_SQ {
            return Err(Error::DegenerateGradient { norm_sq });
        }
        Ok(g)
    }

    /// Value and gradient in one pass, without the degeneracy check.
    pub fn value_and_gradient(&self, yhat: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
        let (s, g) = self.compute(yhat, y, true)?;
        Ok((s, g.expect("gradient requested")))
    }

    /// Unnormalized component terms of the composite families: `(s_sob, s_psd)` for
    /// ComboMax, `(t_l2, t_spec)` for LocalCombined and the six CGT terms.
    pub fn terms(&self, yhat: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        yhat.check_same_shape(y)?;
        match &self.family {
            ScoreFamily::ComboMax { lambda, .. } => {
                Ok(vec![field::sobolev(yhat, y, *lambda)?.0, field::psd(yhat, y)?.0])
            }
            ScoreFamily::LocalCombined { eps_spec, .. } => {
                Ok(field::local_terms(yhat, y, self.eps, *eps_spec, false)?.0.to_vec())
            }
            ScoreFamily::Cgt { .. } => Ok(trajectory::cgt_terms(yhat, y, self.eps, false)?.0.to_vec()),
            other => Err(Error::InvalidArgument(format!(
                "{} has no component terms",
                other.name()
            ))),
        }
    }

    fn compute(&self, yhat: &Tensor, y: &Tensor, want_grad: bool) -> Result<(f64, Option<Tensor>)> {
        yhat.check_same_shape(y)?;
        let eps = self.eps;
        let shape = y.shape().to_vec();
        let wrap = |(s, g): (f64, Vec<f64>)| -> Result<(f64, Option<Tensor>)> {
            Ok((s, Some(Tensor::new(g, shape.clone())?)))
        };
        let residual = || y.sub(yhat).into_data();
        let (s, g) = match &self.family {
            ScoreFamily::L2 => wrap(vector::l2(&residual()))?,
            ScoreFamily::L1 => wrap(vector::l1(&residual()))?,
            ScoreFamily::Huber { delta } => wrap(vector::huber(&residual(), *delta))?,
            ScoreFamily::Knn { k, bank } => {
                let bank = bank.as_ref().ok_or(Error::Unfitted("kNN residual bank"))?;
                wrap(vector::knn(&residual(), *k, bank)?)?
            }
            ScoreFamily::GaussNll { fit } => {
                let fit = fit.as_ref().ok_or(Error::Unfitted("Gaussian residual model"))?;
                wrap(vector::gauss_nll(&residual(), fit)?)?
            }
            ScoreFamily::StudentTNll { nu, fit } => {
                let fit = fit.as_ref().ok_or(Error::Unfitted("Student-t residual model"))?;
                wrap(vector::student_t_nll(&residual(), *nu, fit)?)?
            }
            ScoreFamily::FieldL2 => {
                crate::numerics::tensor::field_dims(y)?;
                let (s, g) = field::field_l2(yhat, y);
                (s, Some(g))
            }
            ScoreFamily::Sobolev { lambda } => {
                let (s, g) = field::sobolev(yhat, y, *lambda)?;
                (s, Some(g))
            }
            ScoreFamily::Psd => {
                let (s, g) = field::psd(yhat, y)?;
                (s, Some(g))
            }
            ScoreFamily::Wavelet { depth } => {
                let (s, g) = field::wavelet(yhat, y, *depth)?;
                (s, Some(g))
            }
            ScoreFamily::ComboMax { lambda, scales } => {
                let [k_sob, k_psd] = scales.ok_or(Error::Unfitted("ComboMax scales"))?;
                let (s_sob, g_sob) = field::sobolev(yhat, y, *lambda)?;
                let (s_psd, g_psd) = field::psd(yhat, y)?;
                let (a, b) = (s_sob / (k_sob + eps), s_psd / (k_psd + eps));
                if a >= b {
                    (a, Some(g_sob.scale(1.0 / (k_sob + eps))))
                } else {
                    (b, Some(g_psd.scale(1.0 / (k_psd + eps))))
                }
            }
            ScoreFamily::LocalCombined { w_l2, w_spec, eps_spec, scales } => {
                let kappa = scales.ok_or(Error::Unfitted("LocalCombined scales"))?;
                let (t, gt) = field::local_terms(yhat, y, eps, *eps_spec, want_grad)?;
                let w = [*w_l2, *w_spec];
                weighted_rms(&t, &w, &kappa, eps, gt.map(|[a, b]| vec![a.into_data(), b.into_data()]))
                    .map(|(s, g)| (s, g.map(|g| Tensor::new(g, shape.clone()).expect("shape"))))?
            }
            ScoreFamily::TrajL2 => {
                let (s, g) = trajectory::traj_l2(yhat, y)?;
                (s, Some(g))
            }
            ScoreFamily::Cgt { weights, scales } => {
                let kappa = scales.ok_or(Error::Unfitted("CGT scales"))?;
                let (t, gt) = trajectory::cgt_terms(yhat, y, eps, want_grad)?;
                weighted_rms(&t, weights, &kappa, eps, gt)
                    .map(|(s, g)| (s, g.map(|g| Tensor::new(g, shape.clone()).expect("shape"))))?
            }
        };
        Ok((s, if want_grad { g } else { None }))
    }

    /// Refits calibration-dependent scales of composite families from calibration
    /// pairs. Other families are returned unchanged.
    pub fn fit_scales(&self, predictions: &[Tensor], targets: &[Tensor]) -> Result<ScoreModel> {
        let rule = match self.family {
            ScoreFamily::ComboMax { .. } => ScaleRule::Median,
            ScoreFamily::LocalCombined { .. } | ScoreFamily::Cgt { .. } => ScaleRule::MadPlusEps,
            _ => return Ok(self.clone()),
        };
        if predictions.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![predictions.len()],
                got: vec![targets.len()],
            });
        }
        let terms = predictions
            .iter()
            .zip(targets)
            .map(|(p, t)| self.terms(p, t))
            .collect::<Result<Vec<_>>>()?;
        let kappa = fit_score_scales(&terms, rule, self.eps)?;
        let mut out = self.clone();
        match &mut out.family {
            ScoreFamily::ComboMax { scales, .. } | ScoreFamily::LocalCombined { scales, .. } => {
                *scales = Some([kappa[0], kappa[1]]);
            }
            ScoreFamily::Cgt { scales, .. } => {
                let mut k = [0.0; 6];
                k.copy_from_slice(&kappa);
                *scales = Some(k);
            }
            _ => unreachable!(),
        }
        Ok(out)
    }

    /// Fits whatever the family needs from calibration pairs: residual models for
    /// kNN/Gaussian/Student-t, robust scales for composite scores.
    pub fn fit(&self, predictions: &[Tensor], targets: &[Tensor]) -> Result<ScoreModel> {
        let model = match &self.family {
            ScoreFamily::Knn { k, .. } => Some(ResidualModel::Knn { k: *k }),
            ScoreFamily::GaussNll { .. } => Some(ResidualModel::Gauss),
            ScoreFamily::StudentTNll { nu, .. } => Some(ResidualModel::StudentT { nu: *nu }),
            _ => None,
        };
        match model {
            Some(m) => {
                let bank = ResidualBank::from_pairs(predictions, targets)?;
                let mut fitted = fit_residual_model(m, &bank)?;
                fitted.eps = self.eps;
                Ok(fitted)
            }
            None => self.fit_scales(predictions, targets),
        }
    }
}

/// `sqrt(sum_k w_k (t_k / kappa_k)^2 / (sum_k w_k + eps))` and its gradient given
/// per-term gradients.
fn weighted_rms(
    t: &[f64],
    w: &[f64],
    kappa: &[f64],
    eps: f64,
    term_grads: Option<Vec<Vec<f64>>>,
) -> Result<(f64, Option<Vec<f64>>)> {
    let wsum: f64 = w.iter().sum::<f64>() + eps;
    let q: f64 = t
        .iter()
        .zip(w)
        .zip(kappa)
        .map(|((t, w), k)| w * (t / k).powi(2))
        .sum::<f64>()
        / wsum;
    let s = q.sqrt();
    let g = term_grads.map(|grads| {
        let mut out = vec![0.0; grads[0].len()];
        if s > 0.0 {
            for (j, gj) in grads.iter().enumerate() {
                let c = w[j] * t[j] / (kappa[j] * kappa[j] * wsum * s);
                for (o, v) in out.iter_mut().zip(gj) {
                    *o += c * v;
                }
            }
        }
        out
    });
    Ok((s, g))
}

/// Central finite-difference gradient of `model` in `y` with step `step`.
pub fn central_difference(model: &ScoreModel, yhat: &Tensor, y: &Tensor, step: f64) -> Result<Tensor> {
    let mut probe = y.clone();
    let mut out = Tensor::zeros(y.shape());
    for i in 0..y.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = model.evaluate(yhat, &probe)?;
        probe.data_mut()[i] = orig - step;
        let down = model.evaluate(yhat, &probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

fn check_domain(model: &ScoreModel, want: ScoreDomain) -> Result<()> {
    if model.domain() != want {
        return Err(Error::InvalidArgument(format!(
            "{} is not a {want:?} score",
            model.family.name()
        )));
    }
    Ok(())
}

pub fn eval_vector_score(model: &ScoreModel, yhat: &Tensor, y: &Tensor) -> Result<f64> {
    check_domain(model, ScoreDomain::Vector)?;
    model.evaluate(yhat, y)
}

pub fn eval_field_score(model: &ScoreModel, yhat: &Tensor, y: &Tensor) -> Result<f64> {
    check_domain(model, ScoreDomain::Field)?;
    model.evaluate(yhat, y)
}

pub fn eval_trajectory_score(model: &ScoreModel, yhat: &Tensor, y: &Tensor) -> Result<f64> {
    check_domain(model, ScoreDomain::Trajectory)?;
    model.evaluate(yhat, y)
}

/// Fits a residual model to a calibration bank.
pub fn fit_residual_model(kind: ResidualModel, bank: &ResidualBank) -> Result<ScoreModel> {
    if bank.n() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 residuals, got {}",
            bank.n()
        )));
    }
    let family = match kind {
        ResidualModel::Gauss => ScoreFamily::GaussNll {
            fit: Some(vector::fit_diagonal(bank, EPS_NUM)),
        },
        ResidualModel::StudentT { nu } => {
            if nu <= 2.0 {
                return Err(Error::InvalidArgument(format!("Student-t needs nu > 2, got {nu}")));
            }
            let mut fit = vector::fit_diagonal(bank, EPS_NUM);
            for v in fit.var.iter_mut() {
                *v = (*v * (nu - 2.0) / nu).max(EPS_NUM);
            }
            ScoreFamily::StudentTNll { nu, fit: Some(fit) }
        }
        ResidualModel::Knn { k } => {
            if k == 0 || bank.n() < k {
                return Err(Error::InvalidArgument(format!(
                    "kNN needs 1 <= k <= n, got k={k}, n={}",
                    bank.n()
                )));
            }
            ScoreFamily::Knn {
                k,
                bank: Some(bank.clone()),
            }
        }
    };
    Ok(ScoreModel::new(family))
}

/// Per-term robust scales from calibration term values (`terms[i][k]` is term `k`
/// of sample `i`).
pub fn fit_score_scales(terms: &[Vec<f64>], rule: ScaleRule, eps: f64) -> Result<Vec<f64>> {
    let first = terms.first().ok_or(Error::Empty("score terms"))?;
    if terms.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 calibration samples".into()));
    }
    let k = first.len();
    (0..k)
        .map(|j| {
            let col: Vec<f64> = terms.iter().map(|t| t[j]).collect();
            match rule {
                ScaleRule::Median => median(&col),
                ScaleRule::MadPlusEps => Ok(mad(&col)? + eps),
            }
        })
        .collect()
}
