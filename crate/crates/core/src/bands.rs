//! Risk-controlling prediction bands built from sample envelopes and inflated
//! on held-out calibration curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Filtration;
use crate::error::{Error, Result};
use crate::numerics::quantile::{empirical_quantile, order_statistic};
use crate::numerics::Tensor;

/// `{y : l - eta_lo <= y <= u + eta_hi}` over a grid of `p` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Tensor,
    pub upper: Tensor,
    pub eta_lo: f64,
    pub eta_hi: f64,
}

impl Band {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self> {
        lower.check_same_shape(&upper)?;
        if lower.data().iter().zip(upper.data()).any(|(l, u)| l > u) {
            return Err(Error::InvalidArgument("band lower edge exceeds upper edge".into()));
        }
        Ok(Self { lower, upper, eta_lo: 0.0, eta_hi: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.len() == 0
    }

    pub fn inflated(&self, inflation: &Inflation) -> Band {
        Band {
            eta_lo: self.eta_lo + inflation.eta_lo,
            eta_hi: self.eta_hi + inflation.eta_hi,
            ..self.clone()
        }
    }

    /// Mean width `u - l + eta_lo + eta_hi` over the grid.
    pub fn mean_width(&self) -> f64 {
        let p = self.len() as f64;
        self.lower
            .data()
            .iter()
            .zip(self.upper.data())
            .map(|(l, u)| u - l + self.eta_lo + self.eta_hi)
            .sum::<f64>()
            / p
    }

    /// Lower and upper per-coordinate excesses of `y` beyond the inflated band.
    fn excesses(&self, y: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        self.lower.check_same_shape(y)?;
        let lo = self
            .lower
            .data()
            .iter()
            .zip(y.data())
            .map(|(l, v)| (l - self.eta_lo - v).max(0.0))
            .collect();
        let hi = self
            .upper
            .data()
            .iter()
            .zip(y.data())
            .map(|(u, v)| (v - u - self.eta_hi).max(0.0))
            .collect();
        Ok((lo, hi))
    }
}

/// Coordinatewise empirical quantiles of a bank of `M` samples.
pub fn envelope(samples: &[Tensor], lo_q: f64, hi_q: f64) -> Result<(Tensor, Tensor)> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!("envelope needs at least 2 samples, got {}", samples.len())));
    }
    if !(0.0 < lo_q && lo_q < hi_q && hi_q < 1.0) {
        return Err(Error::InvalidArgument(format!("need 0 < lo_q < hi_q < 1, got ({lo_q}, {hi_q})")));
    }
    for s in &samples[1..] {
        samples[0].check_same_shape(s)?;
    }
    let shape = samples[0].shape().to_vec();
    let p = samples[0].len();
    let mut lower = vec![0.0; p];
    let mut upper = vec![0.0; p];
    let mut column = vec![0.0; samples.len()];
    for j in 0..p {
        for (c, s) in column.iter_mut().zip(samples) {
            *c = s.data()[j];
        }
        lower[j] = empirical_quantile(&column, lo_q)?;
        upper[j] = empirical_quantile(&column, hi_q)?;
    }
    Ok((Tensor::new(lower, shape.clone())?, Tensor::new(upper, shape)?))
}

/// Fraction of grid points where `y` leaves the band inflated by a further `eta`.
pub fn pointwise_risk(band: &Band, y: &Tensor, eta: f64) -> Result<f64> {
    let (lo, hi) = band.excesses(y)?;
    let outside = lo.iter().zip(&hi).filter(|(a, b)| **a > eta || **b > eta).count();
    Ok(outside as f64 / band.len() as f64)
}

/// `ceil((1 - delta) p)`, at least 1.
fn kept(p: usize, delta: f64) -> usize {
    (((1.0 - delta) * p as f64 - 1e-9).ceil() as usize).clamp(1, p)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside [0,1)")));
    }
    Ok(())
}

/// Smallest `eta >= 0` with `pointwise_risk(band, y, eta) <= delta`.
pub fn min_inflation(band: &Band, y: &Tensor, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let (lo, hi) = band.excesses(y)?;
    let e: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a.max(*b)).collect();
    order_statistic(&e, kept(e.len(), delta))
}

/// Smallest one-sided inflation bringing the outside fraction on that side to at most `delta`.
fn min_side_inflation(excess: &[f64], delta: f64) -> Result<f64> {
    order_statistic(excess, kept(excess.len(), delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflationMode {
    Symmetric,
    /// Separate lower and upper inflations, each at level `alpha / 2` and risk `delta / 2`.
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inflation {
    pub eta_lo: f64,
    pub eta_hi: f64,
    /// The conformal order statistic fell outside `1..=n`.
    pub clamped: bool,
}

/// Conformal order statistic of per-curve minimal inflations.
pub fn calibrate_eta(
    bands: &[Band],
    targets: &[Tensor],
    delta: f64,
    alpha: f64,
    mode: InflationMode,
) -> Result<Inflation> {
    if bands.is_empty() {
        return Err(Error::Empty("calibration curves"));
    }
    if bands.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![bands.len()],
            got: vec![targets.len()],
        });
    }
    check_delta(delta)?;
    match mode {
        InflationMode::Symmetric => {
            let etas = bands
                .par_iter()
                .zip(targets.par_iter())
                .map(|(b, y)| min_inflation(b, y, delta))
                .collect::<Result<Vec<f64>>>()?;
            let t = Filtration::from_scores(&etas)?.threshold(alpha)?;
            Ok(Inflation { eta_lo: t.tau, eta_hi: t.tau, clamped: t.clamped })
        }
        InflationMode::Asymmetric => {
            let pairs = bands
                .par_iter()
                .zip(targets.par_iter())
                .map(|(b, y)| {
                    let (lo, hi) = b.excesses(y)?;
                    Ok((min_side_inflation(&lo, delta / 2.0)?, min_side_inflation(&hi, delta / 2.0)?))
                })
                .collect::<Result<Vec<(f64, f64)>>>()?;
            let (lo, hi): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let tl = Filtration::from_scores(&lo)?.threshold(alpha / 2.0)?;
            let th = Filtration::from_scores(&hi)?.threshold(alpha / 2.0)?;
            Ok(Inflation {
                eta_lo: tl.tau,
                eta_hi: th.tau,
                clamped: tl.clamped || th.clamped,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn envelope_examples() {
        let s = v(&[1.0, -2.0, 3.0]);
        let (l, u) = envelope(&[s.clone(), s.clone(), s.clone()], 0.05, 0.95).unwrap();
        assert_eq!(l, s);
        assert_eq!(u, s);
        let a = v(&[0.0, 1.0]);
        let b = v(&[1.0, 2.0]);
        let (l, u) = envelope(&[b.clone(), a.clone()], 0.25, 0.75).unwrap();
        assert_eq!(l, a);
        assert_eq!(u, b);
        assert!(envelope(&[a.clone(), b.clone()], 0.75, 0.25).is_err());
        assert!(envelope(&[a], 0.25, 0.75).is_err());
    }

    #[test]
    fn risk_examples() {
        let band = Band::new(v(&[0.0; 4]), v(&[1.0; 4])).unwrap();
        assert_eq!(pointwise_risk(&band, &v(&[0.5; 4]), 0.0).unwrap(), 0.0);
        assert_eq!(pointwise_risk(&band, &v(&[3.0; 4]), 1.0).unwrap(), 1.0);
        assert_eq!(pointwise_risk(&band, &v(&[0.5, 0.5, -0.1, 1.0]), 0.0).unwrap(), 0.25);
        assert!(pointwise_risk(&band, &v(&[0.5; 3]), 0.0).is_err());
    }

    #[test]
    fn min_inflation_examples() {
        let band = Band::new(v(&[0.0; 4]), v(&[1.0; 4])).unwrap();
        // Excesses (0, 0.5, 1.0, 2.0).
        let y = v(&[0.5, 1.5, -1.0, 3.0]);
        assert_eq!(min_inflation(&band, &y, 0.25).unwrap(), 1.0);
        assert_eq!(min_inflation(&band, &y, 0.0).unwrap(), 2.0);
        assert_eq!(min_inflation(&band, &v(&[0.2; 4]), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn calibrate_examples() {
        let band = Band::new(v(&[0.0, 0.0]), v(&[1.0, 1.0])).unwrap();
        let bands = vec![band.clone(); 3];
        let inside = vec![v(&[0.5, 0.5]); 3];
        let inf = calibrate_eta(&bands, &inside, 0.0, 0.1, InflationMode::Symmetric).unwrap();
        assert_eq!((inf.eta_lo, inf.eta_hi), (0.0, 0.0));
        let ys = vec![v(&[0.5, 0.5]), v(&[0.5, 0.5]), v(&[2.0, 0.5])];
        let inf = calibrate_eta(&bands, &ys, 0.0, 0.5, InflationMode::Symmetric).unwrap();
        assert_eq!(inf.eta_lo, 0.0);
        assert!(calibrate_eta(&[], &[], 0.0, 0.1, InflationMode::Symmetric).is_err());
    }

    #[test]
    fn asymmetric_tracks_each_side() {
        let band = Band::new(v(&[0.0, 0.0]), v(&[1.0, 1.0])).unwrap();
        let bands = vec![band; 39];
        let ys: Vec<Tensor> = (0..39).map(|i| v(&[1.0 + i as f64 / 39.0, 0.5])).collect();
        let inf = calibrate_eta(&bands, &ys, 0.0, 0.1, InflationMode::Asymmetric).unwrap();
        assert_eq!(inf.eta_lo, 0.0);
        assert!(inf.eta_hi > 0.9);
    }
}
