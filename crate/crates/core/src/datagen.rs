//! Synthetic exchangeable regression data and a closed-form ridge predictor.
//!
//! Every generator is a pure function of its parameters and seed. Shared
//! parameters come from stream `child(0)` of the experiment stream and the
//! train, calibration and test splits from `child(1..=3)`; row `i` of a split
//! uses that split's `child(i)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::fft::{check_pow2, fft2_in_place, fft_in_place};
use crate::numerics::resize::{resize, ResizeMode};
use crate::numerics::rng::standard_normal_vec;
use crate::numerics::{RngStream, Tensor};

/// Nugget added to GP covariance diagonals.
pub const GP_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Cal,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Cal, Split::Test];

    fn stream_index(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Cal => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<Tensor>,
    pub y: Vec<Tensor>,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Dataset,
    pub cal: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Cal => &self.cal,
            Split::Test => &self.test,
        }
    }
}

fn root(seed: u64) -> RngStream {
    RngStream::new(seed, 0)
}

/// Builds all three splits, generating rows in parallel from per-row streams.
fn build_splits<F>(seed: u64, n: usize, row: F) -> Result<Splits>
where
    F: Fn(Split, RngStream) -> Result<(Tensor, Tensor)> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1".into()));
    }
    let make = |split: Split| -> Result<Dataset> {
        let s = root(seed).child(split.stream_index());
        let rows = (0..n)
            .into_par_iter()
            .map(|i| row(split, s.child(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let (x, y) = rows.into_iter().unzip();
        Ok(Dataset { x, y, split, seed })
    };
    Ok(Splits { train: make(Split::Train)?, cal: make(Split::Cal)?, test: make(Split::Test)? })
}

/// Row-major `p x p` coefficient matrix with standard normal entries.
fn draw_theta(seed: u64, p: usize) -> Vec<f64> {
    standard_normal_vec(&mut root(seed).child(0).rng(), p * p)
}

fn linear_map(x: &[f64], theta: &[f64], p: usize) -> Vec<f64> {
    (0..p).map(|j| (0..p).map(|i| x[i] * theta[i * p + j]).sum()).collect()
}

/// `Y = X Theta + eps` with standard normal `X`, `Theta` and `eps`.
pub fn gen_linear_gaussian(p: usize, n: usize, seed: u64) -> Result<Splits> {
    if p == 0 {
        return Err(Error::InvalidArgument("need p >= 1".into()));
    }
    let theta = draw_theta(seed, p);
    build_splits(seed, n, |_, s| {
        let mut rng = s.rng();
        let x = standard_normal_vec(&mut rng, p);
        let eps = standard_normal_vec(&mut rng, p);
        let y: Vec<f64> = linear_map(&x, &theta, p).iter().zip(&eps).map(|(a, e)| a + e).collect();
        Ok((Tensor::vector(x), Tensor::vector(y)))
    })
}

/// Noise scales `sigma_j = exp(a_j)` with `a_j` linear from 0 to 1.5.
pub fn student_t_scales(p: usize) -> Vec<f64> {
    if p == 1 {
        return vec![1.0];
    }
    (0..p).map(|j| (1.5 * j as f64 / (p - 1) as f64).exp()).collect()
}

/// `Y = X Theta + eps` with `eps_j ~ sigma_j t_3`.
pub fn gen_linear_student_t(p: usize, n: usize, seed: u64) -> Result<Splits> {
    if p < 2 {
        return Err(Error::InvalidArgument("need p >= 2".into()));
    }
    let theta = draw_theta(seed, p);
    let sigma = student_t_scales(p);
    let t3 = StudentT::new(3.0).expect("valid dof");
    build_splits(seed, n, |_, s| {
        let mut rng = s.rng();
        let x = standard_normal_vec(&mut rng, p);
        let y: Vec<f64> = linear_map(&x, &theta, p)
            .iter()
            .zip(&sigma)
            .map(|(a, sd)| a + sd * t3.sample(&mut rng))
            .collect();
        Ok((Tensor::vector(x), Tensor::vector(y)))
    })
}

/// Squared-exponential correlation at distance `d`.
pub fn se_kernel(d: f64, ell: f64) -> f64 {
    (-d * d / (2.0 * ell * ell)).exp()
}

/// `p` equispaced points on `[0, 1]`.
pub fn unit_grid(p: usize) -> Vec<f64> {
    (0..p).map(|i| i as f64 / (p - 1) as f64).collect()
}

/// Lower Cholesky factor of the SE covariance on the unit grid, raising the
/// nugget tenfold on failure.
pub fn gp1d_factor(p: usize, ell: f64) -> Result<DMatrix<f64>> {
    let u = unit_grid(p);
    let mut jitter = GP_JITTER;
    while jitter <= 1e-4 {
        let k = DMatrix::from_fn(p, p, |i, j| se_kernel(u[i] - u[j], ell) + if i == j { jitter } else { 0.0 });
        if let Some(ch) = k.cholesky() {
            return Ok(ch.l());
        }
        jitter *= 10.0;
    }
    Err(Error::Singular)
}

fn gp1d_draw<R: Rng + ?Sized>(l: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let z = nalgebra::DVector::from_vec(standard_normal_vec(rng, l.nrows()));
    (l * z).as_slice().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gp1dVariant {
    Symmetric,
    Asym,
    BiasMu,
    BiasMuSigma,
}

impl Gp1dVariant {
    pub const ALL: [Gp1dVariant; 4] =
        [Gp1dVariant::Symmetric, Gp1dVariant::Asym, Gp1dVariant::BiasMu, Gp1dVariant::BiasMuSigma];

    pub fn name(self) -> &'static str {
        match self {
            Gp1dVariant::Symmetric => "symmetric",
            Gp1dVariant::Asym => "asym",
            Gp1dVariant::BiasMu => "bias_mu",
            Gp1dVariant::BiasMuSigma => "bias_mu_sigma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gp1dParams {
    pub n: usize,
    pub p: usize,
    pub ell_x: f64,
    pub ell_y: f64,
    pub beta: f64,
    pub variant: Gp1dVariant,
}

impl Default for Gp1dParams {
    fn default() -> Self {
        Self { n: 500, p: 256, ell_x: 0.2, ell_y: 0.2, beta: 0.6, variant: Gp1dVariant::Symmetric }
    }
}

/// Mean shift of the first bias variant, `0.5 + 0.25 sin(4 pi (2u - 1))`.
pub fn bias_mu_mean(u: f64) -> f64 {
    0.5 + 0.25 * (4.0 * std::f64::consts::PI * (2.0 * u - 1.0)).sin()
}

/// Mean shift of the second bias variant, `0.5 sin(4 pi (2u - 1))`.
pub fn bias_mu_sigma_mean(u: f64) -> f64 {
    0.5 * (4.0 * std::f64::consts::PI * (2.0 * u - 1.0)).sin()
}

/// Scale of the second bias variant, `0.5 linspace(1, 4 pi, p)`.
pub fn bias_mu_sigma_scale(p: usize) -> Vec<f64> {
    let end = 4.0 * std::f64::consts::PI;
    (0..p).map(|i| 0.5 * (1.0 + (end - 1.0) * i as f64 / (p - 1) as f64)).collect()
}

fn pointwise_mean(ys: &[Tensor]) -> Vec<f64> {
    let p = ys[0].len();
    let mut m = vec![0.0; p];
    for y in ys {
        for (a, v) in m.iter_mut().zip(y.data()) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= ys.len() as f64);
    m
}

/// Applies the variant's output transform to one split in place.
fn transform_gp1d(ys: &mut [Tensor], variant: Gp1dVariant, split: Split) {
    let p = ys[0].len();
    let u = unit_grid(p);
    match variant {
        Gp1dVariant::Symmetric => {}
        Gp1dVariant::Asym => {
            let m = pointwise_mean(ys);
            for y in ys.iter_mut() {
                y.data_mut().iter_mut().zip(&m).for_each(|(v, mu)| *v = (*v - mu).exp());
            }
            let total = ys.iter().map(|y| y.data().iter().sum::<f64>()).sum::<f64>() / (ys.len() * p) as f64;
            for y in ys.iter_mut() {
                y.data_mut().iter_mut().for_each(|v| *v -= total);
            }
        }
        Gp1dVariant::BiasMu | Gp1dVariant::BiasMuSigma => {
            let m = pointwise_mean(ys);
            for y in ys.iter_mut() {
                y.data_mut().iter_mut().zip(&m).for_each(|(v, mu)| *v = ((*v - mu) / 2.0).exp());
            }
            let m2 = pointwise_mean(ys);
            for y in ys.iter_mut() {
                y.data_mut().iter_mut().zip(&m2).for_each(|(v, mu)| *v -= mu);
            }
            if split == Split::Train {
                return;
            }
            let sigma = bias_mu_sigma_scale(p);
            for y in ys.iter_mut() {
                for (j, v) in y.data_mut().iter_mut().enumerate() {
                    *v = if variant == Gp1dVariant::BiasMu {
                        bias_mu_mean(u[j]) + *v
                    } else {
                        bias_mu_sigma_mean(u[j]) + sigma[j] * *v
                    };
                }
            }
        }
    }
}

/// `Y = beta X + eps` with independent 1-D SE Gaussian processes, then the
/// variant's per-split output transform.
pub fn gen_gp1d(params: &Gp1dParams, seed: u64) -> Result<Splits> {
    if params.p < 2 {
        return Err(Error::InvalidArgument("need p >= 2".into()));
    }
    let lx = gp1d_factor(params.p, params.ell_x)?;
    let ly = gp1d_factor(params.p, params.ell_y)?;
    let beta = params.beta;
    let mut splits = build_splits(seed, params.n, |_, s| {
        let mut rng = s.rng();
        let x = gp1d_draw(&lx, &mut rng);
        let e = gp1d_draw(&ly, &mut rng);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| beta * a + b).collect();
        Ok((Tensor::vector(x), Tensor::vector(y)))
    })?;
    for split in Split::ALL {
        let ds = match split {
            Split::Train => &mut splits.train,
            Split::Cal => &mut splits.cal,
            Split::Test => &mut splits.test,
        };
        transform_gp1d(&mut ds.y, params.variant, split);
    }
    Ok(splits)
}

/// Circulant-embedding sampler for a separable SE field on a `p x p` unit grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Gp2dSampler {
    p: usize,
    m: usize,
    /// Square roots of the 1-D embedding eigenvalues.
    sqrt_eig: Vec<f64>,
}

impl Gp2dSampler {
    pub fn new(p: usize, ell: f64) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidArgument("need p >= 2".into()));
        }
        check_pow2(p, "GP grid size")?;
        let h = 1.0 / (p - 1) as f64;
        let mut m = 2 * p;
        while m <= 16 * p {
            let mut c: Vec<Complex64> = (0..m)
                .map(|k| Complex64::new(se_kernel(k.min(m - k) as f64 * h, ell), 0.0))
                .collect();
            c[0].re += GP_JITTER;
            fft_in_place(&mut c, false);
            let eig: Vec<f64> = c.iter().map(|z| z.re).collect();
            let top = eig.iter().cloned().fold(0.0, f64::max);
            if eig.iter().all(|&l| l >= -1e-10 * top) {
                return Ok(Self { p, m, sqrt_eig: eig.iter().map(|l| l.max(0.0).sqrt()).collect() });
            }
            m *= 2;
        }
        Err(Error::InvalidArgument(format!("circulant embedding is not PSD for length-scale {ell}")))
    }

    /// One zero-mean field of shape `[p, p]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let m = self.m;
        let mut buf: Vec<Complex64> = (0..m * m)
            .map(|k| {
                let s = self.sqrt_eig[k / m] * self.sqrt_eig[k % m];
                let (a, b): (f64, f64) = (rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
                Complex64::new(s * a, s * b)
            })
            .collect();
        fft2_in_place(&mut buf, m, m, false);
        let p = self.p;
        Tensor::from_fn(&[p, p], |k| buf[(k / p) * m + k % p].re / m as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gp2dParams {
    pub n: usize,
    pub p: usize,
    pub ell_x: f64,
    pub ell_y: f64,
    pub beta: f64,
}

impl Default for Gp2dParams {
    fn default() -> Self {
        Self { n: 500, p: 64, ell_x: 0.15, ell_y: 0.08, beta: 0.6 }
    }
}

/// `Y = beta X + eps` with independent 2-D separable SE fields.
pub fn gen_gp2d(params: &Gp2dParams, seed: u64) -> Result<Splits> {
    let sx = Gp2dSampler::new(params.p, params.ell_x)?;
    let sy = Gp2dSampler::new(params.p, params.ell_y)?;
    let beta = params.beta;
    build_splits(seed, params.n, |_, s| {
        let mut rng = s.rng();
        let x = sx.sample(&mut rng);
        let mut y = sy.sample(&mut rng);
        y.axpy(beta, &x);
        Ok((x, y))
    })
}

/// The 2-D GP targets paired with their bilinear `q x q` downsampling as input.
pub fn gen_gp2d_downscale(params: &Gp2dParams, q: usize, seed: u64) -> Result<Splits> {
    let mut splits = gen_gp2d(params, seed)?;
    for ds in [&mut splits.train, &mut splits.cal, &mut splits.test] {
        ds.x = ds.y.iter().map(|y| resize(y, q, q, ResizeMode::Bilinear)).collect::<Result<_>>()?;
    }
    Ok(splits)
}

/// Trajectory splits plus a paired noisy prediction of each target horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub data: Splits,
    pub train_predictions: Vec<Tensor>,
    pub cal_predictions: Vec<Tensor>,
    pub test_predictions: Vec<Tensor>,
}

/// Gaussian-smoothed white noise of length `t`.
fn smooth_noise<R: Rng + ?Sized>(rng: &mut R, t: usize, width: f64) -> Vec<f64> {
    let half = (3.0 * width).ceil() as usize;
    let raw = standard_normal_vec(rng, t + 2 * half);
    let w: Vec<f64> = (0..=2 * half).map(|k| se_kernel(k as f64 - half as f64, width)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..t).map(|i| (0..=2 * half).map(|k| raw[i + k] * w[k]).sum::<f64>() / norm).collect()
}

/// Planar curves of `t` points built by integrating smoothed random velocities.
/// The first `2t/3` points form the input context and the rest the target
/// horizon; predictions add `noise` times a smoothed perturbation to the target.
pub fn gen_trajectories(n: usize, t: usize, noise: f64, seed: u64) -> Result<TrajectorySet> {
    if t < 3 {
        return Err(Error::InvalidArgument("need T >= 3".into()));
    }
    let ctx = (2 * t / 3).max(1);
    let horizon = t - ctx;
    let data = build_splits(seed, n, |_, s| {
        let mut rng = s.rng();
        let vx = smooth_noise(&mut rng, t, 3.0);
        let vy = smooth_noise(&mut rng, t, 3.0);
        let (mut px, mut py) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut pts = Vec::with_capacity(2 * t);
        for k in 0..t {
            px += 0.1 * (1.0 + vx[k]);
            py += 0.1 * vy[k];
            pts.push(px);
            pts.push(py);
        }
        let x = Tensor::new(pts[..2 * ctx].to_vec(), vec![ctx, 2])?;
        let y = Tensor::new(pts[2 * ctx..].to_vec(), vec![horizon, 2])?;
        Ok((x, y))
    })?;
    let predict = |ds: &Dataset, stream: RngStream| -> Vec<Tensor> {
        ds.y
            .par_iter()
            .enumerate()
            .map(|(i, y)| {
                let mut rng = stream.child(i as u64).rng();
                let ex = smooth_noise(&mut rng, horizon, 2.0);
                let ey = smooth_noise(&mut rng, horizon, 2.0);
                Tensor::from_fn(&[horizon, 2], |k| {
                    let e = if k % 2 == 0 { ex[k / 2] } else { ey[k / 2] };
                    y.data()[k] + noise * e
                })
            })
            .collect()
    };
    let train_predictions = predict(&data.train, root(seed).child(4));
    let cal_predictions = predict(&data.cal, root(seed).child(5));
    let test_predictions = predict(&data.test, root(seed).child(6));
    Ok(TrajectorySet { data, train_predictions, cal_predictions, test_predictions })
}

/// `y = x W + b` on flattened inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    /// Row-major `d_in x d_out`.
    pub weights: Vec<f64>,
    pub intercept: Vec<f64>,
    pub d_in: usize,
    pub out_shape: Vec<usize>,
}

impl LinearPredictor {
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.d_in {
            return Err(Error::ShapeMismatch { expected: vec![self.d_in], got: x.shape().to_vec() });
        }
        let d_out = self.intercept.len();
        let mut y = self.intercept.clone();
        for (i, xi) in x.data().iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * d_out..(i + 1) * d_out];
            y.iter_mut().zip(row).for_each(|(a, w)| *a += xi * w);
        }
        Tensor::new(y, self.out_shape.clone())
    }

    pub fn predict_all(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }
}

/// Cholesky solve that reports near-singular systems.
fn spd_solve(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = a.cholesky().ok_or(Error::Singular)?;
    let diag = ch.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-13 {
        return Err(Error::Singular);
    }
    Ok(ch.solve(&b))
}

/// Closed-form ridge regression with an unpenalized intercept. Uses the dual
/// system when there are more features than rows.
pub fn fit_ridge(train: &Dataset, lambda: f64) -> Result<LinearPredictor> {
    if train.is_empty() {
        return Err(Error::Empty("training rows"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let n = train.len();
    let d = train.x[0].len();
    let out_shape = train.y[0].shape().to_vec();
    let o = train.y[0].len();
    let xm = DMatrix::from_fn(n, d, |i, j| train.x[i].data()[j]);
    let ym = DMatrix::from_fn(n, o, |i, j| train.y[i].data()[j]);
    let x_mean = xm.row_mean();
    let y_mean = ym.row_mean();
    let mut xc = xm;
    for mut r in xc.row_iter_mut() {
        r -= &x_mean;
    }
    let mut yc = ym;
    for mut r in yc.row_iter_mut() {
        r -= &y_mean;
    }
    let w = if d <= n {
        let mut a = xc.tr_mul(&xc);
        for i in 0..d {
            a[(i, i)] += lambda;
        }
        spd_solve(a, xc.tr_mul(&yc))?
    } else {
        let mut k = &xc * xc.transpose();
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        xc.tr_mul(&spd_solve(k, yc)?)
    };
    let b = &y_mean - &x_mean * &w;
    let mut weights = Vec::with_capacity(d * o);
    for i in 0..d {
        for j in 0..o {
            weights.push(w[(i, j)]);
        }
    }
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(LinearPredictor { weights, intercept: b.iter().copied().collect(), d_in: d, out_shape })
}
