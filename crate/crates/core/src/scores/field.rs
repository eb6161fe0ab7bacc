//! Scores on `H x W x C` fields. Data are row-major with the channel innermost,
//! matching [`Tensor`] fields of rank 2 (single channel) or 3.

use num_complex::Complex64;

use crate::error::Result;
use crate::numerics::fft::{check_pow2, fft2_real, half_plane_len, half_plane_weight, ifft2_real};
use crate::numerics::tensor::{channel, field_dims, set_channel};
use crate::numerics::wavelet::{dwt2, idwt2, DetailBands, WaveletPyramid};
use crate::numerics::Tensor;

pub(crate) fn field_l2(yhat: &Tensor, y: &Tensor) -> (f64, Tensor) {
    let e = y.sub(yhat);
    let n = e.len() as f64;
    let s = e.rms();
    let g = if s > 0.0 { e.scale(1.0 / (n * s)) } else { Tensor::zeros(e.shape()) };
    (s, g)
}

/// Periodic forward differences along width (`dx`) and height (`dy`).
fn forward_diffs(e: &[f64], h: usize, w: usize, c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; e.len()];
    let mut dy = vec![0.0; e.len()];
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                let at = (i * w + j) * c + k;
                dx[at] = e[(i * w + (j + 1) % w) * c + k] - e[at];
                dy[at] = e[(((i + 1) % h) * w + j) * c + k] - e[at];
            }
        }
    }
    (dx, dy)
}

/// Adjoint of [`forward_diffs`], accumulated: `out += Dx^T u + Dy^T v`.
fn adjoint_diffs(u: &[f64], v: &[f64], h: usize, w: usize, c: usize, out: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                let at = (i * w + j) * c + k;
                let left = (i * w + (j + w - 1) % w) * c + k;
                let up = (((i + h - 1) % h) * w + j) * c + k;
                out[at] += u[left] - u[at] + v[up] - v[at];
            }
        }
    }
}

pub(crate) fn sobolev(yhat: &Tensor, y: &Tensor, lambda: f64) -> Result<(f64, Tensor)> {
    let (h, w, c) = field_dims(y)?;
    let e = y.sub(yhat);
    let n = e.len() as f64;
    let (dx, dy) = forward_diffs(e.data(), h, w, c);
    let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / n;
    let s = (sq(e.data()) + lambda * (sq(&dx) + sq(&dy))).sqrt();
    let mut g = Tensor::zeros(e.shape());
    if s > 0.0 {
        let gd = g.data_mut();
        adjoint_diffs(&dx, &dy, h, w, c, gd);
        for (gv, ev) in gd.iter_mut().zip(e.data()) {
            *gv = (ev + lambda * *gv) / (n * s);
        }
    }
    Ok((s, g))
}

fn spectral_dims(y: &Tensor) -> Result<(usize, usize, usize)> {
    let (h, w, c) = field_dims(y)?;
    check_pow2(h, "field height")?;
    check_pow2(w, "field width")?;
    Ok((h, w, c))
}

/// `2 H W Re(ifft2(coef * spec))`, the gradient of `sum_w coef(w) |spec(w)|^2`
/// with respect to the real signal behind `spec` (for symmetric `coef`).
fn power_pullback(coef: &[f64], spec: &[Complex64], h: usize, w: usize) -> Vec<f64> {
    let weighted: Vec<Complex64> = coef.iter().zip(spec).map(|(c, z)| z * *c).collect();
    let scale = 2.0 * (h * w) as f64;
    ifft2_real(&weighted, h, w).into_iter().map(|v| v * scale).collect()
}

/// Half-plane weight of each bin of a full `h x w` spectrum.
fn fold_weights(h: usize, w: usize) -> Vec<f64> {
    (0..h * w).map(|i| half_plane_weight(i % w, w)).collect()
}

pub(crate) fn psd(yhat: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
    let (h, w, c) = spectral_dims(y)?;
    let mut specs = Vec::with_capacity(c);
    let mut p_y = vec![0.0; h * w];
    let mut p_hat = vec![0.0; h * w];
    for ch in 0..c {
        let sy = fft2_real(&channel(y, ch), h, w)?;
        let sh = fft2_real(&channel(yhat, ch), h, w)?;
        for i in 0..h * w {
            p_y[i] += sy[i].norm_sqr();
            p_hat[i] += sh[i].norm_sqr();
        }
        specs.push(sy);
    }
    let fold = fold_weights(h, w);
    let mut s = 0.0;
    let mut coef = vec![0.0; h * w];
    for i in 0..h * w {
        let d = p_y[i] - p_hat[i];
        s += fold[i] * d.abs();
        coef[i] = if d > 0.0 {
            fold[i]
        } else if d < 0.0 {
            -fold[i]
        } else {
            0.0
        };
    }
    let mut g = Tensor::zeros(y.shape());
    for (ch, spec) in specs.iter().enumerate() {
        set_channel(&mut g, ch, &power_pullback(&coef, spec, h, w));
    }
    Ok((s, g))
}

fn band_rms(b: &Tensor) -> f64 {
    b.rms()
}

pub(crate) fn wavelet(yhat: &Tensor, y: &Tensor, depth: usize) -> Result<(f64, Tensor)> {
    let (h, w, c) = field_dims(y)?;
    let e = y.sub(yhat);
    let mut s = 0.0;
    let mut g = Tensor::zeros(y.shape());
    for ch in 0..c {
        let ec = Tensor::new(channel(&e, ch), vec![h, w])?;
        let pyr = dwt2(&ec, depth)?;
        let mut grads = Vec::with_capacity(depth);
        for level in &pyr.details {
            let pull = |b: &Tensor| {
                let r = band_rms(b);
                if r > 0.0 {
                    b.scale(1.0 / (3.0 * b.len() as f64 * r))
                } else {
                    Tensor::zeros(b.shape())
                }
            };
            s += (band_rms(&level.horizontal) + band_rms(&level.vertical) + band_rms(&level.diagonal))
                / 3.0;
            grads.push(DetailBands {
                horizontal: pull(&level.horizontal),
                vertical: pull(&level.vertical),
                diagonal: pull(&level.diagonal),
            });
        }
        let back = idwt2(&WaveletPyramid {
            approx: Tensor::zeros(pyr.approx.shape()),
            details: grads,
        });
        set_channel(&mut g, ch, back.data());
    }
    Ok((s, g))
}

/// Raw terms `(t_l2, t_spec)` of the localized combined score and their gradients.
pub(crate) fn local_terms(
    yhat: &Tensor,
    y: &Tensor,
    eps: f64,
    eps_spec: f64,
    want_grad: bool,
) -> Result<([f64; 2], Option<[Tensor; 2]>)> {
    let (h, w, c) = spectral_dims(y)?;
    let e = y.sub(yhat);
    let n = e.len() as f64;
    let t_l2 = (e.norm_sq() / n + eps).sqrt();

    let fold = fold_weights(h, w);
    let m = half_plane_len(h, w) as f64;
    let log_spec = |vals: Vec<f64>| -> Result<(Vec<Complex64>, Vec<f64>)> {
        let mu = vals.iter().sum::<f64>() / vals.len() as f64;
        let centred: Vec<f64> = vals.iter().map(|v| v - mu).collect();
        let z = fft2_real(&centred, h, w)?;
        let s = z.iter().map(|zz| (1.0 + zz.norm_sqr() + eps_spec).ln()).collect();
        Ok((z, s))
    };
    let mut d_spec = 0.0;
    let mut per_channel = Vec::with_capacity(c);
    for ch in 0..c {
        let (zy, sy) = log_spec(channel(y, ch))?;
        let (_, sh) = log_spec(channel(yhat, ch))?;
        let diff: Vec<f64> = sy.iter().zip(&sh).map(|(a, b)| a - b).collect();
        d_spec += diff.iter().zip(&fold).map(|(d, f)| f * d * d).sum::<f64>() / (m * c as f64);
        per_channel.push((zy, diff));
    }
    let t_spec = (d_spec + eps).sqrt();
    if !want_grad {
        return Ok(([t_l2, t_spec], None));
    }

    let g_l2 = e.scale(1.0 / (n * t_l2));
    let mut g_spec = Tensor::zeros(y.shape());
    for (ch, (zy, diff)) in per_channel.iter().enumerate() {
        let coef: Vec<f64> = (0..h * w)
            .map(|i| {
                let p = zy[i].norm_sqr();
                fold[i] * 2.0 * diff[i] / ((1.0 + p + eps_spec) * m * c as f64)
            })
            .collect();
        let mut gc = power_pullback(&coef, zy, h, w);
        let mu = gc.iter().sum::<f64>() / gc.len() as f64;
        gc.iter_mut().for_each(|v| *v = (*v - mu) / (2.0 * t_spec));
        set_channel(&mut g_spec, ch, &gc);
    }
    Ok(([t_l2, t_spec], Some([g_l2, g_spec])))
}
