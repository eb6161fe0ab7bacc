//! Separable 2-D Daubechies-2 (four-tap) wavelet transform with periodic boundaries.
//!
//! The periodized filter bank is orthogonal, so synthesis is the exact adjoint of
//! analysis. Score gradients use that to pull detail-coefficient derivatives back
//! to pixel space.

use super::Tensor;
use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Daubechies-2 scaling filter.
pub fn db2_lowpass() -> [f64; 4] {
    let d = 4.0 * std::f64::consts::SQRT_2;
    [(1.0 + SQRT3) / d, (3.0 + SQRT3) / d, (3.0 - SQRT3) / d, (1.0 - SQRT3) / d]
}

/// Quadrature mirror `g[k] = (-1)^k h[3-k]`.
pub fn db2_highpass() -> [f64; 4] {
    let h = db2_lowpass();
    [h[3], -h[2], h[1], -h[0]]
}

/// Detail sub-bands of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    /// Low-pass along width, high-pass along height.
    pub horizontal: Tensor,
    /// High-pass along width, low-pass along height.
    pub vertical: Tensor,
    pub diagonal: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub approx: Tensor,
    /// `details[0]` is the finest scale.
    pub details: Vec<DetailBands>,
}

fn analyze_1d(x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let n = x.len();
    let h = db2_lowpass();
    let g = db2_highpass();
    for i in 0..n / 2 {
        let mut a = 0.0;
        let mut d = 0.0;
        for k in 0..4 {
            let v = x[(2 * i + k) % n];
            a += h[k] * v;
            d += g[k] * v;
        }
        lo[i] = a;
        hi[i] = d;
    }
}

fn synthesize_1d(lo: &[f64], hi: &[f64], x: &mut [f64]) {
    let n = x.len();
    let h = db2_lowpass();
    let g = db2_highpass();
    x.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n / 2 {
        for k in 0..4 {
            x[(2 * i + k) % n] += h[k] * lo[i] + g[k] * hi[i];
        }
    }
}

/// One level on an `h x w` grid: returns (LL, LH, HL, HH) each `h/2 x w/2`.
fn analyze_level(x: &[f64], h: usize, w: usize) -> [Vec<f64>; 4] {
    let (h2, w2) = (h / 2, w / 2);
    let mut low_w = vec![0.0; h * w2];
    let mut high_w = vec![0.0; h * w2];
    for r in 0..h {
        analyze_1d(
            &x[r * w..(r + 1) * w],
            &mut low_w[r * w2..(r + 1) * w2],
            &mut high_w[r * w2..(r + 1) * w2],
        );
    }
    let split_cols = |src: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![0.0; h2 * w2];
        let mut hi = vec![0.0; h2 * w2];
        let mut col = vec![0.0; h];
        let mut cl = vec![0.0; h2];
        let mut ch = vec![0.0; h2];
        for c in 0..w2 {
            for r in 0..h {
                col[r] = src[r * w2 + c];
            }
            analyze_1d(&col, &mut cl, &mut ch);
            for r in 0..h2 {
                lo[r * w2 + c] = cl[r];
                hi[r * w2 + c] = ch[r];
            }
        }
        (lo, hi)
    };
    let (ll, lh) = split_cols(&low_w);
    let (hl, hh) = split_cols(&high_w);
    [ll, lh, hl, hh]
}

fn synthesize_level(bands: [&[f64]; 4], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let merge_cols = |lo: &[f64], hi: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; h * w2];
        let mut cl = vec![0.0; h2];
        let mut ch = vec![0.0; h2];
        let mut col = vec![0.0; h];
        for c in 0..w2 {
            for r in 0..h2 {
                cl[r] = lo[r * w2 + c];
                ch[r] = hi[r * w2 + c];
            }
            synthesize_1d(&cl, &ch, &mut col);
            for r in 0..h {
                out[r * w2 + c] = col[r];
            }
        }
        out
    };
    let low_w = merge_cols(bands[0], bands[1]);
    let high_w = merge_cols(bands[2], bands[3]);
    let mut x = vec![0.0; h * w];
    for r in 0..h {
        synthesize_1d(
            &low_w[r * w2..(r + 1) * w2],
            &high_w[r * w2..(r + 1) * w2],
            &mut x[r * w..(r + 1) * w],
        );
    }
    x
}

/// Multi-level analysis of a single-channel `H x W` field.
pub fn dwt2(field: &Tensor, depth: usize) -> Result<WaveletPyramid> {
    let (h, w) = match *field.shape() {
        [h, w] => (h, w),
        [h, w, 1] => (h, w),
        _ => {
            return Err(Error::Dimension(format!(
                "dwt2 expects a single-channel field, got {:?}",
                field.shape()
            )))
        }
    };
    if depth == 0 {
        return Err(Error::InvalidArgument("wavelet depth must be >= 1".into()));
    }
    let div = 1usize << depth;
    if h % div != 0 || w % div != 0 {
        return Err(Error::Dimension(format!(
            "{h}x{w} not divisible by 2^{depth}"
        )));
    }
    let mut cur = field.data().to_vec();
    let (mut ch, mut cw) = (h, w);
    let mut details = Vec::with_capacity(depth);
    for _ in 0..depth {
        let [ll, lh, hl, hh] = analyze_level(&cur, ch, cw);
        let shape = vec![ch / 2, cw / 2];
        details.push(DetailBands {
            horizontal: Tensor::new(lh, shape.clone())?,
            vertical: Tensor::new(hl, shape.clone())?,
            diagonal: Tensor::new(hh, shape)?,
        });
        cur = ll;
        ch /= 2;
        cw /= 2;
    }
    Ok(WaveletPyramid {
        approx: Tensor::new(cur, vec![ch, cw])?,
        details,
    })
}

/// Inverse of [`dwt2`]; also the adjoint of the analysis operator.
pub fn idwt2(pyramid: &WaveletPyramid) -> Tensor {
    let mut cur = pyramid.approx.data().to_vec();
    let mut shape = pyramid.approx.shape().to_vec();
    for level in pyramid.details.iter().rev() {
        let (h, w) = (shape[0] * 2, shape[1] * 2);
        cur = synthesize_level(
            [
                &cur,
                level.horizontal.data(),
                level.vertical.data(),
                level.diagonal.data(),
            ],
            h,
            w,
        );
        shape = vec![h, w];
    }
    Tensor::new(cur, shape).expect("consistent pyramid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::numerics::RngStream;

    #[test]
    fn filter_is_orthonormal() {
        let h = db2_lowpass();
        let g = db2_highpass();
        let hh: f64 = h.iter().map(|v| v * v).sum();
        let hg: f64 = h.iter().zip(&g).map(|(a, b)| a * b).sum();
        let shift2 = h[0] * h[2] + h[1] * h[3];
        assert!((hh - 1.0).abs() < 1e-15);
        assert!(hg.abs() < 1e-15);
        assert!(shift2.abs() < 1e-15);
        assert!((h.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zero_field_gives_zero_coefficients() {
        let p = dwt2(&Tensor::zeros(&[16, 16]), 3).unwrap();
        assert!(p.approx.data().iter().all(|&v| v == 0.0));
        for l in &p.details {
            assert!(l.horizontal.data().iter().chain(l.vertical.data()).chain(l.diagonal.data()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn roundtrip_random_fields() {
        for seed in 0..10 {
            let mut rng = RngStream::new(5, seed).rng();
            let f = Tensor::from_fn(&[16, 16], |_| rng.random_range(-1.0..1.0));
            let back = idwt2(&dwt2(&f, 3).unwrap());
            let err = back.sub(&f).norm() / f.norm();
            assert!(err < 1e-9, "roundtrip error {err}");
        }
    }

    #[test]
    fn constant_field_has_no_detail() {
        let p = dwt2(&Tensor::filled(&[16, 8], 2.5), 3).unwrap();
        for l in &p.details {
            for b in [&l.horizontal, &l.vertical, &l.diagonal] {
                assert!(b.data().iter().all(|v| v.abs() < 1e-9));
            }
        }
    }

    #[test]
    fn rejects_indivisible_dims() {
        assert!(dwt2(&Tensor::zeros(&[12, 16]), 3).is_err());
        assert!(dwt2(&Tensor::zeros(&[16, 16]), 0).is_err());
    }
}
