use serde::{Deserialize, Serialize};

use super::tensor::field_dims;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

/// Resamples an `H x W (x C)` field to `out_h x out_w`.
///
/// Nearest maps output `(i, j)` to input `(floor(i*H/out_h), floor(j*W/out_w))`.
/// Bilinear uses corner-aligned sample positions `i*(H-1)/(out_h-1)`.
pub fn resize(field: &Tensor, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize output dims must be positive".into()));
    }
    let (h, w, c) = field_dims(field)?;
    let src = field.data();
    let at = |i: usize, j: usize, ch: usize| src[(i * w + j) * c + ch];
    let mut out = Vec::with_capacity(out_h * out_w * c);
    let corner = |k: usize, n_in: usize, n_out: usize| -> f64 {
        if n_out == 1 {
            0.0
        } else {
            k as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    for i in 0..out_h {
        for j in 0..out_w {
            for ch in 0..c {
                let v = match mode {
                    ResizeMode::Nearest => at(i * h / out_h, j * w / out_w, ch),
                    ResizeMode::Bilinear => {
                        let y = corner(i, h, out_h);
                        let x = corner(j, w, out_w);
                        let y0 = (y.floor() as usize).min(h - 1);
                        let x0 = (x.floor() as usize).min(w - 1);
                        let y1 = (y0 + 1).min(h - 1);
                        let x1 = (x0 + 1).min(w - 1);
                        let fy = y - y0 as f64;
                        let fx = x - x0 as f64;
                        let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
                        let bot = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                        top * (1.0 - fy) + bot * fy
                    }
                };
                out.push(v);
            }
        }
    }
    let shape = if field.shape().len() == 2 {
        vec![out_h, out_w]
    } else {
        vec![out_h, out_w, c]
    };
    Tensor::new(out, shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize() {
        let f = Tensor::from_fn(&[5, 7], |i| (i as f64).sin());
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
            assert_eq!(resize(&f, 5, 7, mode).unwrap(), f);
        }
    }

    #[test]
    fn constant_preserved() {
        let f = Tensor::filled(&[6, 4, 2], 3.25);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
            for (h, w) in [(1, 1), (3, 9), (12, 8)] {
                let r = resize(&f, h, w, mode).unwrap();
                assert_eq!(r.shape(), &[h, w, 2]);
                assert!(r.data().iter().all(|&v| (v - 3.25).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn nearest_picks_top_left_of_blocks() {
        let f = Tensor::from_fn(&[4, 4], |i| i as f64);
        let r = resize(&f, 2, 2, ResizeMode::Nearest).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn bilinear_ramp_is_exact() {
        let f = Tensor::from_fn(&[3, 3], |i| (i % 3) as f64);
        let r = resize(&f, 3, 5, ResizeMode::Bilinear).unwrap();
        assert_eq!(&r.data()[..5], &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn zero_output_dim_rejected() {
        assert!(resize(&Tensor::zeros(&[2, 2]), 0, 2, ResizeMode::Nearest).is_err());
    }
}
