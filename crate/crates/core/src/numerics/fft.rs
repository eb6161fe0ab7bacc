//! Radix-2 Cooley-Tukey FFT on complex buffers, plus 2-D helpers over row-major grids.

use num_complex::Complex64;

use super::tensor::field_dims;
use super::Tensor;
use crate::error::{Error, Result};

pub fn check_pow2(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Dimension(format!("{what} = {n} is not a power of two")));
    }
    Ok(())
}

/// In-place unnormalized DFT (`inverse = false`) or its conjugate (`inverse = true`).
/// The inverse direction is *not* scaled by `1/n`.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "radix-2 FFT needs a power-of-two length");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        // Twiddles evaluated directly for accuracy rather than by recurrence.
        let tw: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, ang * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * tw[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// 2-D transform of an `h x w` row-major grid, rows then columns.
pub fn fft2_in_place(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), h * w);
    for row in buf.chunks_mut(w) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        fft_in_place(&mut col, inverse);
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }
}

/// Forward 2-D DFT of a real grid.
pub fn fft2_real(values: &[f64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    check_pow2(h, "height")?;
    check_pow2(w, "width")?;
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, h, w, false);
    Ok(buf)
}

/// Real part of the normalized inverse 2-D DFT.
pub fn ifft2_real(spectrum: &[Complex64], h: usize, w: usize) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    fft2_in_place(&mut buf, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Squared modulus of the 2-D DFT of an `H x W` field (rank-3 fields sum channel powers).
pub fn fft2_power(field: &Tensor) -> Result<Tensor> {
    let (h, w, c) = field_dims(field)?;
    check_pow2(h, "height")?;
    check_pow2(w, "width")?;
    let mut power = vec![0.0; h * w];
    for ch in 0..c {
        let spec = fft2_real(&super::tensor::channel(field, ch), h, w)?;
        for (p, z) in power.iter_mut().zip(&spec) {
            *p += z.norm_sqr();
        }
    }
    Tensor::new(power, vec![h, w])
}

/// Multiplicity of frequency `(ky, kx)` when a full spectrum is folded onto the
/// half-plane kept by a real 2-D FFT (columns `0..=w/2`). Self-conjugate columns
/// count once; the rest are split evenly between `k` and `-k`.
pub fn half_plane_weight(kx: usize, w: usize) -> f64 {
    if kx == 0 || (w.is_multiple_of(2) && kx == w / 2) {
        1.0
    } else {
        0.5
    }
}

/// Number of bins in the half-plane spectrum of an `h x w` grid.
pub fn half_plane_len(h: usize, w: usize) -> usize {
    h * (w / 2 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::numerics::RngStream;

    fn brute_dft2(values: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                        acc += Complex64::from_polar(values[y * w + x], ang);
                    }
                }
                out[ky * w + kx] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_dft() {
        let mut rng = RngStream::new(1, 0).rng();
        let vals: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = fft2_real(&vals, 4, 8).unwrap();
        let slow = brute_dft2(&vals, 4, 8);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let mut rng = RngStream::new(2, 0).rng();
        let vals: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = ifft2_real(&fft2_real(&vals, 8, 8).unwrap(), 8, 8);
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn power_examples() {
        let z = fft2_power(&Tensor::zeros(&[4, 8])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let c = 1.5;
        let p = fft2_power(&Tensor::filled(&[4, 8], c)).unwrap();
        let dc = 16.0 * 64.0 * c * c;
        assert!((p.data()[0] - dc).abs() < 1e-9 * dc);
        assert!(p.data()[1..].iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn parseval_on_random_fields() {
        for seed in 0..100 {
            let mut rng = RngStream::new(3, seed).rng();
            let f = Tensor::from_fn(&[8, 8], |_| rng.random_range(-2.0..2.0));
            let p = fft2_power(&f).unwrap();
            let lhs = p.data().iter().sum::<f64>() / 64.0;
            let rhs = f.norm_sq();
            assert!((lhs - rhs).abs() <= 1e-9 * rhs);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(fft2_power(&Tensor::zeros(&[6, 8])).is_err());
        assert!(fft2_power(&Tensor::zeros(&[8, 3])).is_err());
    }
}
