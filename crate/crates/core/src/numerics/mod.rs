//! Shared numerical substrate: tensors, addressable RNG streams, radix-2 FFT,
//! db2 wavelets, resampling and robust/weighted order statistics.

pub mod fft;
pub mod quantile;
pub mod resize;
pub mod rng;
pub mod tensor;
pub mod wavelet;

pub use fft::fft2_power;
pub use quantile::{empirical_quantile, mad, median, order_statistic, weighted_quantile};
pub use resize::{resize, ResizeMode};
pub use rng::RngStream;
pub use tensor::Tensor;
pub use wavelet::{dwt2, idwt2, DetailBands, WaveletPyramid};
