//! NCF1 binary tensor files.
//!
//! Layout: magic `NCF1`, version `u16`, dtype code `u16` (0 = f64), ndim `u32`,
//! `ndim` dims as `u32`, then the row-major payload as little-endian f64.
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use conflow::Tensor;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"NCF1";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u16 = 0;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("bad magic {0:?}, expected NCF1")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("dtype code {0} is not f64 (0)")]
    DtypeMismatch(u16),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing {0} bytes after the payload")]
    TrailingBytes(usize),
    #[error("invalid tensor: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TensorFileError {
    /// Stable numeric code, used as the process exit status.
    pub fn code(&self) -> i32 {
        match self {
            TensorFileError::BadMagic(_) => 10,
            TensorFileError::UnsupportedVersion(_) => 11,
            TensorFileError::DtypeMismatch(_) => 12,
            TensorFileError::Truncated { .. } => 13,
            TensorFileError::TrailingBytes(_) => 14,
            TensorFileError::Invalid(_) => 15,
            TensorFileError::Io(_) => 16,
        }
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.shape().len() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn need(bytes: &[u8], upto: usize) -> Result<(), TensorFileError> {
    if bytes.len() < upto {
        return Err(TensorFileError::Truncated { expected: upto, found: bytes.len() });
    }
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, TensorFileError> {
    need(bytes, 4)?;
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(TensorFileError::BadMagic(magic));
    }
    need(bytes, 12)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TensorFileError::UnsupportedVersion(version));
    }
    let dtype = u16::from_le_bytes([bytes[6], bytes[7]]);
    if dtype != DTYPE_F64 {
        return Err(TensorFileError::DtypeMismatch(dtype));
    }
    let ndim = u32_at(bytes, 8) as usize;
    let header = 12 + 4 * ndim;
    need(bytes, header)?;
    let shape: Vec<usize> = (0..ndim).map(|i| u32_at(bytes, 12 + 4 * i) as usize).collect();
    let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let total = count
        .and_then(|c| c.checked_mul(8))
        .and_then(|b| b.checked_add(header))
        .ok_or_else(|| TensorFileError::Invalid(format!("shape {shape:?} overflows")))?;
    need(bytes, total)?;
    if bytes.len() > total {
        return Err(TensorFileError::TrailingBytes(bytes.len() - total));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(data, shape).map_err(|e| TensorFileError::Invalid(e.to_string()))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), TensorFileError> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, TensorFileError> {
    decode(&fs::read(path)?)
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor, TensorFileError> {
    let first = items.first().ok_or_else(|| TensorFileError::Invalid("cannot stack zero tensors".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(TensorFileError::Invalid(format!(
                "cannot stack shapes {:?} and {:?}",
                first.shape(),
                t.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(data, shape).map_err(|e| TensorFileError::Invalid(e.to_string()))
}

/// Splits a tensor along its leading axis.
pub fn unstack(t: &Tensor) -> Result<Vec<Tensor>, TensorFileError> {
    let (&n, rest) = t
        .shape()
        .split_first()
        .ok_or_else(|| TensorFileError::Invalid("cannot unstack a rank-0 tensor".into()))?;
    let rest = if rest.is_empty() { vec![1] } else { rest.to_vec() };
    let len: usize = rest.iter().product();
    (0..n)
        .map(|i| {
            Tensor::new(t.data()[i * len..(i + 1) * len].to_vec(), rest.clone())
                .map_err(|e| TensorFileError::Invalid(e.to_string()))
        })
        .collect()
}

pub fn write_bank(path: &Path, items: &[Tensor]) -> Result<(), TensorFileError> {
    write_tensor(path, &stack(items)?)
}

pub fn read_bank(path: &Path) -> Result<Vec<Tensor>, TensorFileError> {
    unstack(&read_tensor(path)?)
}
