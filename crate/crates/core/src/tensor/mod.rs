//! Dense row-major matrices and the handful of kernels the training regimes
//! are built from: matmul (plain and transposed variants), transpose, and
//! row/column gather and scatter against an [`IndexSet`].
//!
//! Every matmul variant accumulates `c[i][j]` over the shared dimension in
//! ascending order starting from zero, so `matmul(transpose(a), b)` and
//! `matmul_tn(a, b)` agree bit for bit. Several of the layer-level
//! equivalences are stated bitwise and rely on this.

mod counter;
mod index;
mod matrix;
mod ops;

pub use counter::{count_macs, macs_so_far};
pub use index::IndexSet;
pub use matrix::Matrix;
pub use ops::{
    gather_cols, gather_rows, matmul, matmul_nt, matmul_tn, scatter_cols_add, transpose,
};

use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Element precision of a [`Matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub const fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

/// Real scalar usable as a matrix element.
pub trait Real:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from the first `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(buf)
    }
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(buf)
    }
}
