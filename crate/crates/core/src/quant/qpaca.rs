use sha2::{Digest, Sha256};

use super::nf4::{dequantize_block, quantize_block};
use crate::error::{Error, Result};
use crate::tensor::{gather_cols, DType, IndexSet, Matrix, Real};

pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// NF4 payload for the unselected columns of a weight.
///
/// Each quantized column is split into blocks of `block_size` entries down the
/// column (the last block may be short), with one `f32` absmax per block.
/// Codes are packed two per byte, low nibble first, and every column starts
/// on a fresh byte, so a column occupies `ceil(d_out / 2)` bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedColumns {
    pub(crate) d_out: usize,
    pub(crate) block_size: usize,
    pub(crate) column_map: Vec<usize>,
    pub(crate) scales: Vec<f32>,
    pub(crate) codes: Vec<u8>,
}

impl QuantizedColumns {
    pub fn column_map(&self) -> &[usize] {
        &self.column_map
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn blocks_per_column(&self) -> usize {
        self.d_out.div_ceil(self.block_size)
    }

    pub fn bytes_per_column(&self) -> usize {
        self.d_out.div_ceil(2)
    }

    /// Unpacked codes of the `k`-th quantized column.
    pub fn column_codes(&self, k: usize) -> Vec<u8> {
        let per = self.bytes_per_column();
        let bytes = &self.codes[k * per..(k + 1) * per];
        (0..self.d_out)
            .map(|i| {
                let b = bytes[i / 2];
                if i % 2 == 0 {
                    b & 0x0F
                } else {
                    b >> 4
                }
            })
            .collect()
    }

    /// Scale of block `b` in the `k`-th quantized column.
    pub fn scale(&self, k: usize, b: usize) -> f32 {
        self.scales[k * self.blocks_per_column() + b]
    }

    /// Bytes of codes plus scales.
    pub fn payload_bytes(&self) -> usize {
        self.codes.len() + self.scales.len() * 4
    }

    /// SHA-256 (hex) over the little-endian scales followed by the packed codes.
    pub fn payload_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.scales {
            hasher.update(s.to_le_bytes());
        }
        hasher.update(&self.codes);
        hex_digest(&hasher.finalize())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Frozen NF4 columns plus full-precision trainable columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QPaCAWeights<T: Real = f64> {
    pub quantized: QuantizedColumns,
    pub selected: Matrix<T>,
    pub idx: IndexSet,
}

impl<T: Real> QPaCAWeights<T> {
    pub fn d_out(&self) -> usize {
        self.selected.rows()
    }

    pub fn d_in(&self) -> usize {
        self.idx.domain()
    }

    /// Replaces the trainable columns; the quantized payload is untouched.
    pub fn set_selected(&mut self, selected: Matrix<T>) -> Result<()> {
        self.selected.check_same(&selected, "QPaCAWeights::set_selected")?;
        self.selected = selected;
        Ok(())
    }

    /// Resident weight bytes: selected columns, codes and scales.
    pub fn weight_bytes(&self) -> usize {
        self.selected.bytes() + self.quantized.payload_bytes()
    }
}

/// Closed-form [`QPaCAWeights::weight_bytes`]:
/// `d_out·r·s + (d_in − r)·(⌈d_out/2⌉ + 4·⌈d_out/block⌉)`.
pub fn qpaca_weight_bytes(d_out: usize, d_in: usize, r: usize, block_size: usize, dtype: DType) -> usize {
    let frozen = d_in - r;
    d_out * r * dtype.size() + frozen * (d_out.div_ceil(2) + 4 * d_out.div_ceil(block_size))
}

/// Copies the columns at `idx` verbatim and NF4-quantizes every other column.
pub fn qpaca_pack<T: Real>(w: &Matrix<T>, idx: &IndexSet, block_size: usize) -> Result<QPaCAWeights<T>> {
    if block_size == 0 {
        return Err(Error::Argument("block size must be at least 1".into()));
    }
    if idx.domain() != w.cols() {
        return Err(Error::Argument(format!(
            "index set domain {} does not match d_in {}",
            idx.domain(),
            w.cols()
        )));
    }
    let d_out = w.rows();
    let column_map = idx.complement();
    let per = d_out.div_ceil(2);
    let mut codes = vec![0u8; per * column_map.len()];
    let mut scales = Vec::with_capacity(column_map.len() * d_out.div_ceil(block_size));
    for (k, &j) in column_map.iter().enumerate() {
        let column = w.col(j);
        let mut col_codes = Vec::with_capacity(d_out);
        for block in column.chunks(block_size) {
            let (c, s) = quantize_block(block);
            col_codes.extend(c);
            scales.push(s);
        }
        let packed = &mut codes[k * per..(k + 1) * per];
        for (i, c) in col_codes.into_iter().enumerate() {
            packed[i / 2] |= if i % 2 == 0 { c } else { c << 4 };
        }
    }
    Ok(QPaCAWeights {
        quantized: QuantizedColumns {
            d_out,
            block_size,
            column_map,
            scales,
            codes,
        },
        selected: gather_cols(w, idx)?,
        idx: idx.clone(),
    })
}

/// Full `d_out × d_in` weight: dequantized frozen columns, selected columns verbatim.
pub fn qpaca_materialize<T: Real>(qw: &QPaCAWeights<T>) -> Result<Matrix<T>> {
    let q = &qw.quantized;
    let (d_out, d_in) = (qw.d_out(), qw.d_in());
    let mut data = vec![T::zero(); d_out * d_in];
    for (k, &j) in q.column_map.iter().enumerate() {
        let codes = q.column_codes(k);
        for (b, chunk) in codes.chunks(q.block_size).enumerate() {
            let vals: Vec<T> = dequantize_block(chunk, q.scale(k, b))?;
            for (off, v) in vals.into_iter().enumerate() {
                data[(b * q.block_size + off) * d_in + j] = v;
            }
        }
    }
    for (jj, &j) in qw.idx.indices().iter().enumerate() {
        for i in 0..d_out {
            data[i * d_in + j] = qw.selected.get(i, jj);
        }
    }
    let out = Matrix::from_raw(d_out, d_in, data);
    out.ensure_finite("qpaca_materialize")?;
    Ok(out)
}
