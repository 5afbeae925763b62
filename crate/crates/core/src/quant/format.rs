//! Little-endian file layout for packed QPaCA weights.
//!
//! ```text
//! offset  size            field
//! 0       8               magic "QPACANF4"
//! 8       4   u32         format version (1)
//! 12      4   u32         codebook id (1 = NF4)
//! 16      4   u32         element size of the selected columns (4 or 8)
//! 20      4   u32         reserved, 0
//! 24      8   u64         d_out
//! 32      8   u64         d_in
//! 40      8   u64         r
//! 48      8   u64         block_size
//! 56      8·r u64         selected column indices, ascending
//! ..      4·S f32         scales, column-major over quantized columns,
//!                         S = (d_in − r)·⌈d_out / block_size⌉
//! ..      C   u8          packed codes, (d_in − r)·⌈d_out / 2⌉ bytes,
//!                         low nibble = earlier element
//! ..      s·d_out·r       selected columns as a row-major d_out × r matrix
//! ```

use super::qpaca::{QPaCAWeights, QuantizedColumns};
use crate::error::{Error, Result};
use crate::tensor::{IndexSet, Matrix, Real};

pub const MAGIC: &[u8; 8] = b"QPACANF4";
pub const VERSION: u32 = 1;
pub const CODEBOOK_NF4: u32 = 1;
const HEADER_LEN: usize = 56;

pub fn write_qpaca<T: Real>(qw: &QPaCAWeights<T>) -> Vec<u8> {
    let q = &qw.quantized;
    let mut out = Vec::with_capacity(HEADER_LEN + qw.weight_bytes() + 8 * qw.idx.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&CODEBOOK_NF4.to_le_bytes());
    out.extend_from_slice(&(T::DTYPE.size() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in [qw.d_out(), qw.d_in(), qw.idx.len(), q.block_size] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &i in qw.idx.indices() {
        out.extend_from_slice(&(i as u64).to_le_bytes());
    }
    for s in &q.scales {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&q.codes);
    out.extend_from_slice(&qw.selected.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode(format!("truncated input while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Decode(format!("{what} does not fit in usize")))
    }
}

fn checked_len(parts: &[usize], what: &str) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Error::Decode(format!("{what} size overflows")))
}

pub fn read_qpaca<T: Real>(bytes: &[u8]) -> Result<QPaCAWeights<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Decode("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let codebook = r.u32("codebook id")?;
    if codebook != CODEBOOK_NF4 {
        return Err(Error::Decode(format!("unknown codebook id {codebook}")));
    }
    let elem = r.u32("element size")? as usize;
    if elem != T::DTYPE.size() {
        return Err(Error::Decode(format!(
            "file stores {elem}-byte elements, reader expects {}",
            T::DTYPE.size()
        )));
    }
    r.u32("reserved")?;
    let d_out = r.u64("d_out")?;
    let d_in = r.u64("d_in")?;
    let rank = r.u64("r")?;
    let block_size = r.u64("block_size")?;
    if block_size == 0 || rank == 0 || rank > d_in {
        return Err(Error::Decode("inconsistent header".into()));
    }
    let idx_bytes = r.take(checked_len(&[rank, 8], "index list")?, "index list")?;
    let indices = idx_bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let idx = IndexSet::new(indices, d_in).map_err(|e| Error::Decode(format!("index list: {e}")))?;

    let frozen = d_in - rank;
    let n_scales = checked_len(&[frozen, d_out.div_ceil(block_size)], "scales")?;
    let scales = r
        .take(checked_len(&[n_scales, 4], "scales")?, "scales")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<_>>();
    if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Decode("scales must be finite and non-negative".into()));
    }
    let codes = r
        .take(checked_len(&[frozen, d_out.div_ceil(2)], "codes")?, "codes")?
        .to_vec();
    let sel_bytes = r.take(checked_len(&[d_out, rank, elem], "selected columns")?, "selected columns")?;
    let selected_vals = sel_bytes.chunks_exact(elem).map(T::read_le).collect();
    let selected = Matrix::from_vec(d_out, rank, selected_vals)
        .map_err(|e| Error::Decode(format!("selected columns: {e}")))?;
    if r.pos != bytes.len() {
        return Err(Error::Decode(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(QPaCAWeights {
        quantized: QuantizedColumns {
            d_out,
            block_size,
            column_map: idx.complement(),
            scales,
            codes,
        },
        selected,
        idx,
    })
}
