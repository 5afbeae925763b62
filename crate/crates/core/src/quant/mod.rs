//! 4-bit NormalFloat storage for the frozen columns of a partially trained
//! weight. Trainable columns stay in full precision; the compute path
//! dequantizes to a dense matrix before each matmul.

mod format;
mod nf4;
mod qpaca;

pub use format::{read_qpaca, write_qpaca, CODEBOOK_NF4, MAGIC, VERSION};
pub use nf4::{dequantize_block, nf4_codebook, quantize_block, NF4Codebook, NF4_ZERO_CODE};
pub use qpaca::{
    qpaca_materialize, qpaca_pack, qpaca_weight_bytes, QPaCAWeights, QuantizedColumns,
    DEFAULT_BLOCK_SIZE,
};
pub(crate) use qpaca::hex_digest;
