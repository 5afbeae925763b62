pub mod error;
pub mod harness;
pub mod layers;
pub mod optim;
pub mod quant;
pub mod selection;
pub mod tensor;

pub use error::{Error, Result};
