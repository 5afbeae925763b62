//! Forward and backward passes for the three training regimes of a linear
//! layer: dense fine-tuning, a low-rank adapter, and partial-connection
//! training. Each train-mode forward returns an [`ActivationCache`] holding
//! exactly what its backward pass reads, so cache sizes can be compared
//! across regimes byte for byte:
//!
//! | regime  | cached                      | bytes            |
//! |---------|-----------------------------|------------------|
//! | dense   | `X_in`                      | `d_in·n·s`       |
//! | LoRA    | `X_in`, `X_mid = A X_in`    | `(d_in + r)·n·s` |
//! | partial | rows of `X_in` at the index | `r·n·s`          |

mod cache;
mod linear;
mod lora;
mod paca;

pub use cache::{activation_bytes, ActivationCache, CacheTag};
pub use linear::{linear_backward, linear_forward, LinearParams};
pub use lora::{lora_backward, lora_forward, lora_merge, LoRAParams, LoraGrads};
pub use paca::{paca_backward, paca_forward, PaCAParams};
