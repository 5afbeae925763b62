//! Analytical FLOP and memory models for one linear layer `W: d_out × d_in`
//! applied to a batch of `n` columns.
//!
//! FLOPs count matmuls only, at 2 FLOPs per multiply-accumulate. Elementwise
//! work (adding the adapter branch, scaling, activations, optimizer math) is
//! excluded, which is what the instrumented MAC counter measures too.

use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::quant::qpaca_weight_bytes;
use crate::tensor::DType;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    pub forward: u64,
    /// Gradient with respect to the layer input, including any adapter path.
    pub backward_input: u64,
    /// Gradient with respect to the trainable parameters.
    pub backward_weight: u64,
}

impl FlopCount {
    pub fn backward(&self) -> u64 {
        self.backward_input + self.backward_weight
    }

    pub fn total(&self) -> u64 {
        self.forward + self.backward()
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self {
            forward: self.forward * k,
            backward_input: self.backward_input * k,
            backward_weight: self.backward_weight * k,
        }
    }
}

impl std::ops::Add for FlopCount {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            forward: self.forward + o.forward,
            backward_input: self.backward_input + o.backward_input,
            backward_weight: self.backward_weight + o.backward_weight,
        }
    }
}

impl std::iter::Sum for FlopCount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn check_rank(method: Method, d_in: usize, r: usize) -> Result<()> {
    match method {
        Method::Full => Ok(()),
        Method::Lora if r >= 1 => Ok(()),
        Method::Paca | Method::Qpaca if (1..=d_in).contains(&r) => Ok(()),
        _ => Err(Error::Argument(format!(
            "rank {r} is not valid for {method} with d_in {d_in}"
        ))),
    }
}

/// FLOPs of one training step of a single linear layer.
///
/// | method     | forward                  | backward_input           | backward_weight |
/// |------------|--------------------------|--------------------------|-----------------|
/// | full       | 2·o·i·n                  | 2·o·i·n                  | 2·o·i·n         |
/// | lora       | 2·o·i·n + 2·r·(i+o)·n    | 2·o·i·n + 2·r·(i+o)·n    | 2·r·(i+o)·n     |
/// | paca/qpaca | 2·o·i·n                  | 2·o·i·n                  | 2·o·r·n         |
///
/// The LoRA input gradient includes `Bᵀ∇X_out` and `Aᵀ∇X_mid`, because both
/// are needed to propagate further down; the adapter weight gradients are
/// `∇B` and `∇A`. `r` is ignored for `full`.
pub fn flop_linear(d_in: usize, d_out: usize, n: usize, method: Method, r: usize) -> Result<FlopCount> {
    check_rank(method, d_in, r)?;
    let (i, o, n, r) = (d_in as u64, d_out as u64, n as u64, r as u64);
    let dense = 2 * o * i * n;
    Ok(match method {
        Method::Full => FlopCount {
            forward: dense,
            backward_input: dense,
            backward_weight: dense,
        },
        Method::Lora => {
            let adapter = 2 * r * (i + o) * n;
            FlopCount {
                forward: dense + adapter,
                backward_input: dense + adapter,
                backward_weight: adapter,
            }
        }
        Method::Paca | Method::Qpaca => FlopCount {
            forward: dense,
            backward_input: dense,
            backward_weight: 2 * o * r * n,
        },
    })
}

/// Bytes a train-mode forward pass caches for one layer: `d_in·n·s` (full),
/// `(d_in + r)·n·s` (LoRA) or `r·n·s` (partial connections).
pub fn activation_law_bytes(method: Method, d_in: usize, n: usize, r: usize, dtype: DType) -> usize {
    let s = dtype.size();
    match method {
        Method::Full => d_in * n * s,
        Method::Lora => (d_in + r) * n * s,
        Method::Paca | Method::Qpaca => r * n * s,
    }
}

/// Number of trainable scalars in one layer.
pub fn trainable_params(method: Method, d_in: usize, d_out: usize, r: usize) -> usize {
    match method {
        Method::Full => d_out * d_in,
        Method::Lora => r * (d_in + d_out),
        Method::Paca | Method::Qpaca => d_out * r,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayerMemory {
    pub weights: usize,
    pub grads: usize,
    pub optim_state: usize,
    /// Linear-layer cache for one micro-batch.
    pub activations: usize,
}

impl LayerMemory {
    pub fn total(&self) -> usize {
        self.weights + self.grads + self.optim_state + self.activations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryReport {
    pub method: Method,
    pub dtype: DType,
    pub batch_size: usize,
    pub layers: Vec<LayerMemory>,
    pub totals: LayerMemory,
}

/// Analytical bytes for one layer trained under `method` on micro-batches of `n`.
///
/// Weights include frozen parameters (NF4 codes and scales for QPaCA, base
/// weight plus adapter for LoRA). Gradients and AdamW moments cover the
/// trainable parameters only.
pub fn layer_memory(
    method: Method,
    (d_in, d_out): (usize, usize),
    n: usize,
    r: usize,
    block_size: usize,
    dtype: DType,
    optimizer: OptimizerKind,
) -> Result<LayerMemory> {
    check_rank(method, d_in, r)?;
    if method == Method::Qpaca && block_size == 0 {
        return Err(Error::Argument("block size must be at least 1".into()));
    }
    let s = dtype.size();
    let trainable = trainable_params(method, d_in, d_out, r) * s;
    let weights = match method {
        Method::Full | Method::Paca => d_out * d_in * s,
        Method::Lora => d_out * d_in * s + trainable,
        Method::Qpaca => qpaca_weight_bytes(d_out, d_in, r, block_size, dtype),
    };
    Ok(LayerMemory {
        weights,
        grads: trainable,
        optim_state: match optimizer {
            OptimizerKind::AdamW => 2 * trainable,
            OptimizerKind::Sgd => 0,
        },
        activations: activation_law_bytes(method, d_in, n, r, dtype),
    })
}

/// [`layer_memory`] for every layer of `cfg.model` under `cfg.method`.
pub fn memory_report(cfg: &ExperimentConfig) -> Result<MemoryReport> {
    cfg.validate()?;
    let layers = cfg
        .model
        .dims
        .iter()
        .map(|&dims| {
            layer_memory(
                cfg.method,
                dims,
                cfg.batch_size,
                cfg.rank,
                cfg.block_size,
                cfg.dtype,
                cfg.optimizer.kind,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let totals = layers.iter().fold(LayerMemory::default(), |a, l| LayerMemory {
        weights: a.weights + l.weights,
        grads: a.grads + l.grads,
        optim_state: a.optim_state + l.optim_state,
        activations: a.activations + l.activations,
    });
    Ok(MemoryReport {
        method: cfg.method,
        dtype: cfg.dtype,
        batch_size: cfg.batch_size,
        layers,
        totals,
    })
}
