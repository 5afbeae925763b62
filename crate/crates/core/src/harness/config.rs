//! Experiment configuration, read from TOML. Unknown keys are rejected.
//!
//! ```toml
//! method = "paca"            # full | lora | paca | qpaca
//! rank = 8
//! steps = 2000
//! batch_size = 32
//! data_seed = 1
//! init_seed = 2
//!
//! [model]
//! dims = [[64, 64], [64, 64], [64, 2]]   # (d_in, d_out) per linear layer
//! loss = "cross_entropy"
//!
//! [selection]
//! strategy = "random"        # random | weight_norm | gradient
//!
//! [optimizer]
//! kind = "adamw"
//! lr = 1e-3
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamWConfig, LrSchedule, OptimizerKind};
use crate::selection::{SelectionConfig, Strategy};
use crate::tensor::DType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Full,
    Lora,
    Paca,
    Qpaca,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Full => "full",
            Method::Lora => "lora",
            Method::Paca => "paca",
            Method::Qpaca => "qpaca",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Method::Full),
            "lora" => Ok(Method::Lora),
            "paca" => Ok(Method::Paca),
            "qpaca" => Ok(Method::Qpaca),
            other => Err(Error::config("method", format!("unknown method `{other}`"))),
        }
    }
}

impl Method {
    /// Methods whose trainable set is a subset of weight columns.
    pub fn is_partial(self) -> bool {
        matches!(self, Method::Paca | Method::Qpaca)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

/// Stack of linear layers with a nonlinearity between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `(d_in, d_out)` for each linear layer, input to output.
    pub dims: Vec<(usize, usize)>,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    #[serde(default = "default_loss")]
    pub loss: Loss,
}

fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::Relu
}

fn default_loss() -> Loss {
    Loss::CrossEntropy
}

impl ModelSpec {
    pub fn mlp(dims: &[usize]) -> Self {
        Self {
            dims: dims.windows(2).map(|p| (p[0], p[1])).collect(),
            nonlinearity: Nonlinearity::Relu,
            loss: Loss::CrossEntropy,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims.first().map_or(0, |d| d.0)
    }

    pub fn output_dim(&self) -> usize {
        self.dims.last().map_or(0, |d| d.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::config("model.dims", "needs at least one layer"));
        }
        for (l, &(d_in, d_out)) in self.dims.iter().enumerate() {
            if d_in == 0 || d_out == 0 {
                return Err(Error::config(
                    format!("model.dims[{l}]"),
                    "dimensions must be positive",
                ));
            }
        }
        for (l, pair) in self.dims.windows(2).enumerate() {
            if pair[0].1 != pair[1].0 {
                return Err(Error::config(
                    format!("model.dims[{}]", l + 1),
                    format!(
                        "d_in {} does not match previous layer's d_out {}",
                        pair[1].0, pair[0].1
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Synthetic classification data: `classes` Gaussian clusters in the model's
/// input space. Cluster means sit at distance `separation / 2` from the
/// origin along random directions; samples add isotropic noise of std `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub classes: usize,
    pub separation: f64,
    pub noise: f64,
    /// Size of the fixed held-out set used for initial and final loss.
    pub eval_samples: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            separation: 3.0,
            noise: 1.0,
            eval_samples: 1024,
        }
    }
}

/// Optional dense pretraining before the configured method takes over.
///
/// The backbone is trained densely with AdamW (constant rate `lr`) on the
/// clusters described by `[task]`. The run then fine-tunes on a shifted task
/// in which every cluster mean is rotated by `shift_degrees` towards a random
/// orthogonal direction. All methods of a comparison start from the same
/// pretrained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub shift_degrees: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 3e-3,
            shift_degrees: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub strategy: Strategy,
    pub seed: u64,
    pub warmup_steps: usize,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Random,
            seed: 0,
            warmup_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            kind: OptimizerKind::AdamW,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            schedule: LrSchedule::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default = "default_rank")]
    pub rank: usize,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Micro-batches whose gradients are summed per optimizer step.
    #[serde(default = "one")]
    pub grad_accum_steps: usize,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    /// LoRA scale is `lora_alpha / rank`.
    #[serde(default = "default_lora_alpha")]
    pub lora_alpha: f64,
    /// Learning-rate multiplier for partial-connection updates.
    #[serde(default = "default_paca_alpha")]
    pub paca_alpha: f64,
    #[serde(default = "default_block")]
    pub block_size: usize,
    pub model: ModelSpec,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_rank() -> usize {
    8
}
fn default_batch() -> usize {
    32
}
fn one() -> usize {
    1
}
fn default_dtype() -> DType {
    DType::F64
}
fn default_lora_alpha() -> f64 {
    16.0
}
fn default_paca_alpha() -> f64 {
    1.0
}
fn default_block() -> usize {
    crate::quant::DEFAULT_BLOCK_SIZE
}

impl ExperimentConfig {
    /// Baseline configuration for `model`; fields can be adjusted afterwards.
    pub fn new(method: Method, model: ModelSpec) -> Self {
        Self {
            method,
            rank: default_rank(),
            steps: 100,
            batch_size: default_batch(),
            grad_accum_steps: 1,
            data_seed: 0,
            init_seed: 0,
            dtype: DType::F64,
            lora_alpha: default_lora_alpha(),
            paca_alpha: default_paca_alpha(),
            block_size: default_block(),
            model,
            task: TaskConfig::default(),
            pretrain: None,
            selection: SelectionSection::default(),
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = match e.span() {
                Some(span) => locate_key(text, span.start),
                None => String::from("<document>"),
            };
            Error::config(field, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            strategy: self.selection.strategy,
            rank: self.rank,
            seed: self.selection.seed,
            warmup_steps: self.selection.warmup_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.grad_accum_steps == 0 {
            return Err(Error::config("grad_accum_steps", "must be at least 1"));
        }
        match self.method {
            Method::Full => {}
            Method::Lora => {
                if self.rank == 0 {
                    return Err(Error::config("rank", "LoRA rank must be at least 1"));
                }
                if !(self.lora_alpha > 0.0 && self.lora_alpha.is_finite()) {
                    return Err(Error::config("lora_alpha", "must be positive"));
                }
            }
            Method::Paca | Method::Qpaca => {
                let min_d_in = self.model.dims.iter().map(|d| d.0).min().unwrap_or(0);
                if self.rank == 0 || self.rank > min_d_in {
                    return Err(Error::config(
                        "rank",
                        format!("must lie in 1..={min_d_in} (smallest layer input)"),
                    ));
                }
                self.selection_config().validate()?;
                if !(self.paca_alpha > 0.0 && self.paca_alpha.is_finite()) {
                    return Err(Error::config("paca_alpha", "must be positive"));
                }
            }
        }
        if self.method == Method::Qpaca && self.block_size == 0 {
            return Err(Error::config("block_size", "must be at least 1"));
        }
        self.optimizer.adamw().validate()?;
        let t = &self.task;
        if t.classes < 2 {
            return Err(Error::config("task.classes", "needs at least two classes"));
        }
        if self.model.output_dim() != t.classes {
            return Err(Error::config(
                "model.dims",
                format!(
                    "last layer has {} outputs but the task has {} classes",
                    self.model.output_dim(),
                    t.classes
                ),
            ));
        }
        if !(t.separation >= 0.0 && t.separation.is_finite()) {
            return Err(Error::config("task.separation", "must be finite and non-negative"));
        }
        if !(t.noise >= 0.0 && t.noise.is_finite()) {
            return Err(Error::config("task.noise", "must be finite and non-negative"));
        }
        if t.eval_samples == 0 {
            return Err(Error::config("task.eval_samples", "must be at least 1"));
        }
        if let Some(p) = &self.pretrain {
            if p.steps == 0 {
                return Err(Error::config("pretrain.steps", "must be at least 1"));
            }
            if !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(Error::config("pretrain.lr", "must be positive"));
            }
            if !p.shift_degrees.is_finite() {
                return Err(Error::config("pretrain.shift_degrees", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Dotted key path (e.g. `optimizer.lr`) of the line containing byte `pos`.
fn locate_key(text: &str, pos: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut offset = 0;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            table = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        if pos < offset + line.len() + 1 {
            break;
        }
        offset += line.len() + 1;
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => String::from("<document>"),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
method = "paca"
rank = 4
steps = 10
[model]
dims = [[8, 8], [8, 2]]
"#;

    #[test]
    fn test_parse_minimal() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.method, Method::Paca);
        assert_eq!(cfg.model.loss, Loss::CrossEntropy);
        assert_eq!(cfg.optimizer.kind, OptimizerKind::AdamW);
        assert_eq!(cfg.selection.warmup_steps, 100);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn test_unknown_field_rejected() {
        let text = format!("{BASE}\n[optimizer]\nlr = 0.1\nmomentum = 0.9\n");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { field, message }) => {
                assert_eq!(field, "optimizer.momentum");
                assert!(message.contains("momentum"), "{message}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn test_rank_checked_per_method() {
        let text = BASE.replace("rank = 4", "rank = 9");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&text),
            Err(Error::Config { field, .. }) if field == "rank"
        ));
        let lora = text.replace("\"paca\"", "\"lora\"");
        assert!(ExperimentConfig::from_toml_str(&lora).is_ok());
        let zero = BASE.replace("rank = 4", "rank = 0").replace("\"paca\"", "\"lora\"");
        assert!(ExperimentConfig::from_toml_str(&zero).is_err());
    }

    #[test]
    fn test_dims_must_chain() {
        let text = BASE.replace("[[8, 8], [8, 2]]", "[[8, 8], [7, 2]]");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&text),
            Err(Error::Config { field, .. }) if field == "model.dims[1]"
        ));
        let classes = BASE.replace("[8, 2]", "[8, 3]");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&classes),
            Err(Error::Config { field, .. }) if field == "model.dims"
        ));
    }

    #[test]
    fn test_bad_values() {
        let text = format!("{BASE}\n[optimizer]\nbeta2 = 1.0\n");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&text),
            Err(Error::Config { field, .. }) if field == "optimizer.beta2"
        ));
        let text = BASE.replace("steps = 10", "steps = 0");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = BASE.replace("\"paca\"", "\"dora\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
