//! SGD and AdamW, for dense parameters and for the compact `d_out × r`
//! block of trainable columns.
//!
//! Every optimizer is split into "compute the update" and "apply it" so the
//! same update can land either on a whole matrix (`param -= update`) or on
//! the selected columns of a frozen weight (see [`paca_apply_update`]). Both
//! paths perform the identical floating-point operations per entry, which is
//! what makes partial training with a full index set reproduce dense training
//! bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::PaCAParams;
use crate::tensor::{gather_cols, scatter_cols_add, Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("optimizer.lr", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("optimizer.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer.beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("optimizer.eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("optimizer.weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// AdamW moment buffers, shaped like the trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T: Real = f64> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
    pub step: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }

    pub fn bytes(&self) -> usize {
        self.m.bytes() + self.v.bytes()
    }
}

/// In place `param -= lr · grad`.
pub fn sgd_step<T: Real>(param: &mut Matrix<T>, grad: &Matrix<T>, lr: T) -> Result<()> {
    param.sub_assign(&sgd_update(grad, lr)?)
}

/// `lr · grad`, the amount [`sgd_step`] subtracts.
pub fn sgd_update<T: Real>(grad: &Matrix<T>, lr: T) -> Result<Matrix<T>> {
    grad.scale(lr)
}

/// Advances the moments with `grad` and returns the AdamW update
/// `lr · (m̂ / (√v̂ + ε) + λ · param)` without touching `param`.
pub fn adamw_update<T: Real>(
    state: &mut OptimState<T>,
    param: &Matrix<T>,
    grad: &Matrix<T>,
    cfg: &AdamWConfig,
) -> Result<Matrix<T>> {
    param.check_same(grad, "adamw_step")?;
    if state.shape() != param.shape() {
        return Err(Error::shape("adamw_step", param.shape(), state.shape()));
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let bias1 = one - b1.powi(t);
    let bias2 = one - b2.powi(t);
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let wd = T::from_f64(cfg.weight_decay);

    let mut update = Vec::with_capacity(param.len());
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (k, (&g, &p)) in grad.as_slice().iter().zip(param.as_slice()).enumerate() {
        m[k] = b1 * m[k] + (one - b1) * g;
        v[k] = b2 * v[k] + (one - b2) * g * g;
        let m_hat = m[k] / bias1;
        let v_hat = v[k] / bias2;
        update.push(lr * (m_hat / (v_hat.sqrt() + eps) + wd * p));
    }
    let update = Matrix::from_raw(param.rows(), param.cols(), update);
    update.ensure_finite("adamw_step")?;
    Ok(update)
}

/// One AdamW step on a dense parameter.
pub fn adamw_step<T: Real>(
    state: &mut OptimState<T>,
    param: &mut Matrix<T>,
    grad: &Matrix<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    let update = adamw_update(state, param, grad, cfg)?;
    param.sub_assign(&update)
}

/// Subtracts `update` (shape `d_out × r`) from the selected columns of the
/// weight. Unselected columns are left bitwise unchanged.
pub fn paca_apply_update<T: Real>(pp: &mut PaCAParams<T>, update: &Matrix<T>) -> Result<()> {
    let idx = pp.idx().clone();
    scatter_cols_add(&mut pp.w, &idx, update, -T::one())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Linear,
    Cosine,
}

/// Step-indexed learning-rate multiplier with linear warmup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub warmup_steps: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Constant,
            warmup_steps: 0,
        }
    }
}

impl LrSchedule {
    /// Multiplier for 0-based `step` out of `total` steps.
    pub fn multiplier(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return (step + 1) as f64 / self.warmup_steps as f64;
        }
        let decay_len = total.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / decay_len).min(1.0);
        match self.kind {
            ScheduleKind::Constant => 1.0,
            ScheduleKind::Linear => 1.0 - progress,
            ScheduleKind::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
        }
    }
}

/// Per-parameter optimizer state; SGD keeps none.
#[derive(Debug, Clone)]
pub enum ParamOptimizer<T: Real = f64> {
    Sgd,
    AdamW(OptimState<T>),
}

impl<T: Real> ParamOptimizer<T> {
    pub fn new(kind: OptimizerKind, rows: usize, cols: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => ParamOptimizer::Sgd,
            OptimizerKind::AdamW => ParamOptimizer::AdamW(OptimState::new(rows, cols)),
        }
    }

    /// The amount to subtract from `param` at learning rate `lr`.
    pub fn update(
        &mut self,
        param: &Matrix<T>,
        grad: &Matrix<T>,
        cfg: &AdamWConfig,
        lr: f64,
    ) -> Result<Matrix<T>> {
        match self {
            ParamOptimizer::Sgd => {
                param.check_same(grad, "sgd_step")?;
                sgd_update(grad, T::from_f64(lr))
            }
            ParamOptimizer::AdamW(state) => {
                let cfg = AdamWConfig { lr, ..*cfg };
                adamw_update(state, param, grad, &cfg)
            }
        }
    }

    pub fn bytes(&self) -> usize {
        match self {
            ParamOptimizer::Sgd => 0,
            ParamOptimizer::AdamW(state) => state.bytes(),
        }
    }

    /// Dense step: `param -= update`.
    pub fn step_dense(
        &mut self,
        param: &mut Matrix<T>,
        grad: &Matrix<T>,
        cfg: &AdamWConfig,
        lr: f64,
    ) -> Result<()> {
        let update = self.update(param, grad, cfg, lr)?;
        param.sub_assign(&update)
    }

    /// Partial step on the selected columns of `pp` with `grad` of shape `d_out × r`.
    pub fn step_partial(
        &mut self,
        pp: &mut PaCAParams<T>,
        grad: &Matrix<T>,
        cfg: &AdamWConfig,
        lr: f64,
    ) -> Result<()> {
        let selected = gather_cols(pp.w(), pp.idx())?;
        let update = self.update(&selected, grad, cfg, lr)?;
        paca_apply_update(pp, &update)
    }
}
