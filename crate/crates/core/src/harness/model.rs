//! A small MLP whose linear layers each train under one regime: dense,
//! low-rank adapter, partial connections, or partial connections over an
//! NF4-quantized frozen remainder.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::config::{Loss, Method, ModelSpec, Nonlinearity};
use crate::error::{Error, Result};
use crate::layers::{
    linear_backward, linear_forward, lora_backward, lora_forward, paca_backward, paca_forward,
    ActivationCache, LinearParams, LoRAParams, PaCAParams,
};
use crate::optim::{AdamWConfig, OptimizerKind, ParamOptimizer};
use crate::quant::{hex_digest, qpaca_materialize, qpaca_pack, QPaCAWeights};
use crate::selection::{derive_seed, seeded_rng};
use crate::tensor::{gather_cols, IndexSet, Matrix, Real};

/// Ordinal offset separating adapter seeds from base-weight seeds.
const ADAPTER_SEED_OFFSET: u64 = 1 << 32;

/// He-normal weights, `N(0, 2/d_in)`, one derived seed per layer.
pub fn init_weights<T: Real>(spec: &ModelSpec, init_seed: u64) -> Vec<Matrix<T>> {
    spec.dims
        .iter()
        .enumerate()
        .map(|(l, &(d_in, d_out))| {
            let mut rng = seeded_rng(derive_seed(init_seed, l as u64));
            let std = (2.0 / d_in as f64).sqrt();
            Matrix::from_fn(d_out, d_in, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64(std * z)
            })
        })
        .collect()
}

/// Per-layer trainable state.
#[derive(Debug, Clone)]
pub enum Layer<T: Real> {
    Full {
        params: LinearParams<T>,
        opt: ParamOptimizer<T>,
    },
    Lora {
        base: LinearParams<T>,
        adapter: LoRAParams<T>,
        opt_a: ParamOptimizer<T>,
        opt_b: ParamOptimizer<T>,
    },
    Paca {
        params: PaCAParams<T>,
        opt: ParamOptimizer<T>,
    },
    Qpaca {
        packed: QPaCAWeights<T>,
        /// Dequantized copy used by the matmuls; rebuilt after every update.
        compute: PaCAParams<T>,
        opt: ParamOptimizer<T>,
    },
}

/// Gradient of one layer's trainable parameters.
#[derive(Debug, Clone)]
pub enum LayerGrad<T: Real> {
    /// `∇W` for dense layers, `∇P` (`d_out × r`) for partial ones.
    Dense(Matrix<T>),
    Lora { a: Matrix<T>, b: Matrix<T> },
}

impl<T: Real> LayerGrad<T> {
    fn accumulate(&mut self, other: &Self) -> Result<()> {
        match (self, other) {
            (LayerGrad::Dense(g), LayerGrad::Dense(o)) => g.add_assign(o),
            (LayerGrad::Lora { a, b }, LayerGrad::Lora { a: oa, b: ob }) => {
                a.add_assign(oa)?;
                b.add_assign(ob)
            }
            _ => Err(Error::State("mismatched gradient kinds".into())),
        }
    }
}

/// Sums per-micro-batch gradients in place.
pub fn accumulate_grads<T: Real>(acc: &mut [LayerGrad<T>], more: &[LayerGrad<T>]) -> Result<()> {
    if acc.len() != more.len() {
        return Err(Error::State("gradient lists differ in length".into()));
    }
    acc.iter_mut().zip(more).try_for_each(|(a, m)| a.accumulate(m))
}

impl<T: Real> Layer<T> {
    fn d_in(&self) -> usize {
        self.weight().cols()
    }

    /// The weight the matmuls see.
    pub fn weight(&self) -> &Matrix<T> {
        match self {
            Layer::Full { params, .. } => &params.w,
            Layer::Lora { base, .. } => &base.w,
            Layer::Paca { params, .. } => params.w(),
            Layer::Qpaca { compute, .. } => compute.w(),
        }
    }

    pub fn idx(&self) -> Option<&IndexSet> {
        match self {
            Layer::Paca { params, .. } => Some(params.idx()),
            Layer::Qpaca { packed, .. } => Some(&packed.idx),
            _ => None,
        }
    }

    fn forward(&self, x: &Matrix<T>, train: bool) -> Result<(Matrix<T>, ActivationCache<T>)> {
        match self {
            Layer::Full { params, .. } => linear_forward(params, x, train),
            Layer::Lora { base, adapter, .. } => lora_forward(base, adapter, x, train),
            Layer::Paca { params, .. } => paca_forward(params, x, train),
            Layer::Qpaca { compute, .. } => paca_forward(compute, x, train),
        }
    }

    fn backward(&self, g_out: &Matrix<T>, cache: &ActivationCache<T>) -> Result<(Matrix<T>, LayerGrad<T>)> {
        match self {
            Layer::Full { params, .. } => {
                let (g_in, g_w) = linear_backward(params, g_out, cache)?;
                Ok((g_in, LayerGrad::Dense(g_w)))
            }
            Layer::Lora { base, adapter, .. } => {
                let g = lora_backward(base, adapter, g_out, cache)?;
                Ok((g.g_in, LayerGrad::Lora { a: g.g_a, b: g.g_b }))
            }
            Layer::Paca { params, .. } => {
                let (g_in, g_p) = paca_backward(params, g_out, cache)?;
                Ok((g_in, LayerGrad::Dense(g_p)))
            }
            Layer::Qpaca { compute, .. } => {
                let (g_in, g_p) = paca_backward(compute, g_out, cache)?;
                Ok((g_in, LayerGrad::Dense(g_p)))
            }
        }
    }

    fn apply(&mut self, grad: &LayerGrad<T>, cfg: &AdamWConfig, lr: f64, partial_lr: f64) -> Result<()> {
        match (self, grad) {
            (Layer::Full { params, opt }, LayerGrad::Dense(g)) => opt.step_dense(&mut params.w, g, cfg, lr),
            (Layer::Lora { adapter, opt_a, opt_b, .. }, LayerGrad::Lora { a, b }) => {
                opt_a.step_dense(&mut adapter.a, a, cfg, lr)?;
                opt_b.step_dense(&mut adapter.b, b, cfg, lr)
            }
            (Layer::Paca { params, opt }, LayerGrad::Dense(g)) => opt.step_partial(params, g, cfg, partial_lr),
            (Layer::Qpaca { packed, compute, opt }, LayerGrad::Dense(g)) => {
                let update = opt.update(&packed.selected, g, cfg, partial_lr)?;
                let mut selected = packed.selected.clone();
                selected.sub_assign(&update)?;
                packed.set_selected(selected)?;
                *compute = PaCAParams::new(qpaca_materialize(packed)?, packed.idx.clone())?;
                Ok(())
            }
            _ => Err(Error::State("gradient kind does not match layer".into())),
        }
    }

    pub fn optimizer_bytes(&self) -> usize {
        match self {
            Layer::Full { opt, .. } | Layer::Paca { opt, .. } | Layer::Qpaca { opt, .. } => opt.bytes(),
            Layer::Lora { opt_a, opt_b, .. } => opt_a.bytes() + opt_b.bytes(),
        }
    }

    /// Resident parameter bytes, frozen and trainable. For QPaCA this is the
    /// packed form; the dequantized compute copy is scratch.
    pub fn weight_bytes(&self) -> usize {
        match self {
            Layer::Full { params, .. } => params.w.bytes(),
            Layer::Lora { base, adapter, .. } => base.w.bytes() + adapter.a.bytes() + adapter.b.bytes(),
            Layer::Paca { params, .. } => params.w().bytes(),
            Layer::Qpaca { packed, .. } => packed.weight_bytes(),
        }
    }

    pub fn trainable_params(&self) -> usize {
        match self {
            Layer::Full { params, .. } => params.w.len(),
            Layer::Lora { adapter, .. } => adapter.a.len() + adapter.b.len(),
            Layer::Paca { params, .. } => params.w().rows() * params.rank(),
            Layer::Qpaca { packed, .. } => packed.selected.len(),
        }
    }

    /// SHA-256 of the parameters that must never change: the unselected
    /// columns of a partial layer (row-major, little-endian) or the whole
    /// base weight under LoRA. Dense layers have none.
    pub fn frozen_hash(&self) -> Result<Option<String>> {
        let frozen = match self {
            Layer::Full { .. } => return Ok(None),
            Layer::Lora { base, .. } => base.w.clone(),
            Layer::Paca { .. } | Layer::Qpaca { .. } => {
                let idx = self.idx().expect("partial layer has an index set");
                let rest = idx.complement();
                if rest.is_empty() {
                    return Ok(Some(hex_digest(&Sha256::digest([]))));
                }
                gather_cols(self.weight(), &IndexSet::new(rest, idx.domain())?)?
            }
        };
        Ok(Some(hex_digest(&Sha256::digest(frozen.to_le_bytes()))))
    }

    pub fn payload_hash(&self) -> Option<String> {
        match self {
            Layer::Qpaca { packed, .. } => Some(packed.quantized.payload_hash()),
            _ => None,
        }
    }
}

/// Output of a forward pass plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass<T: Real> {
    pub output: Matrix<T>,
    pub caches: Vec<ActivationCache<T>>,
    /// ReLU masks after every layer but the last (empty for identity).
    pub masks: Vec<Vec<bool>>,
}

impl<T: Real> ForwardPass<T> {
    pub fn activation_bytes(&self) -> Vec<usize> {
        self.caches.iter().map(|c| c.bytes()).collect()
    }

    /// One byte per mask entry; kept apart from the linear-layer caches.
    pub fn mask_bytes(&self) -> usize {
        self.masks.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    method: Method,
    nonlinearity: Nonlinearity,
    layers: Vec<Layer<T>>,
}

/// How a [`Model`] wraps its initial weights.
#[derive(Debug, Clone)]
pub struct ModelOptions {
    pub method: Method,
    pub rank: usize,
    pub lora_alpha: f64,
    pub block_size: usize,
    pub optimizer: OptimizerKind,
    /// Seed for adapter initialization.
    pub init_seed: u64,
}

impl<T: Real> Model<T> {
    /// Wraps `weights` for training under `opts.method`. `indices` holds one
    /// index set per layer and is required exactly for partial methods.
    pub fn new(
        spec: &ModelSpec,
        weights: Vec<Matrix<T>>,
        indices: Option<Vec<IndexSet>>,
        opts: &ModelOptions,
    ) -> Result<Self> {
        if weights.len() != spec.dims.len() {
            return Err(Error::Argument("one weight per layer required".into()));
        }
        let indices = match (opts.method.is_partial(), indices) {
            (true, Some(ix)) if ix.len() == weights.len() => ix.into_iter().map(Some).collect(),
            (false, None) => vec![None; weights.len()],
            _ => return Err(Error::Argument("index sets needed for partial methods only, one per layer".into())),
        };
        let kind = opts.optimizer;
        let layers = weights
            .into_iter()
            .zip(indices)
            .enumerate()
            .map(|(l, (w, idx))| {
                if w.shape() != (spec.dims[l].1, spec.dims[l].0) {
                    return Err(Error::shape("Model::new", (spec.dims[l].1, spec.dims[l].0), w.shape()));
                }
                let (d_out, d_in) = w.shape();
                Ok(match opts.method {
                    Method::Full => Layer::Full {
                        params: LinearParams::new(w),
                        opt: ParamOptimizer::new(kind, d_out, d_in),
                    },
                    Method::Lora => {
                        let mut rng = seeded_rng(derive_seed(opts.init_seed, ADAPTER_SEED_OFFSET + l as u64));
                        let adapter = LoRAParams::init(d_in, d_out, opts.rank, opts.lora_alpha, &mut rng)?;
                        Layer::Lora {
                            base: LinearParams::new(w),
                            adapter,
                            opt_a: ParamOptimizer::new(kind, opts.rank, d_in),
                            opt_b: ParamOptimizer::new(kind, d_out, opts.rank),
                        }
                    }
                    Method::Paca => {
                        let idx = idx.expect("checked above");
                        let r = idx.len();
                        Layer::Paca {
                            params: PaCAParams::new(w, idx)?,
                            opt: ParamOptimizer::new(kind, d_out, r),
                        }
                    }
                    Method::Qpaca => {
                        let idx = idx.expect("checked above");
                        let packed = qpaca_pack(&w, &idx, opts.block_size)?;
                        let compute = PaCAParams::new(qpaca_materialize(&packed)?, idx)?;
                        Layer::Qpaca {
                            opt: ParamOptimizer::new(kind, d_out, packed.idx.len()),
                            packed,
                            compute,
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method: opts.method,
            nonlinearity: spec.nonlinearity,
            layers,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn forward(&self, x: &Matrix<T>, train: bool) -> Result<ForwardPass<T>> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if h.rows() != layer.d_in() {
                return Err(Error::shape("Model::forward", (layer.d_in(), h.cols()), h.shape()));
            }
            let (out, cache) = layer.forward(&h, train)?;
            caches.push(cache);
            h = out;
            if l < last && self.nonlinearity == Nonlinearity::Relu {
                let mask: Vec<bool> = h.as_slice().iter().map(|&v| v > T::zero()).collect();
                h = h.map(|v| v.max(T::zero()))?;
                if train {
                    masks.push(mask);
                }
            }
        }
        Ok(ForwardPass {
            output: h,
            caches,
            masks,
        })
    }

    /// Gradients for every layer given `∂loss/∂output`. The input gradient
    /// of the first layer is computed as well, so every layer does the same
    /// amount of work.
    pub fn backward(&self, pass: &ForwardPass<T>, g_out: &Matrix<T>) -> Result<Vec<LayerGrad<T>>> {
        let relu = self.nonlinearity == Nonlinearity::Relu;
        if pass.caches.len() != self.layers.len() || (relu && pass.masks.len() + 1 != self.layers.len()) {
            return Err(Error::State("backward without train-mode forward".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = g_out.clone();
        for l in (0..self.layers.len()).rev() {
            let (g_in, grad) = self.layers[l].backward(&g, &pass.caches[l])?;
            grads.push(grad);
            g = g_in;
            if l > 0 && relu {
                let mask = &pass.masks[l - 1];
                let gated = g
                    .as_slice()
                    .iter()
                    .zip(mask)
                    .map(|(&v, &on)| if on { v } else { T::zero() })
                    .collect();
                g = Matrix::from_vec(g.rows(), g.cols(), gated)?;
            }
        }
        grads.reverse();
        Ok(grads)
    }

    /// One optimizer step. Partial-connection layers use `lr · partial_lr_mult`.
    pub fn apply(&mut self, grads: &[LayerGrad<T>], cfg: &AdamWConfig, lr: f64, partial_lr_mult: f64) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::State("one gradient per layer required".into()));
        }
        let partial_lr = lr * partial_lr_mult;
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.apply(g, cfg, lr, partial_lr)?;
        }
        Ok(())
    }

    pub fn optimizer_bytes(&self) -> usize {
        self.layers.iter().map(Layer::optimizer_bytes).sum()
    }

    pub fn weight_bytes(&self) -> usize {
        self.layers.iter().map(Layer::weight_bytes).sum()
    }

    pub fn trainable_params(&self) -> usize {
        self.layers.iter().map(Layer::trainable_params).sum()
    }

    pub fn frozen_hashes(&self) -> Result<Vec<Option<String>>> {
        self.layers.iter().map(Layer::frozen_hash).collect()
    }

    pub fn payload_hashes(&self) -> Vec<Option<String>> {
        self.layers.iter().map(Layer::payload_hash).collect()
    }

    /// Index sets of partial layers, in layer order.
    pub fn selected_columns(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .filter_map(|l| l.idx().map(|i| i.indices().to_vec()))
            .collect()
    }
}

/// Mean loss over the batch and its gradient with respect to `logits`.
///
/// Cross-entropy uses a max-shifted softmax; MSE is
/// `(1/2n)·Σ‖y − onehot(label)‖²`.
pub fn loss_and_grad<T: Real>(logits: &Matrix<T>, labels: &[usize], loss: Loss) -> Result<(f64, Matrix<T>)> {
    let (c, n) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape("loss_and_grad", (c, labels.len()), logits.shape()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Index { index: bad, domain: c });
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0f64; c * n];
    let mut total = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let col: Vec<f64> = (0..c).map(|i| logits.get(i, s).as_f64()).collect();
        match loss {
            Loss::CrossEntropy => {
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = col.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                total += z.ln() - (col[y] - max);
                for i in 0..c {
                    let target = if i == y { 1.0 } else { 0.0 };
                    grad[i * n + s] = (exps[i] / z - target) * inv_n;
                }
            }
            Loss::Mse => {
                for (i, v) in col.iter().enumerate() {
                    let diff = v - if i == y { 1.0 } else { 0.0 };
                    total += 0.5 * diff * diff;
                    grad[i * n + s] = diff * inv_n;
                }
            }
        }
    }
    let loss_value = total * inv_n;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let grad = Matrix::from_vec(c, n, grad.into_iter().map(T::from_f64).collect())?;
    Ok((loss_value, grad))
}

/// Fraction of columns whose largest logit is the label (ties go to the lower class).
pub fn accuracy<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(s, &y)| {
            let mut best = 0;
            for i in 1..logits.rows() {
                if logits.get(i, s) > logits.get(best, s) {
                    best = i;
                }
            }
            best == y
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}
