//! Training runs on the Gaussian-cluster task.
//!
//! Every optimizer step checks, for each micro-batch, that each layer's cache
//! holds exactly the bytes the analytical law predicts and that the counted
//! multiply-accumulates match the FLOP model. A mismatch aborts the run with
//! an invariant error.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, Method, PretrainConfig};
use super::cost::{flop_linear, memory_report, FlopCount, MemoryReport};
use super::data::{Batch, GaussianClusters};
use super::model::{accumulate_grads, accuracy, init_weights, loss_and_grad, Model, ModelOptions};
use crate::error::{Error, Result};
use crate::optim::{AdamWConfig, OptimizerKind};
use crate::selection::{
    derive_seed, select_by_grad, select_by_weight_norm, select_random, GradStats, Strategy,
};
use crate::tensor::{count_macs, DType, IndexSet, Matrix, Real};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean training loss over the step's micro-batches.
    pub loss: f64,
    pub lr: f64,
    /// Per-layer linear-cache bytes of one micro-batch.
    pub activation_bytes: Vec<usize>,
    /// Summed over layers and micro-batches.
    pub flops: FlopCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLog {
    pub method: Method,
    pub dtype: DType,
    pub steps: Vec<StepRecord>,
    pub optimizer_state_bytes: usize,
    pub weight_bytes: usize,
    pub trainable_params: usize,
    /// ReLU mask bytes per micro-batch, outside the linear-layer caches.
    pub mask_bytes: usize,
    pub initial_eval: EvalResult,
    pub final_eval: EvalResult,
    /// Selected columns per partial layer (empty for other methods).
    pub selected_columns: Vec<Vec<usize>>,
    pub frozen_hashes_before: Vec<Option<String>>,
    pub frozen_hashes_after: Vec<Option<String>>,
    pub payload_hashes_before: Vec<Option<String>>,
    pub payload_hashes_after: Vec<Option<String>>,
    pub memory: MemoryReport,
    /// Seconds spent in each optimizer step, for reporting only.
    pub step_seconds: Vec<f64>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn total_flops(&self) -> FlopCount {
        self.steps.iter().map(|s| s.flops).sum()
    }

    pub fn peak_activation_bytes(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.activation_bytes.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    pub fn wall_time_seconds(&self) -> f64 {
        self.step_seconds.iter().sum()
    }
}

/// Step-by-step driver; [`run_experiment`] runs it to completion.
pub struct Trainer<T: Real> {
    cfg: ExperimentConfig,
    data: GaussianClusters,
    stream: ChaCha8Rng,
    eval_set: Batch<T>,
    model: Model<T>,
    memory: MemoryReport,
    step_flops: FlopCount,
    step: usize,
    records: Vec<StepRecord>,
    step_seconds: Vec<f64>,
    mask_bytes: usize,
    initial_eval: EvalResult,
    frozen_before: Vec<Option<String>>,
    payload_before: Vec<Option<String>>,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.dtype != T::DTYPE {
            return Err(Error::config(
                "dtype",
                format!("config asks for {} but the trainer runs {}", cfg.dtype, T::DTYPE),
            ));
        }
        let source = GaussianClusters::new(&cfg.task, cfg.model.input_dim(), cfg.data_seed);
        let (data, weights) = match &cfg.pretrain {
            None => (source, init_weights(&cfg.model, cfg.init_seed)),
            Some(p) => {
                let weights = pretrain_weights(cfg, p, &source)?;
                let target = source.shifted(p.shift_degrees.to_radians(), derive_seed(cfg.data_seed, 5));
                (target, weights)
            }
        };
        let indices = if cfg.method.is_partial() {
            Some(select_columns(cfg, &data, &weights)?)
        } else {
            None
        };
        let opts = ModelOptions {
            method: cfg.method,
            rank: cfg.rank,
            lora_alpha: cfg.lora_alpha,
            block_size: cfg.block_size,
            optimizer: cfg.optimizer.kind,
            init_seed: cfg.init_seed,
        };
        let model = Model::new(&cfg.model, weights, indices, &opts)?;
        let memory = memory_report(cfg)?;
        if model.optimizer_bytes() != memory.totals.optim_state {
            return Err(Error::Invariant(format!(
                "optimizer state is {} bytes, model predicts {}",
                model.optimizer_bytes(),
                memory.totals.optim_state
            )));
        }
        if model.weight_bytes() != memory.totals.weights {
            return Err(Error::Invariant(format!(
                "weights occupy {} bytes, model predicts {}",
                model.weight_bytes(),
                memory.totals.weights
            )));
        }
        let step_flops = cfg
            .model
            .dims
            .iter()
            .map(|&(d_in, d_out)| flop_linear(d_in, d_out, cfg.batch_size, cfg.method, cfg.rank))
            .sum::<Result<FlopCount>>()?;
        let eval_set = data.eval_set(cfg.data_seed, cfg.task.eval_samples);
        let mut trainer = Self {
            cfg: cfg.clone(),
            stream: GaussianClusters::train_stream(cfg.data_seed),
            data,
            eval_set,
            frozen_before: model.frozen_hashes()?,
            payload_before: model.payload_hashes(),
            model,
            memory,
            step_flops,
            step: 0,
            records: Vec::with_capacity(cfg.steps),
            step_seconds: Vec::with_capacity(cfg.steps),
            mask_bytes: 0,
            initial_eval: EvalResult { loss: 0.0, accuracy: 0.0 },
        };
        trainer.initial_eval = trainer.evaluate()?;
        Ok(trainer)
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Loss and accuracy on the fixed held-out set.
    pub fn evaluate(&self) -> Result<EvalResult> {
        let pass = self.model.forward(&self.eval_set.x, false)?;
        let (loss, _) = loss_and_grad(&pass.output, &self.eval_set.labels, self.cfg.model.loss)?;
        Ok(EvalResult {
            loss,
            accuracy: accuracy(&pass.output, &self.eval_set.labels),
        })
    }

    /// One optimizer step over `grad_accum_steps` micro-batches.
    pub fn step(&mut self) -> Result<&StepRecord> {
        let cfg = &self.cfg;
        if self.step >= cfg.steps {
            return Err(Error::State(format!("all {} steps already run", cfg.steps)));
        }
        let started = Instant::now();
        let lr = cfg.optimizer.lr * cfg.optimizer.schedule.multiplier(self.step, cfg.steps);
        let mut loss_sum = 0.0;
        let mut grads = None;
        let mut activation_bytes = Vec::new();
        for _ in 0..cfg.grad_accum_steps {
            let batch: Batch<T> = self.data.sample(&mut self.stream, cfg.batch_size);
            let (pass, fwd_macs) = count_macs(|| self.model.forward(&batch.x, true));
            let pass = pass?;
            activation_bytes = pass.activation_bytes();
            for (l, (&got, expected)) in activation_bytes.iter().zip(&self.memory.layers).enumerate() {
                if got != expected.activations {
                    return Err(Error::Invariant(format!(
                        "step {}: layer {l} cached {got} bytes, law predicts {}",
                        self.step, expected.activations
                    )));
                }
            }
            self.mask_bytes = pass.mask_bytes();
            let (loss, g_out) = loss_and_grad(&pass.output, &batch.labels, cfg.model.loss)?;
            loss_sum += loss;
            let (micro, bwd_macs) = count_macs(|| self.model.backward(&pass, &g_out));
            let micro = micro?;
            if 2 * fwd_macs != self.step_flops.forward || 2 * bwd_macs != self.step_flops.backward() {
                return Err(Error::Invariant(format!(
                    "step {}: counted {} forward / {} backward FLOPs, model predicts {} / {}",
                    self.step,
                    2 * fwd_macs,
                    2 * bwd_macs,
                    self.step_flops.forward,
                    self.step_flops.backward()
                )));
            }
            match grads.as_mut() {
                None => grads = Some(micro),
                Some(acc) => accumulate_grads(acc, &micro)?,
            }
        }
        let loss = loss_sum / cfg.grad_accum_steps as f64;
        if !loss.is_finite() {
            return Err(Error::Invariant(format!("step {}: loss is not finite", self.step)));
        }
        let grads = grads.expect("at least one micro-batch");
        self.model.apply(&grads, &cfg.optimizer.adamw(), lr, cfg.paca_alpha)?;
        self.records.push(StepRecord {
            step: self.step,
            loss,
            lr,
            activation_bytes,
            flops: self.step_flops.scaled(cfg.grad_accum_steps as u64),
        });
        self.step_seconds.push(started.elapsed().as_secs_f64());
        self.step += 1;
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step < self.cfg.steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<TrainLog> {
        let final_eval = self.evaluate()?;
        Ok(TrainLog {
            method: self.cfg.method,
            dtype: self.cfg.dtype,
            optimizer_state_bytes: self.model.optimizer_bytes(),
            weight_bytes: self.model.weight_bytes(),
            trainable_params: self.model.trainable_params(),
            mask_bytes: self.mask_bytes,
            initial_eval: self.initial_eval,
            final_eval,
            selected_columns: self.model.selected_columns(),
            frozen_hashes_after: self.model.frozen_hashes()?,
            frozen_hashes_before: self.frozen_before,
            payload_hashes_after: self.model.payload_hashes(),
            payload_hashes_before: self.payload_before,
            memory: self.memory,
            steps: self.records,
            step_seconds: self.step_seconds,
        })
    }
}

/// One index set per layer according to the configured strategy.
///
/// The gradient strategy accumulates full weight gradients of the initial
/// model over `warmup_steps` batches drawn from a stream of their own, so the
/// training stream is the same for every strategy.
fn select_columns<T: Real>(
    cfg: &ExperimentConfig,
    data: &GaussianClusters,
    weights: &[Matrix<T>],
) -> Result<Vec<IndexSet>> {
    let sel = &cfg.selection;
    match sel.strategy {
        Strategy::Random => weights
            .iter()
            .enumerate()
            .map(|(l, w)| select_random(w.cols(), cfg.rank, derive_seed(sel.seed, l as u64)))
            .collect(),
        Strategy::WeightNorm => weights.iter().map(|w| select_by_weight_norm(w, cfg.rank)).collect(),
        Strategy::Gradient => {
            let dense = Model::new(
                &cfg.model,
                weights.to_vec(),
                None,
                &ModelOptions {
                    method: Method::Full,
                    rank: cfg.rank,
                    lora_alpha: cfg.lora_alpha,
                    block_size: cfg.block_size,
                    optimizer: OptimizerKind::Sgd,
                    init_seed: cfg.init_seed,
                },
            )?;
            let mut stats: Vec<GradStats> = weights.iter().map(|w| GradStats::new(w.cols())).collect();
            let mut stream = crate::selection::seeded_rng(derive_seed(cfg.data_seed, 3));
            for _ in 0..sel.warmup_steps {
                let batch: Batch<T> = data.sample(&mut stream, cfg.batch_size);
                let pass = dense.forward(&batch.x, true)?;
                let (_, g_out) = loss_and_grad(&pass.output, &batch.labels, cfg.model.loss)?;
                for (s, g) in stats.iter_mut().zip(dense.backward(&pass, &g_out)?) {
                    match g {
                        super::model::LayerGrad::Dense(g_w) => s.accumulate(&g_w)?,
                        super::model::LayerGrad::Lora { .. } => unreachable!("dense model"),
                    }
                }
            }
            stats.iter().map(|s| select_by_grad(s, cfg.rank)).collect()
        }
    }
}

/// Dense AdamW training of the initial weights on the source clusters.
fn pretrain_weights<T: Real>(
    cfg: &ExperimentConfig,
    p: &PretrainConfig,
    source: &GaussianClusters,
) -> Result<Vec<Matrix<T>>> {
    let opts = ModelOptions {
        method: Method::Full,
        rank: cfg.rank,
        lora_alpha: cfg.lora_alpha,
        block_size: cfg.block_size,
        optimizer: OptimizerKind::AdamW,
        init_seed: cfg.init_seed,
    };
    let mut model = Model::new(&cfg.model, init_weights(&cfg.model, cfg.init_seed), None, &opts)?;
    let adamw = AdamWConfig {
        lr: p.lr,
        ..cfg.optimizer.adamw()
    };
    let mut stream = crate::selection::seeded_rng(derive_seed(cfg.data_seed, 4));
    for _ in 0..p.steps {
        let batch: Batch<T> = source.sample(&mut stream, cfg.batch_size);
        let pass = model.forward(&batch.x, true)?;
        let (_, g_out) = loss_and_grad(&pass.output, &batch.labels, cfg.model.loss)?;
        let grads = model.backward(&pass, &g_out)?;
        model.apply(&grads, &adamw, p.lr, 1.0)?;
    }
    Ok(model.layers().iter().map(|l| l.weight().clone()).collect())
}

fn run_typed<T: Real>(cfg: &ExperimentConfig) -> Result<TrainLog> {
    let mut trainer = Trainer::<T>::new(cfg)?;
    trainer.run_to_end()?;
    trainer.finish()
}

/// Trains `cfg` from scratch in its configured precision.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrainLog> {
    match cfg.dtype {
        DType::F32 => run_typed::<f32>(cfg),
        DType::F64 => run_typed::<f64>(cfg),
    }
}
