//! Report files: `steps.csv` (one row per optimizer step) and `summary.json`
//! for single runs, `comparison.csv` and `comparison.json` for side-by-side runs.
//!
//! `steps.csv` holds only values that are a pure function of the config, so
//! reruns produce identical bytes. Timings go to `summary.json`.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use super::cost::FlopCount;
use super::experiment::{run_experiment, TrainLog};
use crate::error::{Error, Result};

pub const STEPS_FILE: &str = "steps.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// `steps.csv` contents.
pub fn steps_csv(log: &TrainLog) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let layers = log.steps.first().map_or(0, |s| s.activation_bytes.len());
    let mut header: Vec<String> = [
        "step",
        "loss",
        "lr",
        "flops_forward",
        "flops_backward_input",
        "flops_backward_weight",
        "activation_bytes",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..layers).map(|l| format!("activation_bytes_layer{l}")));
    w.write_record(&header).map_err(csv_error)?;
    for s in &log.steps {
        let mut row = vec![
            s.step.to_string(),
            s.loss.to_string(),
            s.lr.to_string(),
            s.flops.forward.to_string(),
            s.flops.backward_input.to_string(),
            s.flops.backward_weight.to_string(),
            s.activation_bytes.iter().sum::<usize>().to_string(),
        ];
        row.extend(s.activation_bytes.iter().map(|b| b.to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    log: &'a TrainLog,
    total_flops: FlopCount,
    peak_activation_bytes: usize,
    wall_time_seconds: f64,
}

pub fn summary_json(cfg: &ExperimentConfig, log: &TrainLog) -> Result<String> {
    let summary = Summary {
        config: cfg,
        log,
        total_flops: log.total_flops(),
        peak_activation_bytes: log.peak_activation_bytes(),
        wall_time_seconds: log.wall_time_seconds(),
    };
    serde_json::to_string_pretty(&summary).map_err(|e| Error::Invariant(format!("summary: {e}")))
}

/// Writes `steps.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, log: &TrainLog) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(STEPS_FILE), steps_csv(log)?)?;
    fs::write(dir.join(SUMMARY_FILE), summary_json(cfg, log)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub method: Method,
    pub rank: usize,
    /// Held-out loss after the last step.
    pub final_loss: f64,
    pub final_train_loss: f64,
    pub total_flops: u64,
    pub peak_activation_bytes: usize,
    pub optimizer_state_bytes: usize,
    pub weight_bytes: usize,
    pub trainable_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invariant(format!("comparison: {e}")))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(COMPARISON_CSV), self.to_csv()?)?;
        fs::write(dir.join(COMPARISON_JSON), self.to_json()?)?;
        Ok(())
    }
}

fn row(label: String, cfg: &ExperimentConfig, log: &TrainLog) -> ComparisonRow {
    ComparisonRow {
        label,
        method: cfg.method,
        rank: cfg.rank,
        final_loss: log.final_eval.loss,
        final_train_loss: log.steps.last().map_or(f64::NAN, |s| s.loss),
        total_flops: log.total_flops().total(),
        peak_activation_bytes: log.peak_activation_bytes(),
        optimizer_state_bytes: log.optimizer_state_bytes,
        weight_bytes: log.weight_bytes,
        trainable_params: log.trainable_params,
    }
}

/// Runs each `(label, config)` and tabulates the results. All configs must
/// share the model, task and seeds so that rows differ only in the method.
pub fn compare_methods(configs: &[(String, ExperimentConfig)]) -> Result<(Comparison, Vec<TrainLog>)> {
    let Some((_, first)) = configs.first() else {
        return Err(Error::Argument("nothing to compare".into()));
    };
    for (label, cfg) in configs {
        let same = cfg.model == first.model
            && cfg.task == first.task
            && cfg.data_seed == first.data_seed
            && cfg.init_seed == first.init_seed;
        if !same {
            return Err(Error::config(
                "model",
                format!("`{label}` differs from `{}` in model, task or seeds", configs[0].0),
            ));
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    let mut logs = Vec::with_capacity(configs.len());
    for (label, cfg) in configs {
        let log = run_experiment(cfg)?;
        rows.push(row(label.clone(), cfg, &log));
        logs.push(log);
    }
    Ok((Comparison { rows }, logs))
}
