//! Command-line front end for training runs, method comparisons, the descent
//! verifier and the cost model.
//!
//! Failures print `{"error": {"kind": …, "message": …}}` on stderr. Exit codes:
//! 2 for invalid input, 3 for a violated invariant, 1 for anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use paca::harness::report::{write_run, COMPARISON_CSV};
use paca::harness::{
    compare_methods, descent_check, flop_linear, layer_memory, run_experiment, ExperimentConfig,
    Method, QuadraticProblem,
};
use paca::optim::OptimizerKind;
use paca::selection::{derive_seed, select_random};
use paca::tensor::DType;
use paca::{Error, Result};

#[derive(Parser)]
#[command(name = "paca", version, about = "Partial-connection fine-tuning laboratory")]
struct Cli {
    /// Base seed. For `train`/`compare` it replaces the data seed and derives
    /// the init and selection seeds; for `descent-check` it seeds the problem.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Element precision; overrides the config file.
    #[arg(long, global = true, value_enum)]
    dtype: Option<DTypeArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Full,
    Lora,
    Paca,
    Qpaca,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Full => Method::Full,
            MethodArg::Lora => Method::Lora,
            MethodArg::Paca => Method::Paca,
            MethodArg::Qpaca => Method::Qpaca,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration; writes steps.csv and summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train several configurations that share model, task and seeds.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partial gradient descent on a random least-squares problem, checking
    /// the descent inequality at every step.
    DescentCheck {
        /// d_in = d_out of the problem.
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        rank: usize,
        /// Step size as a fraction of 2/L, in (0, 1).
        #[arg(long)]
        eta_frac: f64,
        #[arg(long)]
        steps: usize,
        /// Number of data columns; defaults to `dim`.
        #[arg(long)]
        samples: Option<usize>,
        /// Optional per-step CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FLOPs and bytes of one linear layer for one training step.
    CostModel {
        #[arg(long)]
        d_in: usize,
        #[arg(long)]
        d_out: usize,
        #[arg(long)]
        batch: usize,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 64)]
        block_size: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
            if let Error::Config { field, .. } = &e {
                body["field"] = json!(field);
            }
            eprintln!("{}", json!({ "error": body }));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Argument(_) | Error::Decode(_) | Error::Shape { .. } | Error::Index { .. } => 2,
        Error::Invariant(_) | Error::NonFinite(_) => 3,
        Error::State(_) | Error::Io(_) => 1,
    }
}

fn load_config(path: &Path, seed: Option<u64>, dtype: Option<DTypeArg>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.data_seed = s;
        cfg.init_seed = derive_seed(s, 100);
        cfg.selection.seed = derive_seed(s, 200);
    }
    if let Some(d) = dtype {
        cfg.dtype = d.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(&config, cli.seed, cli.dtype)?;
            let log = run_experiment(&cfg)?;
            write_run(&out, &cfg, &log)?;
            Ok(json!({
                "method": cfg.method,
                "steps": log.steps.len(),
                "initial_eval_loss": log.initial_eval.loss,
                "final_eval_loss": log.final_eval.loss,
                "final_eval_accuracy": log.final_eval.accuracy,
                "out": out,
            }))
        }
        Command::Compare { configs, out } => {
            let labelled = configs
                .iter()
                .map(|p| {
                    let label = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                    Ok((label, load_config(p, cli.seed, cli.dtype)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (cmp, logs) = compare_methods(&labelled)?;
            cmp.write(&out)?;
            for ((label, cfg), log) in labelled.iter().zip(&logs) {
                write_run(&out.join(label), cfg, log)?;
            }
            Ok(json!({ "rows": cmp.rows, "table": out.join(COMPARISON_CSV) }))
        }
        Command::DescentCheck { dim, rank, eta_frac, steps, samples, out } => {
            if matches!(cli.dtype, Some(DTypeArg::F32)) {
                return Err(Error::Argument("descent-check runs in f64 only".into()));
            }
            if dim == 0 {
                return Err(Error::Argument("dim must be at least 1".into()));
            }
            let seed = cli.seed.unwrap_or(0);
            let problem = QuadraticProblem::random(dim, dim, samples.unwrap_or(dim), seed)?;
            let idx = select_random(dim, rank, derive_seed(seed, 1))?;
            let eta = eta_frac * 2.0 / problem.lipschitz();
            let trace = descent_check(&problem, &idx, eta, steps)?;
            if let Some(path) = out {
                let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
                for s in &trace {
                    w.serialize(s).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
                }
                w.flush()?;
            }
            let failures: Vec<usize> = trace.iter().filter(|s| !s.holds).map(|s| s.step).collect();
            if let Some(first) = failures.first() {
                return Err(Error::Invariant(format!(
                    "descent inequality failed at {} of {steps} steps (first: step {first})",
                    failures.len()
                )));
            }
            Ok(json!({
                "lipschitz": problem.lipschitz(),
                "eta": eta,
                "selected_columns": idx.indices(),
                "steps": steps,
                "all_hold": true,
                "initial_loss": trace.first().map(|s| s.f),
                "final_loss": trace.last().map(|s| s.f_next),
            }))
        }
        Command::CostModel { d_in, d_out, batch, rank, method, block_size } => {
            let method: Method = method.into();
            let dtype: DType = cli.dtype.map_or(DType::F64, Into::into);
            let flops = flop_linear(d_in, d_out, batch, method, rank)?;
            let full = flop_linear(d_in, d_out, batch, Method::Full, rank)?;
            let memory = layer_memory(method, (d_in, d_out), batch, rank, block_size, dtype, OptimizerKind::AdamW)?;
            Ok(json!({
                "method": method,
                "d_in": d_in,
                "d_out": d_out,
                "batch": batch,
                "rank": rank,
                "dtype": dtype,
                "flops": {
                    "forward": flops.forward,
                    "backward_input": flops.backward_input,
                    "backward_weight": flops.backward_weight,
                    "total": flops.total(),
                },
                "total_vs_full": flops.total() as f64 / full.total() as f64,
                "memory_adamw": memory,
            }))
        }
    }
}
