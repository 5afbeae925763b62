//! Experiment runner and cost models: configuration, synthetic data, an MLP
//! that trains under any of the four regimes, analytical FLOP and memory
//! accounting, and the least-squares descent verifier.

pub mod config;
pub mod cost;
pub mod data;
pub mod experiment;
pub mod model;
pub mod quadratic;
pub mod report;

pub use config::{ExperimentConfig, Loss, Method, ModelSpec, Nonlinearity, PretrainConfig, TaskConfig};
pub use cost::{
    activation_law_bytes, flop_linear, layer_memory, memory_report, FlopCount, LayerMemory, MemoryReport,
};
pub use experiment::{run_experiment, EvalResult, StepRecord, TrainLog, Trainer};
pub use quadratic::{descent_check, lipschitz_of_quadratic, DescentStep, QuadraticProblem};
pub use report::{compare_methods, write_run, Comparison, ComparisonRow};
