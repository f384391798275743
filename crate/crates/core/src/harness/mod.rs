//! End-to-end runner and evaluator.

pub mod engine;
pub mod eval;
pub mod loaders;
pub mod run;

pub use engine::{
    trace_file_name, Backends, Engine, EngineError, FallbackReason, FallbackStage, StageTimings,
    Trace,
};
pub use eval::{
    breakdown, evaluate, score, BreakdownRow, BreakdownTable, EvalError, EvalReport, GroupStats,
    Scoring,
};
pub use loaders::{load_dataset, DatasetFormat};
pub use run::{config_hash, run_eval, write_outputs, Manifest, RunOptions, RunOutput};
