//! The operator-facing workflows behind the `sosd` command line: dataset
//! generation, training runs with checkpoints, evaluation, the ablation
//! protocol and visual dumps.

mod ablate;
mod eval;
mod run;
mod spec;

pub use ablate::{cmd_ablate, text_table, AblationCheck, AblationReport, AblationRow, CellResult, MetricSummary};
pub use eval::{cmd_eval, evaluate, predict, EvalOptions, EvalReport, MetricConventions, Prediction};
pub use run::{cmd_dump, cmd_gen_data, cmd_train, TrainOutcome, TrainRequest};
pub use spec::{ExperimentSpec, RunVariant};

/// Environment variable bounding worker threads for ablation cells.
pub const THREADS_ENV: &str = "SOSD_THREADS";

/// Worker count from [`THREADS_ENV`], defaulting to one.
pub fn thread_count() -> crate::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(crate::Error::Validation(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
    }
}
