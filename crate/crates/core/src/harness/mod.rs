//! Seeded multi-run experiments: problem construction, parallel execution,
//! aggregation into CSV traces, and JSON reports for the CLI.

mod problems;
mod report;
mod run;
mod spec;
mod trace;

pub use problems::{build_example1, build_example2, example2_spec, Problem, EXAMPLE2_ITERATIONS, MAX_FEATURE_RETRIES};
pub use report::{
    bound_inputs, bound_report, mixing_report, solve_report, AveragedBoundReport, BoundReport, CtdBoundReport,
    MixingSummary, SolveReport, TdBoundReport,
};
pub use run::{
    resolve_estimator, run_experiment, run_experiment_with, run_on_problem, AlgorithmTrace, Execution, RunOutcome,
    RunRecord, RunTrace,
};
pub use spec::{AlgorithmSpec, CheckpointSpec, ExperimentSpec, ProblemSpec, DEFAULT_DISCOUNT};
pub use trace::{runs_path, CsvTable};
