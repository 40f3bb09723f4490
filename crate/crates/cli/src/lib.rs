//! Benchmark harness for the lp-irls solvers: instance generation, solver
//! dispatch and JSON-lines / CSV reports.

pub mod report;
pub mod run;

pub use report::{emit_plot_data, Outcome, SolveReport, SolverKind};
pub use run::{exit_status, run_once, RunConfig, SolverChoice, Source};
