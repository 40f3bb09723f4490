//! Instance sources and solver dispatch.

use std::path::PathBuf;
use std::time::Instant;

use lp_irls::instances::{gen_random_graph, gen_random_matrix, load_csv, RandomGraphSpec, RandomMatrixSpec};
use lp_irls::low_precision::{l2p_minimization_with, L2pOptions};
use lp_irls::reductions::{refine_general, solve_small_p_general};
use lp_irls::{Instance, RefineOptions, Result, SolverError, StructuredLs};

use crate::report::{Outcome, SolveReport, SolverKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Matrix { rows: usize, cols: usize },
    Graph { nodes: usize, labeled: usize },
    Csv { path: PathBuf, target: String },
}

impl Source {
    /// Builds the instance; random sources draw from `seed`.
    pub fn instance(&self, p: f64, seed: u64) -> Result<Instance> {
        match self {
            Source::Matrix { rows, cols } => gen_random_matrix(&RandomMatrixSpec { rows: *rows, cols: *cols, seed }, p),
            Source::Graph { nodes, labeled } => Ok(gen_random_graph(&RandomGraphSpec::new(*nodes, *labeled, seed), p)?.instance),
            Source::Csv { path, target } => {
                let data = load_csv(path, target)?;
                if data.dropped > 0 {
                    log::warn!("dropped {} records with missing or non-numeric cells", data.dropped);
                }
                data.into_instance(p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Low,
    Refine,
    Auto,
}

impl SolverChoice {
    pub fn resolve(self, p: f64) -> Result<SolverKind> {
        match self {
            SolverChoice::Low => Ok(SolverKind::LowPrecision),
            SolverChoice::Refine => Ok(SolverKind::Refinement),
            SolverChoice::Auto if p > 1.0 && p < 2.0 => Ok(SolverKind::SmallP),
            SolverChoice::Auto if p >= 2.0 => Ok(SolverKind::Refinement),
            SolverChoice::Auto => Err(SolverError::InvalidInput(format!("no solver for p = {p}; need p > 1"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: Source,
    pub p: f64,
    pub epsilon: f64,
    pub solver: SolverChoice,
    pub seed: u64,
}

struct Solved {
    x: Vec<f64>,
    linear_solves: usize,
    residual_calls: usize,
}

fn solve(kind: SolverKind, inst: &Instance, eps: f64) -> Result<Solved> {
    match kind {
        SolverKind::LowPrecision => {
            if !(inst.p >= 2.0) {
                return Err(SolverError::InvalidInput(format!("low-precision solver needs p >= 2, got {}", inst.p)));
            }
            let mut oracle = StructuredLs::new(inst)?;
            let run = l2p_minimization_with(&mut oracle, eps, inst.p / 2.0, L2pOptions::default())?;
            Ok(Solved { x: run.point.params, linear_solves: run.linear_solves, residual_calls: run.sub_solver_calls })
        }
        SolverKind::Refinement => {
            let (x, report) = refine_general(inst, eps, RefineOptions::default())?;
            Ok(Solved { x, linear_solves: report.state.linear_solve_count, residual_calls: report.residual_calls })
        }
        SolverKind::SmallP => {
            let run = solve_small_p_general(inst, eps, RefineOptions::default())?;
            Ok(Solved { x: run.x, linear_solves: run.linear_solves, residual_calls: run.dual_report.residual_calls })
        }
    }
}

/// Runs one configuration; solver failures become `outcome = error` reports.
///
/// Only the solve itself is timed. Errors while building the instance or
/// resolving the solver are returned as `Err`.
pub fn run_once(cfg: &RunConfig) -> Result<SolveReport> {
    let kind = cfg.solver.resolve(cfg.p)?;
    let inst = cfg.source.instance(cfg.p, cfg.seed)?;
    let start = Instant::now();
    let result = solve(kind, &inst, cfg.epsilon);
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut report = SolveReport {
        solver: kind,
        p: cfg.p,
        epsilon: cfg.epsilon,
        n: inst.vars(),
        d: inst.n_mat.rows(),
        linear_solves: 0,
        residual_calls: 0,
        wall_time_ms,
        objective: None,
        outcome: Outcome::Error,
        seed: cfg.seed,
    };
    match result {
        Ok(s) => {
            report.objective = Some(inst.objective(&s.x));
            report.linear_solves = s.linear_solves;
            report.residual_calls = s.residual_calls;
            report.outcome = Outcome::Primal;
        }
        // Every guess up to the upper endpoint was certified infeasible.
        Err(SolverError::SearchCollapsed) => report.outcome = Outcome::Certificate,
        Err(e) => log::error!("{} solver failed on seed {}: {e}", kind.as_str(), cfg.seed),
    }
    Ok(report)
}

/// Process exit status for a batch: 1 on any error, else 2 on any certificate, else 0.
pub fn exit_status(reports: &[SolveReport]) -> i32 {
    if reports.iter().any(|r| r.outcome == Outcome::Error) {
        1
    } else if reports.iter().any(|r| r.outcome == Outcome::Certificate) {
        2
    } else {
        0
    }
}
