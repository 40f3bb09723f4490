//! Machine-readable run reports and the aggregated plot data.

use std::collections::BTreeMap;
use std::io::Write;

use lp_irls::SolverError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    LowPrecision,
    Refinement,
    SmallP,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::LowPrecision => "low_precision",
            SolverKind::Refinement => "refinement",
            SolverKind::SmallP => "small_p",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Primal,
    Certificate,
    Error,
}

/// One solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: SolverKind,
    pub p: f64,
    pub epsilon: f64,
    /// Decision variables.
    pub n: usize,
    /// Objective rows.
    pub d: usize,
    pub linear_solves: usize,
    pub residual_calls: usize,
    pub wall_time_ms: f64,
    /// `||Nx - v||_p`; absent when the run failed.
    pub objective: Option<f64>,
    pub outcome: Outcome,
    pub seed: u64,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary of the reports sharing one `(solver, p, n)` key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub solver: SolverKind,
    pub p: f64,
    pub n: usize,
    pub runs: usize,
    pub mean_iters: f64,
    pub std_iters: f64,
    pub mean_time_ms: f64,
    pub std_time_ms: f64,
}

pub fn plot_rows(reports: &[SolveReport]) -> Result<Vec<PlotRow>, SolverError> {
    if reports.is_empty() {
        return Err(SolverError::EmptyInput);
    }
    // p > 0, so the bit pattern orders like the value.
    let mut groups: BTreeMap<(SolverKind, u64, usize), Vec<&SolveReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.solver, r.p.to_bits(), r.n)).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((solver, p, n), rs)| {
            let iters: Vec<f64> = rs.iter().map(|r| r.linear_solves as f64).collect();
            let times: Vec<f64> = rs.iter().map(|r| r.wall_time_ms).collect();
            let (mean_iters, std_iters) = mean_std(&iters);
            let (mean_time_ms, std_time_ms) = mean_std(&times);
            PlotRow { solver, p: f64::from_bits(p), n, runs: rs.len(), mean_iters, std_iters, mean_time_ms, std_time_ms }
        })
        .collect())
}

/// CSV of [`PlotRow`]s: the data behind iteration-count and time plots.
pub fn emit_plot_data(reports: &[SolveReport]) -> Result<String, SolverError> {
    let rows = plot_rows(reports)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(|e| SolverError::InvalidInput(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| SolverError::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

/// Writes reports; a CSV header is emitted only when `header` is set.
pub fn write_reports<W: Write>(out: W, reports: &[SolveReport], format: Format, header: bool) -> std::io::Result<()> {
    match format {
        Format::Jsonl => {
            let mut out = out;
            for r in reports {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()
        }
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
            for r in reports {
                w.serialize(r)?;
            }
            w.flush()
        }
    }
}
