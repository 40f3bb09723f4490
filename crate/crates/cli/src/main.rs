use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lpirls_cli::report::{plot_rows, write_reports, Format};
use lpirls_cli::{emit_plot_data, exit_status, run_once, RunConfig, SolveReport, SolverChoice, Source};

#[derive(Parser)]
#[command(name = "lpirls", version, about = "lp-norm regression solvers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve generated or loaded instances, one report per repetition.
    Solve(Common),
    /// Sweep over p; prints a mean/stddev summary to stderr.
    Bench {
        /// Values of p, e.g. `p=2,4,8,16`.
        #[arg(long, value_parser = parse_sweep)]
        sweep: Sweep,
        /// Also write the grouped plot data as CSV.
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Gen {
    Matrix,
    Graph,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Low,
    #[value(alias = "refinement")]
    Refine,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, conflicts_with = "csv")]
    gen: Option<Gen>,
    #[arg(long, requires = "target")]
    csv: Option<PathBuf>,
    /// Response column of the CSV file.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = 500)]
    rows: usize,
    #[arg(long, default_value_t = 400)]
    cols: usize,
    #[arg(long, default_value_t = 500)]
    nodes: usize,
    #[arg(long, default_value_t = 10)]
    labeled: usize,
    #[arg(long, default_value_t = 8.0)]
    p: f64,
    #[arg(long, default_value_t = 1e-10)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    solver: SolverArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Repetition `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Append reports here instead of writing to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    format: FormatArg,
}

#[derive(Clone)]
struct Sweep(Vec<f64>);

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let list = s.strip_prefix("p=").ok_or_else(|| format!("expected p=<list>, got {s:?}"))?;
    let values: Vec<f64> = list
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad p value {v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if values.iter().any(|p| !p.is_finite()) {
        return Err("p values must be finite".into());
    }
    Ok(Sweep(values))
}

impl Common {
    fn source(&self) -> Source {
        match (&self.csv, &self.target) {
            (Some(path), Some(target)) => Source::Csv { path: path.clone(), target: target.clone() },
            _ => match self.gen.unwrap_or(Gen::Matrix) {
                Gen::Matrix => Source::Matrix { rows: self.rows, cols: self.cols },
                Gen::Graph => Source::Graph { nodes: self.nodes, labeled: self.labeled },
            },
        }
    }

    fn configs(&self, ps: &[f64]) -> Vec<RunConfig> {
        let solver = match self.solver {
            SolverArg::Low => SolverChoice::Low,
            SolverArg::Refine => SolverChoice::Refine,
            SolverArg::Auto => SolverChoice::Auto,
        };
        let source = self.source();
        ps.iter()
            .flat_map(|&p| {
                let source = source.clone();
                (0..self.reps as u64).map(move |rep| RunConfig {
                    source: source.clone(),
                    p,
                    epsilon: self.eps,
                    solver,
                    seed: self.seed.wrapping_add(rep),
                })
            })
            .collect()
    }

    fn format(&self) -> Format {
        match self.format {
            FormatArg::Jsonl => Format::Jsonl,
            FormatArg::Csv => Format::Csv,
        }
    }
}

/// Runs every configuration on a pool of worker threads; results keep input order.
fn run_all(configs: &[RunConfig]) -> lp_irls::Result<Vec<SolveReport>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<lp_irls::Result<SolveReport>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                let result = run_once(cfg);
                slots.lock().expect("worker panicked")[i] = Some(result);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every job ran")).collect()
}

fn emit(common: &Common, reports: &[SolveReport]) -> std::io::Result<()> {
    match &common.out {
        Some(path) => {
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            let header = file.metadata()?.len() == 0;
            write_reports(file, reports, common.format(), header)
        }
        None => write_reports(std::io::stdout().lock(), reports, common.format(), true),
    }
}

fn summary(reports: &[SolveReport]) -> lp_irls::Result<String> {
    let mut out = String::from("solver        p        n  runs  iters(mean ± sd)   time_ms(mean ± sd)\n");
    for row in plot_rows(reports)? {
        out.push_str(&format!(
            "{:<12} {:>4} {:>6} {:>5}  {:>8.2} ± {:<7.2}  {:>10.2} ± {:.2}\n",
            row.solver.as_str(),
            row.p,
            row.n,
            row.runs,
            row.mean_iters,
            row.std_iters,
            row.mean_time_ms,
            row.std_time_ms
        ));
    }
    Ok(out)
}

fn execute(command: Command) -> Result<i32, Box<dyn std::error::Error>> {
    let (common, ps, plot_data) = match command {
        Command::Solve(common) => {
            let p = common.p;
            (common, vec![p], None)
        }
        Command::Bench { sweep, plot_data, common } => (common, sweep.0, plot_data),
    };
    let reports = run_all(&common.configs(&ps))?;
    emit(&common, &reports)?;
    if let Some(path) = plot_data {
        std::fs::write(path, emit_plot_data(&reports)?)?;
    }
    if ps.len() > 1 || common.reps > 1 {
        eprint!("{}", summary(&reports)?);
    }
    Ok(exit_status(&reports))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(1)
        }
    }
}
