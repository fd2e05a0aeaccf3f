//! `eoc` command-line front end.
//!
//! Exit codes: 0 success, 1 solver/IO/invariant or convergence failure,
//! 2 usage error (bad flags, unknown problem, invalid configuration).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, bang_contradictions, Analysis, AnalysisOptions, ArcInterval, Certificate};
use crate::checks::{run_checks, toy_linear_problem, CheckKind};
use crate::integrate::{adjoint_with_gradient, integrate_forward, ControlGrid, CostateBundle, TimeGrid, TrajectoryBundle};
use crate::optimize::{solve, sweep, SolveOptions, SolveResult};
use crate::params::{SampleSet, SamplingMode};
use crate::problems::{problem, ProblemOverrides, ProblemSpec, Sense, PROBLEM_NAMES};

/// Everything a run needs; loaded from `--config` and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub k: usize,
    pub k_max: usize,
    pub solver: SolveOptions,
    pub analysis: AnalysisOptions,
    pub overrides: ProblemOverrides,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "fishing".into(),
            k: 20,
            k_max: 20,
            solver: SolveOptions::default(),
            analysis: AnalysisOptions::default(),
            overrides: ProblemOverrides::default(),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eoc", version, about = "Ensemble optimal control under parameter uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the sample-average problem for one k and analyze the extremal.
    Solve(RunArgs),
    /// Solve for k = 1..=k_max with warm starts and record relative distances.
    Sweep(RunArgs),
    /// Re-run the switching/singular analysis on a saved solve.json.
    Analyze {
        solve_json: PathBuf,
        /// Output directory (defaults to the directory of solve.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tol_psi: Option<f64>,
    },
    /// Run the invariant suite.
    Check {
        /// Restrict to one problem (default: all built-ins and the linear toy).
        #[arg(long)]
        problem: Option<String>,
        /// Run one group: jacobians, gradient, brackets or rk4.
        #[arg(long)]
        only: Option<String>,
    },
    /// List the built-in problems.
    Problems,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol_pg: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol_psi: Option<f64>,
    /// Sweep samples are prefixes of one stream (default).
    #[arg(long, conflicts_with = "independent")]
    nested: bool,
    /// Sweep samples are drawn afresh for every k.
    #[arg(long)]
    independent: bool,
}

enum CliError {
    Usage(String),
    Failure(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failure(e)
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Failure(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(command: Command) -> CliResult<i32> {
    match command {
        Command::Solve(args) => cmd_solve(&resolve_config(&args)?),
        Command::Sweep(args) => cmd_sweep(&resolve_config(&args)?),
        Command::Analyze { solve_json, out, tol_psi } => cmd_analyze(&solve_json, out, tol_psi),
        Command::Check { problem, only } => cmd_check(problem.as_deref(), only.as_deref()),
        Command::Problems => cmd_problems(),
    }
}

/// Loads the config file (if any), applies flag overrides and validates.
fn resolve_config(args: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(p) = &args.problem {
        cfg.problem = p.clone();
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(k) = args.k_max {
        cfg.k_max = k;
    }
    if let Some(s) = args.seed {
        cfg.solver.seed = s;
    }
    if let Some(n) = args.steps {
        cfg.solver.steps = n;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(t) = args.tol_pg {
        cfg.solver.tol_pg = t;
    }
    if let Some(m) = args.max_iters {
        cfg.solver.max_iters = m;
    }
    if let Some(t) = args.tol_psi {
        cfg.analysis.tol_psi = t;
    }
    if args.nested {
        cfg.solver.sampling = SamplingMode::Nested;
    }
    if args.independent {
        cfg.solver.sampling = SamplingMode::Independent;
    }
    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &RunConfig) -> CliResult<()> {
    problem(&cfg.problem, &cfg.overrides).map_err(usage)?;
    if cfg.k == 0 {
        return Err(usage("k must be ≥ 1"));
    }
    cfg.solver.validate().map_err(usage)?;
    cfg.analysis.validate().map_err(usage)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("cannot write {}", dir.join(name).display()))
}

/// Control as CSV: one row per interval, t = left end point.
pub fn write_control_csv<W: Write>(mut out: W, grid: &TimeGrid, control: &ControlGrid) -> std::io::Result<()> {
    let m = control.control_dim();
    let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=m).map(|i| format!("u_{i}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for j in 0..control.steps() {
        let row: Vec<String> = std::iter::once(grid.node(j).to_string())
            .chain(control.row(j).iter().map(|v| v.to_string()))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Persisted result of `eoc solve`; the key set is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub problem: String,
    pub config: RunConfig,
    /// Internal minimized cost J_k.
    pub cost: f64,
    /// Cost in the problem's own sense (revenue for maximization problems).
    pub objective: f64,
    pub sense: Sense,
    pub iterations: usize,
    pub converged: bool,
    /// Control interval left end points.
    pub t: Vec<f64>,
    /// One row per interval, one column per control component.
    pub control: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub projected_gradient_norm: f64,
    pub max_cost_increase: f64,
    pub steps: usize,
    pub seed: u64,
}

/// Contents of certificate.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub certificate: Certificate,
    pub arcs: Vec<ArcInterval>,
    pub bang_contradictions: usize,
    pub bang_nodes: usize,
    pub singular_arcs: Vec<SingularSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSummary {
    pub start: usize,
    pub end: usize,
    pub components: Vec<usize>,
    /// Per component, the largest |formula − control| away from the
    /// junction intervals.
    pub interior_mismatch: Vec<Option<f64>>,
    pub degenerate: Option<String>,
    pub error: Option<String>,
}

fn certificate_record(spec: &ProblemSpec, analysis: &Analysis, control: &ControlGrid, opts: &AnalysisOptions) -> CertificateRecord {
    let (bad, total) = bang_contradictions(&analysis.report, control, spec.system.bounds(), opts.bound_tol);
    CertificateRecord {
        certificate: analysis.certificate.clone(),
        arcs: analysis.report.intervals.clone(),
        bang_contradictions: bad,
        bang_nodes: total,
        singular_arcs: analysis
            .singular
            .iter()
            .map(|s| SingularSummary {
                start: s.arc.start,
                end: s.arc.end,
                components: s.components.clone(),
                interior_mismatch: s.interior_mismatch_by_component(control, opts.junction_margin),
                degenerate: s.degenerate.clone(),
                error: s.error.clone(),
            })
            .collect(),
    }
}

fn write_analysis_outputs(
    dir: &Path,
    spec: &ProblemSpec,
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    control: &ControlGrid,
    opts: &AnalysisOptions,
) -> anyhow::Result<CertificateRecord> {
    let analysis = analyze(&spec.system, traj, costate, control, opts).context("analysis failed")?;
    write_with(dir, "trajectories.csv", |w| traj.write_csv(w))?;
    write_with(dir, "costates.csv", |w| costate.write_csv(w))?;
    write_with(dir, "switching.csv", |w| analysis.write_switching_csv(w))?;
    write_with(dir, "singular.csv", |w| analysis.write_singular_csv(w, control))?;
    let record = certificate_record(spec, &analysis, control, opts);
    write_with(dir, "certificate.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &record).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    Ok(record)
}

fn print_certificate(record: &CertificateRecord) {
    let c = &record.certificate;
    println!(
        "certificate: mean Hamiltonian gap {:.3e} (max {:.3e}, scale {:.3e}), terminal residual {:e}, bang contradictions {}/{}",
        c.mean_gap, c.max_gap, c.gap_scale, c.terminal_residual, record.bang_contradictions, record.bang_nodes
    );
    for s in &record.singular_arcs {
        if let Some(e) = &s.error {
            println!("singular arc [{}, {}): {e}", s.start, s.end);
            continue;
        }
        let parts: Vec<String> = s
            .components
            .iter()
            .zip(&s.interior_mismatch)
            .map(|(c, d)| format!("u_{}: {}", c + 1, d.map_or("n/a".to_string(), |d| format!("{d:.3e}"))))
            .collect();
        println!("singular arc [{}, {}): formula vs control {}", s.start, s.end, parts.join(", "));
    }
}

pub fn solve_record(spec: &ProblemSpec, cfg: &RunConfig, result: &SolveResult) -> SolveRecord {
    SolveRecord {
        problem: spec.name.clone(),
        config: cfg.clone(),
        cost: result.cost,
        objective: spec.sense.objective(result.cost),
        sense: spec.sense,
        iterations: result.iterations,
        converged: result.converged,
        t: (0..result.control.steps()).map(|j| result.trajectory.grid.node(j)).collect(),
        control: result.control.rows(),
        diagnostics: Diagnostics {
            projected_gradient_norm: result.projected_gradient_norm,
            max_cost_increase: result.max_cost_increase,
            steps: cfg.solver.steps,
            seed: cfg.solver.seed,
        },
        samples: result.samples().samples.clone(),
    }
}

fn cmd_solve(cfg: &RunConfig) -> CliResult<i32> {
    let spec = problem(&cfg.problem, &cfg.overrides).map_err(usage)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    let result = solve(&spec.system, &spec.distribution, &spec.init, cfg.k, &cfg.solver).context("solve failed")?;
    let record = solve_record(&spec, cfg, &result);
    write_with(&cfg.out, "solve.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &record).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    println!(
        "{} k={} N={}: objective {} ({:?}), iterations {}, converged {}, projected gradient {:.3e}",
        spec.name,
        cfg.k,
        cfg.solver.steps,
        record.objective,
        spec.sense,
        result.iterations,
        result.converged,
        result.projected_gradient_norm
    );
    let cert = write_analysis_outputs(&cfg.out, &spec, &result.trajectory, &result.costate, &result.control, &cfg.analysis)?;
    print_certificate(&cert);
    if !result.converged {
        eprintln!("warning: not converged after {} iterations", result.iterations);
        return Ok(1);
    }
    Ok(0)
}

fn cmd_sweep(cfg: &RunConfig) -> CliResult<i32> {
    let spec = problem(&cfg.problem, &cfg.overrides).map_err(usage)?;
    if cfg.k_max < 2 {
        return Err(usage("k_max must be ≥ 2"));
    }
    let controls = cfg.out.join("controls");
    fs::create_dir_all(&controls).with_context(|| format!("cannot create {}", controls.display()))?;
    let outcome = sweep(&spec.system, &spec.distribution, &spec.init, cfg.k_max, &cfg.solver).context("sweep failed")?;
    let grid = TimeGrid::for_system(&spec.system, cfg.solver.steps).context("invalid grid")?;
    let sense = spec.sense;
    write_with(&cfg.out, "sweep.csv", |w| outcome.result.write_csv(w, |c| sense.objective(c)))?;
    for rec in &outcome.result.records {
        write_with(&controls, &format!("control_k{:03}.csv", rec.k), |w| write_control_csv(w, &grid, &rec.control))?;
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        println!(
            "k={:3} objective {:.6} rel_cost {} rel_control {} iterations {}{}",
            rec.k,
            sense.objective(rec.cost),
            opt(rec.rel_cost),
            opt(rec.rel_control),
            rec.iterations,
            if rec.converged { "" } else { " (not converged)" }
        );
    }
    if let Some((k, e)) = outcome.failure {
        eprintln!("error: sweep stopped at k={k}: {e}");
        return Ok(1);
    }
    Ok(if outcome.result.records.iter().all(|r| r.converged) { 0 } else { 1 })
}

fn cmd_analyze(path: &Path, out: Option<PathBuf>, tol_psi: Option<f64>) -> CliResult<i32> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let record: SolveRecord = serde_json::from_str(&text).map_err(|e| usage(format!("invalid solve.json {}: {e}", path.display())))?;
    let mut opts = record.config.analysis.clone();
    if let Some(t) = tol_psi {
        opts.tol_psi = t;
    }
    opts.validate().map_err(usage)?;
    let spec = problem(&record.problem, &record.config.overrides).map_err(usage)?;
    let control = ControlGrid::from_rows(&record.control).map_err(usage)?;
    let grid = TimeGrid::for_system(&spec.system, control.steps()).map_err(usage)?;
    let samples = SampleSet {
        k: record.samples.len(),
        samples: record.samples.clone(),
        seed: record.diagnostics.seed,
    };
    let dir = out.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let traj = integrate_forward(&spec.system, &spec.init, &samples, &control, &grid).context("forward integration failed")?;
    let (costate, _) = adjoint_with_gradient(&spec.system, &traj).context("adjoint integration failed")?;
    let cert = write_analysis_outputs(&dir, &spec, &traj, &costate, &control, &opts)?;
    print_certificate(&cert);
    Ok(0)
}

fn cmd_check(problem_name: Option<&str>, only: Option<&str>) -> CliResult<i32> {
    let only = only.map(|s| s.parse::<CheckKind>()).transpose().map_err(usage)?;
    let specs = match problem_name {
        Some("toy_linear") => vec![toy_linear_problem()],
        Some(name) => vec![problem(name, &ProblemOverrides::default()).map_err(usage)?],
        None => {
            let mut v: Vec<ProblemSpec> = PROBLEM_NAMES
                .iter()
                .map(|n| problem(n, &ProblemOverrides::default()))
                .collect::<crate::Result<_>>()
                .map_err(|e| CliError::Failure(e.into()))?;
            v.push(toy_linear_problem());
            v
        }
    };
    let outcomes = run_checks(&specs, only).context("check suite could not run")?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    for o in &outcomes {
        println!("{o}");
    }
    println!("{} checks, {} failed", outcomes.len(), failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

fn cmd_problems() -> CliResult<i32> {
    for name in PROBLEM_NAMES {
        let spec = problem(name, &ProblemOverrides::default()).map_err(|e| CliError::Failure(e.into()))?;
        let params: Vec<String> = spec.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!(
            "{name}: {} (n={}, m={}, T={}, {:?}; {})",
            spec.description,
            spec.system.state_dim(),
            spec.system.control_dim(),
            spec.system.t_final(),
            spec.sense,
            params.join(", ")
        );
    }
    Ok(0)
}
