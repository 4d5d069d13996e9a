//! Command-line front end.
//!
//! Every command writes one result JSON document (to `--out`, or stdout) and a
//! single summary line on stderr. Exit codes: 0 converged, 1 input error,
//! 2 iteration cap reached, 3 solver failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Dimension;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::losses::{
    divergence_report, gradient_from_potentials, limit_probe, limit_rows_to_csv, ot_loss_problem,
};
use crate::measures::{
    build_cost, load_cost_file, load_measure_file, CostKind, CostMatrix, DiscreteMeasure,
};
use crate::multimarginal::{
    barycenter_extract, build_barycenter_cost, build_pairwise_cost, mm_dual_value,
    mm_marginal_errors, mm_primal_value, mm_recover_plan, mm_solve, MMCoupling, MMProblem,
    MASS_FLOOR,
};
use crate::regularizers::{make_regularizer, Regularizer};
use crate::sinkhorn::{recover_plan, Coupling, Problem, SolveReport, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Environment variable holding the worker count (0 or unset = automatic).
pub const THREADS_VAR: &str = "PHIOT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "phiot",
    version,
    about = "Regularized optimal transport solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one transport problem and report potentials and certificates.
    Solve(Common),
    /// Regularized transport loss only.
    Loss(Common),
    /// Debiased divergence between two measures.
    Divergence(Common),
    /// Gradient of the loss with respect to both weight vectors.
    Grad(Common),
    /// Loss, divergence and plan statistics along an eps ladder.
    Limits(Common),
    /// Multi-marginal problem with pairwise ground cost.
    MmSolve(Common),
    /// Barycenter of several measures.
    Barycenter(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CostArg {
    Sqeuclidean,
    Euclidean,
    Pnorm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegArg {
    Shannon,
    Quadratic,
    Tsallis,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    mu: Option<PathBuf>,
    #[arg(long)]
    nu: Option<PathBuf>,
    /// Marginal measure files, one flag per marginal.
    #[arg(long = "marginals")]
    marginals: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "sqeuclidean")]
    cost_kind: CostArg,
    /// Exponent for `--cost-kind pnorm`.
    #[arg(long)]
    p: Option<f64>,
    /// Explicit cost matrix, overriding `--cost-kind`.
    #[arg(long)]
    cost_csv: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eps_ladder: Vec<f64>,
    #[arg(long, value_enum, default_value = "shannon")]
    reg: RegArg,
    #[arg(long)]
    tsallis_p: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Write the plan as CSV next to the result file.
    #[arg(long)]
    store_plan: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Barycenter weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
}

/// What a command produced.
struct Outcome {
    result: Map<String, Value>,
    converged: bool,
    summary: String,
    artifacts: Vec<(&'static str, String)>,
}

impl Common {
    fn measure(path: &Option<PathBuf>, flag: &str) -> Result<DiscreteMeasure> {
        let path = path
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter(format!("missing --{flag}")))?;
        load_measure_file(path).map_err(|e| with_path(e, path))
    }

    fn pair(&self) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
        Ok((
            Self::measure(&self.mu, "mu")?,
            Self::measure(&self.nu, "nu")?,
        ))
    }

    fn marginals(&self) -> Result<Vec<DiscreteMeasure>> {
        if self.marginals.len() < 2 {
            return Err(Error::InvalidParameter(
                "need at least two --marginals".into(),
            ));
        }
        self.marginals
            .iter()
            .map(|p| load_measure_file(p).map_err(|e| with_path(e, p)))
            .collect()
    }

    fn eps(&self) -> Result<f64> {
        match self.eps {
            Some(e) if e > 0.0 && e.is_finite() => Ok(e),
            Some(e) => Err(Error::InvalidParameter(format!(
                "eps must be positive, got {e}"
            ))),
            None => Err(Error::InvalidParameter("missing --eps".into())),
        }
    }

    fn reg(&self) -> Result<Regularizer> {
        let name = match self.reg {
            RegArg::Shannon => "shannon",
            RegArg::Quadratic => "quadratic",
            RegArg::Tsallis => "tsallis",
        };
        make_regularizer(name, self.tsallis_p)
    }

    fn cost_kind(&self) -> Result<CostKind> {
        let kind = match self.cost_kind {
            CostArg::Sqeuclidean => CostKind::SqEuclidean,
            CostArg::Euclidean => CostKind::Euclidean,
            CostArg::Pnorm => CostKind::PNorm(
                self.p
                    .ok_or_else(|| Error::InvalidParameter("--cost-kind pnorm needs --p".into()))?,
            ),
        };
        kind.validate()?;
        Ok(kind)
    }

    fn cost(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<CostMatrix> {
        match &self.cost_csv {
            Some(path) => load_cost_file(path, mu.len(), nu.len()).map_err(|e| with_path(e, path)),
            None => build_cost(mu, nu, self.cost_kind()?),
        }
    }

    fn no_cost_csv(&self, command: &str) -> Result<()> {
        if self.cost_csv.is_some() {
            return Err(Error::InvalidParameter(format!(
                "--cost-csv is not supported by {command}; use --cost-kind"
            )));
        }
        Ok(())
    }

    fn config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            marginal_tol: self.tol,
            max_iter: self.max_iter,
            store_plan: self.store_plan,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        if self.store_plan && self.out.is_none() {
            return Err(Error::InvalidParameter("--store-plan needs --out".into()));
        }
        Ok(cfg)
    }

    fn problem(&self) -> Result<(Problem, SolverConfig)> {
        let (mu, nu) = self.pair()?;
        let cost = self.cost(&mu, &nu)?;
        let problem = Problem::new(mu, nu, cost, self.eps()?, self.reg()?)?;
        Ok((problem, self.config()?))
    }

    fn header(&self, command: &str) -> Result<Map<String, Value>> {
        let reg = self.reg()?;
        let mut m = Map::new();
        m.insert("command".into(), json!(command));
        m.insert("regularizer".into(), json!(reg.name()));
        if let Some(p) = self
            .tsallis_p
            .filter(|_| matches!(self.reg, RegArg::Tsallis))
        {
            m.insert("tsallis_p".into(), json!(p));
        }
        if let Some(e) = self.eps {
            m.insert("eps".into(), json!(e));
        }
        m.insert("tol".into(), json!(self.tol));
        m.insert("max_iter".into(), json!(self.max_iter));
        Ok(m)
    }
}

fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io(e) => Error::InvalidParameter(format!("{}: {e}", path.display())),
        Error::InvalidMeasure(msg) => Error::InvalidMeasure(format!("{}: {msg}", path.display())),
        Error::InvalidCost(msg) => Error::InvalidCost(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn report_fields(m: &mut Map<String, Value>, report: &SolveReport) -> Result<()> {
    m.insert("iterations".into(), json!(report.iterations));
    m.insert("converged".into(), json!(report.converged));
    m.insert(
        "stop_reason".into(),
        serde_json::to_value(report.stop_reason)?,
    );
    m.insert(
        "marginal_errors".into(),
        json!(report.final_marginal_errors()),
    );
    m.insert("dual_values".into(), json!(report.dual_values));
    m.insert("shifts".into(), json!(report.shifts));
    Ok(())
}

fn matrix_csv(plan: &Coupling) -> String {
    let mut out = String::new();
    for row in plan.masses.rows() {
        let cells: Vec<String> = row.iter().map(|g| format!("{g:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn tensor_csv(plan: &MMCoupling) -> String {
    let n = plan.masses.ndim();
    let mut out: Vec<String> = (1..=n).map(|k| format!("i{k}")).collect();
    out.push("mass".into());
    let mut text = out.join(",");
    text.push('\n');
    for (idx, g) in plan.masses.indexed_iter() {
        for a in idx.slice() {
            text.push_str(&format!("{a},"));
        }
        text.push_str(&format!("{g:.16e}\n"));
    }
    text
}

fn measure_value(m: &DiscreteMeasure) -> Result<Value> {
    Ok(serde_json::from_str(&m.to_json_string()?)?)
}

fn two_marginal(args: &Common, command: &str) -> Result<Outcome> {
    let (problem, cfg) = args.problem()?;
    let loss = ot_loss_problem(&problem, &cfg)?;
    let mut m = args.header(command)?;
    m.insert("value".into(), json!(loss.value));
    m.insert("dual_value".into(), json!(loss.dual_value));
    m.insert("primal_value".into(), json!(loss.primal_value));
    m.insert("gap".into(), json!(loss.gap));
    report_fields(&mut m, &loss.report)?;
    let mut artifacts = Vec::new();
    if command == "solve" {
        m.insert("potentials".into(), serde_json::to_value(&loss.potentials)?);
    }
    if command == "grad" {
        let g = gradient_from_potentials(&loss.potentials, &problem);
        m.insert("g_mu".into(), json!(g.g_mu));
        m.insert("g_nu".into(), json!(g.g_nu));
    }
    if cfg.store_plan {
        artifacts.push((
            "plan.csv",
            matrix_csv(&recover_plan(&loss.potentials, &problem)),
        ));
    }
    Ok(Outcome {
        summary: format!(
            "{command}: value={:.10e} gap={:.3e} iterations={} converged={}",
            loss.value, loss.gap, loss.report.iterations, loss.converged
        ),
        converged: loss.converged,
        result: m,
        artifacts,
    })
}

fn run_divergence(args: &Common) -> Result<Outcome> {
    args.no_cost_csv("divergence")?;
    let (mu, nu) = args.pair()?;
    let cfg = args.config()?;
    let d = divergence_report(
        &mu,
        &nu,
        &args.cost_kind()?,
        args.eps()?,
        &args.reg()?,
        &cfg,
    )?;
    let mut m = args.header("divergence")?;
    m.insert("value".into(), json!(d.value));
    m.insert("cross".into(), json!(d.cross));
    m.insert("self_mu".into(), json!(d.self_mu));
    m.insert("self_nu".into(), json!(d.self_nu));
    m.insert("converged".into(), json!(d.converged));
    Ok(Outcome {
        summary: format!(
            "divergence: value={:.10e} converged={}",
            d.value, d.converged
        ),
        converged: d.converged,
        result: m,
        artifacts: Vec::new(),
    })
}

fn run_limits(args: &Common) -> Result<Outcome> {
    args.no_cost_csv("limits")?;
    if args.eps_ladder.is_empty() {
        return Err(Error::InvalidParameter("missing --eps-ladder".into()));
    }
    let (mu, nu) = args.pair()?;
    let cfg = args.config()?;
    let rows = limit_probe(
        &mu,
        &nu,
        &args.cost_kind()?,
        &args.reg()?,
        &args.eps_ladder,
        &cfg,
    )?;
    let converged = rows.iter().all(|r| r.converged);
    let mut m = args.header("limits")?;
    m.insert("eps_ladder".into(), json!(args.eps_ladder));
    m.insert("rows".into(), serde_json::to_value(&rows)?);
    m.insert("converged".into(), json!(converged));
    Ok(Outcome {
        summary: format!("limits: {} rows converged={converged}", rows.len()),
        converged,
        result: m,
        artifacts: vec![("limits.csv", limit_rows_to_csv(&rows))],
    })
}

fn mm_common(
    args: &Common,
    command: &str,
    marginals: Vec<DiscreteMeasure>,
    cost: crate::multimarginal::CostTensor,
) -> Result<(Outcome, MMCoupling, Vec<DiscreteMeasure>)> {
    let cfg = args.config()?;
    let problem = MMProblem::new(marginals, cost, args.eps()?, args.reg()?)?;
    let (pot, report) = mm_solve(&problem, &cfg)?;
    let plan = mm_recover_plan(&pot, &problem);
    let dual = mm_dual_value(&pot, &problem);
    let primal = mm_primal_value(&plan, &problem);
    let mut m = args.header(command)?;
    m.insert("value".into(), json!(dual));
    m.insert("dual_value".into(), json!(dual));
    m.insert("primal_value".into(), json!(primal));
    m.insert("gap".into(), json!(primal - dual));
    report_fields(&mut m, &report)?;
    m.insert(
        "plan_marginal_errors".into(),
        json!(mm_marginal_errors(&plan, &problem)),
    );
    m.insert("potentials".into(), serde_json::to_value(&pot)?);
    let mut artifacts = Vec::new();
    if cfg.store_plan {
        artifacts.push(("plan.csv", tensor_csv(&plan)));
    }
    let outcome = Outcome {
        summary: format!(
            "{command}: value={dual:.10e} iterations={} converged={}",
            report.iterations, report.converged
        ),
        converged: report.converged,
        result: m,
        artifacts,
    };
    Ok((outcome, plan, problem.marginals))
}

fn run_mm(args: &Common) -> Result<Outcome> {
    args.no_cost_csv("mm-solve")?;
    let marginals = args.marginals()?;
    let cost = build_pairwise_cost(&marginals, args.cost_kind()?)?;
    Ok(mm_common(args, "mm-solve", marginals, cost)?.0)
}

fn run_barycenter(args: &Common) -> Result<Outcome> {
    args.no_cost_csv("barycenter")?;
    let marginals = args.marginals()?;
    let lambdas = if args.weights.is_empty() {
        vec![1.0 / marginals.len() as f64; marginals.len()]
    } else {
        args.weights.clone()
    };
    let cost = build_barycenter_cost(&marginals, &lambdas)?;
    let (mut outcome, plan, marginals) = mm_common(args, "barycenter", marginals, cost)?;
    let bary = barycenter_extract(&plan, &marginals, &lambdas, MASS_FLOOR)?;
    outcome.result.insert("weights".into(), json!(lambdas));
    outcome
        .result
        .insert("barycenter".into(), measure_value(&bary)?);
    outcome
        .artifacts
        .push(("barycenter.json", bary.to_json_string()? + "\n"));
    Ok(outcome)
}

fn dispatch(command: &Command) -> Result<Outcome> {
    match command {
        Command::Solve(a) => two_marginal(a, "solve"),
        Command::Loss(a) => two_marginal(a, "loss"),
        Command::Grad(a) => two_marginal(a, "grad"),
        Command::Divergence(a) => run_divergence(a),
        Command::Limits(a) => run_limits(a),
        Command::MmSolve(a) => run_mm(a),
        Command::Barycenter(a) => run_barycenter(a),
    }
}

fn common(command: &Command) -> &Common {
    match command {
        Command::Solve(a)
        | Command::Loss(a)
        | Command::Grad(a)
        | Command::Divergence(a)
        | Command::Limits(a)
        | Command::MmSolve(a)
        | Command::Barycenter(a) => a,
    }
}

/// `<dir>/<stem>.<suffix>` next to the result file.
pub fn sibling_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn write_outputs(args: &Common, outcome: Outcome, elapsed: f64) -> Result<()> {
    let mut result = outcome.result;
    result.insert("elapsed_seconds".into(), json!(elapsed));
    let text = serde_json::to_string_pretty(&Value::Object(result))? + "\n";
    match &args.out {
        Some(out) => {
            fs::write(out, text).map_err(|e| with_path(e.into(), out))?;
            for (suffix, body) in outcome.artifacts {
                let path = sibling_path(out, suffix);
                fs::write(&path, body).map_err(|e| with_path(e.into(), &path))?;
            }
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Error::InvalidParameter(format!("{THREADS_VAR} must be a count, got {raw:?}"))
    })?;
    if n > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::RootSolveFailure { .. } => EXIT_SOLVER,
        _ => EXIT_INPUT,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let msg = e.to_string();
            eprintln!(
                "error: {}",
                msg.lines()
                    .next()
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: ")
            );
            return EXIT_INPUT;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    let start = Instant::now();
    let outcome = match dispatch(&cli.command) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            return exit_code(&e);
        }
    };
    let converged = outcome.converged;
    let summary = outcome.summary.clone();
    let elapsed = start.elapsed().as_secs_f64();
    if let Err(e) = write_outputs(common(&cli.command), outcome, elapsed) {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    eprintln!("{summary} elapsed={elapsed:.3}s");
    if converged {
        EXIT_OK
    } else {
        EXIT_MAX_ITER
    }
}
