//! Command-line front end: synthesize policies, evaluate saved ones from
//! the observer's side, roll them out, and export programs for external
//! solvers.
//!
//! Exit codes: 0 success, 2 bad input, 3 the obligations admit no policy at
//! all, 4 the solver gave up before reaching a verdict.

use clap::{Args, Parser, Subcommand};
use specveil::error::{EvalError, SolveError, SynthError};
use specveil::synth::{assemble_approx, assemble_exact, Backend, SynthesisResult};
use specveil::{eval, Mdp, Policy, ProblemInstance, SpecSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "specveil",
    version,
    about = "Policy synthesis that completes a hidden task while keeping an observer guessing"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a policy for a model and a formula set.
    Synth(SynthArgs),
    /// Evaluate a saved policy exactly, as the observer would.
    Check(CheckArgs),
    /// Roll a saved policy out and compare the empirical record against
    /// the exact probabilities.
    Simulate(SimulateArgs),
    /// Assemble the feasibility program at a fixed entropy level and print
    /// the solver-exchange JSON.
    ExportProgram(ExportArgs),
}

#[derive(Args)]
struct ProblemArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Formula set, one per line, the ground truth marked with `*`.
    #[arg(long)]
    specs: PathBuf,
    /// Required satisfaction probability of the ground truth.
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    /// Probability at which a formula counts as a candidate.
    #[arg(long, default_value_t = 0.8)]
    beta: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// exact: track every formula automaton. approx: bound satisfaction
    /// through per-position marginals on the stage expansion alone.
    #[arg(long, default_value = "exact", value_parser = ["exact", "approx"])]
    method: String,
    /// Termination width of the entropy level search.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// `builtin`, or `external:<path>` for a solver process that reads the
    /// program JSON on stdin and answers {"feasible":., "values":[..]}.
    #[arg(long, default_value = "builtin")]
    backend: String,
    /// Write the synthesis report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the synthesized policy (JSON).
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Policy file produced by `synth --policy`.
    #[arg(long)]
    policy: PathBuf,
    /// Write the observer report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Policy file produced by `synth --policy`.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    /// Root seed; the run is reproducible given the same seed and trials.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the simulation outcome (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the per-formula table (TSV).
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "exact", value_parser = ["exact", "approx"])]
    method: String,
    /// Entropy level baked into the exported feasibility question.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// Anything that can stop a run, tagged with its exit code.
enum CliError {
    Input(String),
    Infeasible,
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Infeasible => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Solver(m) => f.write_str(m),
            CliError::Infeasible => {
                f.write_str("the obligations admit no policy at any entropy level")
            }
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Solve(SolveError::InfeasibleAtZero) => CliError::Infeasible,
            SynthError::Solve(inner) => CliError::Solver(inner.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth(args) => synth(args),
        Cmd::Check(args) => check(args),
        Cmd::Simulate(args) => simulate(args),
        Cmd::ExportProgram(args) => export_program(args),
    }
}

fn load_problem(args: &ProblemArgs) -> Result<(Mdp, ProblemInstance), CliError> {
    let mdp = Mdp::from_path(&args.model)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.model.display())))?;
    let set = SpecSet::from_path(&args.specs)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.specs.display())))?;
    let instance =
        ProblemInstance::new(set, args.gamma, args.beta).map_err(|e| CliError::Input(e.to_string()))?;
    Ok((mdp, instance))
}

fn parse_backend(text: &str) -> Result<Backend, CliError> {
    if text == "builtin" {
        return Ok(Backend::Builtin);
    }
    match text.split_once(':') {
        Some(("external", path)) if !path.is_empty() => Ok(Backend::External(path.into())),
        _ => Err(CliError::Input(format!(
            "backend must be `builtin` or `external:<path>`, got `{text}`"
        ))),
    }
}

fn synth(args: SynthArgs) -> Result<(), CliError> {
    let (mdp, instance) = load_problem(&args.problem)?;
    let backend = parse_backend(&args.backend)?;
    let started = Instant::now();
    let result = match args.method.as_str() {
        "exact" => specveil::synthesize_exact(&mdp, &instance, args.epsilon, &backend)?,
        _ => specveil::synthesize_approx(&mdp, &instance, args.epsilon, &backend)?,
    };
    let wall = started.elapsed();

    print!("{}", summary(&result));
    println!("wall: {:.2}s", wall.as_secs_f64());

    if let Some(path) = &args.report {
        std::fs::write(path, result.report_json())?;
        println!("report: {}", path.display());
    }
    if let Some(path) = &args.policy {
        result.policy.save(path)?;
        println!("policy: {}", path.display());
    }
    Ok(())
}

/// Per-formula table plus the headline numbers; the wall clock is printed
/// by the caller so reports stay reproducible.
fn summary(result: &SynthesisResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "method: {}    theta: {:.6}    entropy: {:.6} bits",
        result.method, result.theta, result.entropy_bits
    );
    let _ = writeln!(
        out,
        "gamma: {}    beta: {}    epsilon: {:.1e}",
        result.gamma, result.beta, result.epsilon
    );
    let _ = writeln!(
        out,
        "candidates: {} of {}",
        result.candidate_set.len(),
        result.per_spec.len()
    );
    let width = result
        .per_spec
        .iter()
        .map(|r| r.formula.len())
        .max()
        .unwrap_or(7)
        .max(7);
    let _ = writeln!(
        out,
        "  #  {:width$}  {:>9}  {:>9}  cand  {:>9}",
        "formula", "mu", "nu", "actual"
    );
    for (i, r) in result.per_spec.iter().enumerate() {
        let actual = match r.actual {
            Some(p) => format!("{p:>9.6}"),
            None => format!("{:>9}", "-"),
        };
        let _ = writeln!(
            out,
            "  {i}  {:width$}  {:>9.6}  {:>9.6}  {}  {actual}",
            r.formula,
            r.mu,
            r.nu,
            if r.candidate { "yes " } else { "no  " },
        );
    }
    let _ = writeln!(
        out,
        "program: {} vars, {} rows, {} binaries, {} flow rows",
        result.program.vars, result.program.rows, result.program.binaries, result.program.flow_rows
    );
    let _ = writeln!(
        out,
        "solver: {} bisection steps, {} probes, {} inner iterations",
        result.solver.bisect_iterations, result.solver.probes, result.solver.inner_iterations
    );
    out
}

fn check(args: CheckArgs) -> Result<(), CliError> {
    let (mdp, instance) = load_problem(&args.problem)?;
    let policy = Policy::from_path(&args.policy)?;
    let report = eval::check(&mdp, &policy, &instance.specs.formulas, instance.beta)?;
    println!(
        "entropy: {:.6} bits    candidates: {} of {}",
        report.entropy_bits,
        report.candidates.len(),
        report.names.len()
    );
    for i in 0..report.names.len() {
        println!(
            "  {i}  {}  p={:.6}  {}",
            report.names[i],
            report.sat_probs[i],
            if report.candidates.contains(&i) {
                "candidate"
            } else {
                "ruled out"
            }
        );
    }
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json())?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let (mdp, instance) = load_problem(&args.problem)?;
    let policy = Policy::from_path(&args.policy)?;
    let started = Instant::now();
    let outcome = eval::simulate(
        &mdp,
        &policy,
        &instance.specs.formulas,
        instance.beta,
        args.trials,
        args.seed,
    )?;
    let wall = started.elapsed();
    println!(
        "trials: {}    seed: {}    entropy: {:.6} bits",
        outcome.trials, args.seed, outcome.report.entropy_bits
    );
    for i in 0..outcome.report.names.len() {
        println!(
            "  {i}  {}  exact={:.6}  empirical={:.6} (+/-{:.6})",
            outcome.report.names[i],
            outcome.exact[i],
            outcome.report.sat_probs[i],
            outcome.half_widths[i],
        );
    }
    println!("wall: {:.2}s", wall.as_secs_f64());
    if let Some(path) = &args.report {
        std::fs::write(path, outcome.to_json())?;
        println!("report: {}", path.display());
    }
    if let Some(path) = &args.tsv {
        std::fs::write(path, outcome.tsv())?;
        println!("tsv: {}", path.display());
    }
    Ok(())
}

fn export_program(args: ExportArgs) -> Result<(), CliError> {
    let (mdp, instance) = load_problem(&args.problem)?;
    let (program, _, _) = match args.method.as_str() {
        "exact" => assemble_exact(&mdp, &instance)?,
        _ => assemble_approx(&mdp, &instance)?,
    };
    print!("{}", program.export_json(args.theta));
    Ok(())
}
