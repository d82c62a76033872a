//! End-to-end synthesis: assemble an occupancy program for a problem
//! instance, bisect the entropy level, reconcile the candidate set with the
//! witness probabilities, and extract the policy.
//!
//! Two assemblies share this driver. The exact method tracks every formula
//! automaton in the product state, so its satisfaction variables are exact
//! probabilities. The approximate method keeps only the stage and bounds
//! each satisfaction probability from below through per-position marginals;
//! it trades the automaton blow-up for binary selector blocks.

pub mod approx;
pub mod exact;

pub use approx::{assemble_approx, synthesize_approx};
pub use exact::{assemble_exact, synthesize_exact};

use crate::automata::product::ProductMdp;
use crate::error::{SolveError, SynthError};
use crate::optcore::bisect::{self, bisect_with, BisectionOutcome};
use crate::optcore::concave;
use crate::optcore::feas::{BranchSearch, FeasibilityResult};
use crate::policy::Policy;
use crate::program::{
    BackendAnswer, Op, ProductTriple, ProgramStats, SynthesisProgram, FEAS_TOL,
};
use crate::speclang::ProblemInstance;
use serde::Serialize;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

/// Who answers the per-level feasibility question.
#[derive(Debug, Clone)]
pub enum Backend {
    /// The built-in branch search over the column-generation master.
    Builtin,
    /// External process: the program JSON arrives on stdin, a
    /// `{"feasible": bool, "values": [...]}` reply is expected on stdout.
    /// Feasible claims are verified against the program before being
    /// trusted; infeasible claims are taken at face value.
    External(PathBuf),
}

/// One formula's row in the result.
#[derive(Debug, Clone, Serialize)]
pub struct SpecReport {
    pub formula: String,
    /// Satisfaction probability of the witness: exact for the exact
    /// method, a certified lower bound for the approximate one.
    pub mu: f64,
    /// Entropy term mu * x.
    pub nu: f64,
    pub candidate: bool,
    /// Exact satisfaction probability of the extracted policy; filled by
    /// the approximate method, where `mu` is only a bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverStats {
    /// Halving steps of the level search.
    pub bisect_iterations: usize,
    /// Feasibility questions asked, including the endpoint passes.
    pub probes: usize,
    /// Inner maximizer iterations summed over all probes.
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisResult {
    pub method: &'static str,
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Highest entropy level certified feasible, within epsilon of optimal.
    pub theta: f64,
    /// Entropy of the witness's normalized entropy-term vector.
    pub entropy_bits: f64,
    pub candidate_set: Vec<usize>,
    pub per_spec: Vec<SpecReport>,
    pub program: ProgramStats,
    pub solver: SolverStats,
    /// Every level probed, as (theta, feasible), in order.
    pub trace: Vec<(f64, bool)>,
    #[serde(skip)]
    pub policy: Policy,
    /// Witness in program-variable space.
    #[serde(skip)]
    pub witness: Vec<f64>,
}

impl SynthesisResult {
    /// The report file: everything above except the policy and raw witness,
    /// which ship separately. Identical runs serialize identically.
    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

pub(crate) struct SolveRun {
    pub outcome: BisectionOutcome,
    pub stats: SolverStats,
}

/// Bisects the entropy level over the given backend.
pub(crate) fn solve_program(
    program: &SynthesisProgram,
    backend: &Backend,
    eps: f64,
) -> Result<SolveRun, SolveError> {
    let (l, u) = bisect::default_bounds(program);
    let mut probes = 0usize;
    let mut inner = 0usize;
    let outcome = match backend {
        Backend::Builtin => {
            let mut search = BranchSearch::new(program)?;
            bisect_with(
                |theta, polish| {
                    probes += 1;
                    let r = search.check(theta, polish)?;
                    inner += r.iterations;
                    Ok(r)
                },
                l,
                u,
                eps,
            )?
        }
        Backend::External(path) => bisect_with(
            |theta, _polish| {
                probes += 1;
                let r = external_probe(path, program, theta)?;
                inner += r.iterations;
                Ok(r)
            },
            l,
            u,
            eps,
        )?,
    };
    let stats = SolverStats {
        bisect_iterations: outcome.iterations,
        probes,
        inner_iterations: inner,
    };
    Ok(SolveRun { outcome, stats })
}

fn check_once(
    program: &SynthesisProgram,
    backend: &Backend,
    theta: f64,
) -> Result<FeasibilityResult, SolveError> {
    match backend {
        Backend::Builtin => BranchSearch::new(program)?.check(theta, true),
        Backend::External(path) => external_probe(path, program, theta),
    }
}

/// The product envelope lets a witness keep a selector off while the
/// matching probability sits at or above the candidate threshold, which
/// would misstate the candidate set an observer actually faces. Re-solve
/// with selectors pinned to the set the probabilities imply; failing that,
/// steer the straddling probabilities strictly below the threshold.
pub(crate) fn reconcile_candidates(
    program: &SynthesisProgram,
    backend: &Backend,
    beta: f64,
    theta: f64,
    mut current: FeasibilityResult,
) -> Result<FeasibilityResult, SolveError> {
    let line = beta - FEAS_TOL;
    let n = program.x_vars.len();
    let mut demoted: Vec<usize> = Vec::new();
    for _ in 0..(2 * n + 2) {
        let w = current
            .witness
            .as_ref()
            .ok_or_else(|| SolveError::Witness("feasible result lost its witness".into()))?;
        let stray: Vec<usize> = (0..n)
            .filter(|&i| w[program.x_vars[i]] < 0.5 && w[program.mu_vars[i]] >= line)
            .collect();
        if stray.is_empty() {
            return Ok(current);
        }

        // Promote: pin every free selector to the value its probability
        // implies and ask again at the same level.
        let mut pinned = program.clone();
        for i in 0..n {
            let v = f64::from(w[program.mu_vars[i]] >= line);
            let def = &mut pinned.vars[program.x_vars[i]];
            if def.lo != def.hi {
                def.lo = v;
                def.hi = v;
            }
        }
        let promoted = check_once(&pinned, backend, theta)?;
        if promoted.feasible {
            current = promoted;
            continue;
        }

        // Demote: keep the witness selectors, force every probability that
        // has ever straddled the threshold strictly below it.
        demoted.extend(&stray);
        demoted.sort_unstable();
        demoted.dedup();
        let mut steered = program.clone();
        for i in 0..n {
            let v = f64::from(w[program.x_vars[i]] >= 0.5);
            let def = &mut steered.vars[program.x_vars[i]];
            if def.lo != def.hi {
                def.lo = v;
                def.hi = v;
            }
        }
        for &i in &demoted {
            steered.add_row(
                format!("steer_{i}"),
                vec![(program.mu_vars[i], 1.0)],
                Op::Le,
                beta - 2.0 * FEAS_TOL,
            );
        }
        let demoted_run = check_once(&steered, backend, theta)?;
        if !demoted_run.feasible {
            return Err(SolveError::Inconclusive {
                theta,
                reason: format!(
                    "candidate set cannot be reconciled: {} probabilities straddle the threshold",
                    stray.len()
                ),
            });
        }
        current = demoted_run;
    }
    Err(SolveError::Inconclusive {
        theta,
        reason: "candidate reconciliation did not settle".into(),
    })
}

/// Selector and entropy-term scaffolding shared by both assemblies: one
/// binary selector per formula (ground truth pinned on), the satisfaction
/// threshold on the ground truth, the candidate threshold per selector, and
/// the linearized entropy terms nu = mu * x.
pub(crate) fn add_candidate_rows(p: &mut SynthesisProgram, instance: &ProblemInstance) {
    let mus = p.mu_vars.clone();
    let gt = instance.specs.ground_truth;
    let x_vars: Vec<usize> = (0..mus.len())
        .map(|i| {
            let lo = f64::from(i == gt);
            p.add_var(format!("x_{i}"), lo, 1.0, true)
        })
        .collect();
    p.add_row(
        "satisfy_gt".into(),
        vec![(mus[gt], 1.0)],
        Op::Ge,
        instance.gamma,
    );
    let mut nu_vars = Vec::with_capacity(mus.len());
    for (i, (&mu, &x)) in mus.iter().zip(&x_vars).enumerate() {
        p.add_row(
            format!("candidate_{i}"),
            vec![(mu, 1.0), (x, -instance.beta)],
            Op::Ge,
            0.0,
        );
        let nu = p.add_var(format!("nu_{i}"), 0.0, 1.0, false);
        p.add_product_rows(&format!("nu_{i}"), nu, x, &[mu], 0.0, (0.0, 1.0));
        p.triples.push(ProductTriple { nu, mu, x });
        nu_vars.push(nu);
    }
    p.x_vars = x_vars;
    p.entropy_vars = nu_vars;
    p.ground_truth = gt;
}

/// Assembles the final result from a certified witness. The occupancy
/// variables are the first `states * actions` program variables, state
/// major, in both assemblies.
#[allow(clippy::too_many_arguments)]
pub(crate) fn package(
    method: &'static str,
    instance: &ProblemInstance,
    product: &ProductMdp,
    program: &SynthesisProgram,
    in_net: &[bool],
    final_result: FeasibilityResult,
    run: &SolveRun,
    eps: f64,
) -> Result<SynthesisResult, SolveError> {
    let witness = final_result
        .witness
        .ok_or_else(|| SolveError::Witness("feasible result lost its witness".into()))?;
    let na = product.action_count();
    let policy = Policy::from_occupancy(product, |s| in_net[s], |s, a| witness[s * na + a]);
    let nu_vals: Vec<f64> = program.entropy_vars.iter().map(|&v| witness[v]).collect();
    let per_spec: Vec<SpecReport> = instance
        .specs
        .formulas
        .iter()
        .enumerate()
        .map(|(i, f)| SpecReport {
            formula: f.to_string(),
            mu: witness[program.mu_vars[i]],
            nu: witness[program.entropy_vars[i]],
            candidate: witness[program.x_vars[i]] > 0.5,
            actual: None,
        })
        .collect();
    Ok(SynthesisResult {
        method,
        gamma: instance.gamma,
        beta: instance.beta,
        epsilon: eps,
        theta: run.outcome.theta,
        entropy_bits: concave::entropy_bits(&nu_vals),
        candidate_set: per_spec
            .iter()
            .enumerate()
            .filter(|(_, r)| r.candidate)
            .map(|(i, _)| i)
            .collect(),
        per_spec,
        program: program.stats(),
        solver: run.stats,
        trace: run.outcome.trace.clone(),
        policy,
        witness,
    })
}

/// Runs one level question through an external solver process.
fn external_probe(
    path: &PathBuf,
    program: &SynthesisProgram,
    theta: f64,
) -> Result<FeasibilityResult, SolveError> {
    let mut child = Command::new(path)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| SolveError::Backend(format!("spawn {}: {e}", path.display())))?;
    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        stdin
            .write_all(program.export_json(theta).as_bytes())
            .map_err(|e| SolveError::Backend(format!("write to backend: {e}")))?;
    }
    let out = child
        .wait_with_output()
        .map_err(|e| SolveError::Backend(format!("wait for backend: {e}")))?;
    if !out.status.success() {
        return Err(SolveError::Backend(format!(
            "backend exited with {}",
            out.status
        )));
    }
    let answer = BackendAnswer::parse(&String::from_utf8_lossy(&out.stdout))?;
    if !answer.feasible {
        return Ok(FeasibilityResult {
            feasible: false,
            witness: None,
            nu: Vec::new(),
            value: f64::NEG_INFINITY,
            gap: 0.0,
            iterations: 1,
            assignment: Vec::new(),
        });
    }
    let values = answer
        .values
        .ok_or_else(|| SolveError::Backend("feasible answer carries no values".into()))?;
    program.verify_witness(&values)?;
    let nu: Vec<f64> = program.entropy_vars.iter().map(|&v| values[v]).collect();
    let value = concave::gap_value(&nu, theta);
    if value < -FEAS_TOL {
        return Err(SolveError::Backend(format!(
            "witness claims level {theta} but certifies only gap {value:.3e}"
        )));
    }
    let assignment = program
        .binaries()
        .into_iter()
        .map(|v| (v, values[v].round()))
        .collect();
    Ok(FeasibilityResult {
        feasible: true,
        witness: Some(values),
        nu,
        value,
        gap: 0.0,
        iterations: 1,
        assignment,
    })
}

/// Audit shared by both synthesis paths: the reported entropy must certify
/// the returned level and the ground truth must clear its threshold.
pub(crate) fn audit_result(
    result: &SynthesisResult,
    instance: &ProblemInstance,
) -> Result<(), SynthError> {
    if result.entropy_bits < result.theta - FEAS_TOL {
        return Err(SolveError::Numerical {
            place: "result audit",
            msg: format!(
                "entropy {} fails the certified level {}",
                result.entropy_bits, result.theta
            ),
        }
        .into());
    }
    let gt = instance.specs.ground_truth;
    if result.per_spec[gt].mu < instance.gamma - FEAS_TOL {
        return Err(SolveError::Numerical {
            place: "result audit",
            msg: format!(
                "ground truth probability {} misses the target {}",
                result.per_spec[gt].mu, instance.gamma
            ),
        }
        .into());
    }
    if !result.per_spec[gt].candidate {
        return Err(SolveError::Numerical {
            place: "result audit",
            msg: "ground truth fell out of the candidate set".into(),
        }
        .into());
    }
    Ok(())
}
