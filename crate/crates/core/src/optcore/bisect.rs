//! Halving search on the entropy level. The objective f1/f2 is
//! quasiconcave, so "is level theta attainable" is monotone in theta and
//! the optimum is found by bisecting between 0 and the support bound
//! log2(N), asking the feasibility engine at each midpoint.

use crate::error::SolveError;
use crate::optcore::feas::{BranchSearch, FeasibilityResult};
use crate::program::{SynthesisProgram, FEAS_TOL};

/// Running bounds of one bisection. The interval halves each step and the
/// best feasible probe is kept with the level it was certified at.
#[derive(Debug, Clone)]
pub struct BisectionState {
    pub lower: f64,
    pub upper: f64,
    pub eps: f64,
    pub iterations: usize,
    pub best: Option<(f64, FeasibilityResult)>,
}

impl BisectionState {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone)]
pub struct BisectionOutcome {
    /// Highest level certified feasible; within eps of the true optimum.
    pub theta: f64,
    /// Polished witness at that level.
    pub witness: FeasibilityResult,
    pub iterations: usize,
    /// Every probe as (level, feasible) in the order asked.
    pub trace: Vec<(f64, bool)>,
}

/// Natural bracket for a program: entropy of an N-term distribution cannot
/// exceed log2 N bits.
pub fn default_bounds(program: &SynthesisProgram) -> (f64, f64) {
    (0.0, (program.entropy_vars.len() as f64).log2())
}

/// Bisects with the built-in branch-and-pool feasibility engine.
pub fn bisect(
    program: &SynthesisProgram,
    l: f64,
    u: f64,
    eps: f64,
) -> Result<BisectionOutcome, SolveError> {
    if program.entropy_vars.is_empty() {
        return Err(SolveError::NoEntropyTerms);
    }
    let mut search = BranchSearch::new(program)?;
    bisect_with(|theta, polish| search.check(theta, polish), l, u, eps)
}

/// Bisects through any feasibility oracle. The oracle contract matches
/// [`BranchSearch::check`]: `(theta, polish)` to a certified verdict, where
/// a polished call must return the gap-maximizing witness.
pub fn bisect_with<F>(mut oracle: F, l: f64, u: f64, eps: f64) -> Result<BisectionOutcome, SolveError>
where
    F: FnMut(f64, bool) -> Result<FeasibilityResult, SolveError>,
{
    let bad = l > u || eps <= 0.0 || eps.is_nan() || l.is_nan();
    if bad || !l.is_finite() || !u.is_finite() {
        return Err(SolveError::BadBisection { l, u, eps });
    }

    let mut trace = Vec::new();
    let at_zero = oracle(l, false)?;
    trace.push((l, at_zero.feasible));
    if !at_zero.feasible {
        return Err(SolveError::InfeasibleAtZero);
    }
    let mut state = BisectionState {
        lower: l,
        upper: u,
        eps,
        iterations: 0,
        best: Some((l, at_zero)),
    };

    while state.upper - state.lower > eps {
        let theta = state.midpoint();
        let probe = oracle(theta, false)?;
        trace.push((theta, probe.feasible));
        if probe.feasible {
            state.lower = theta;
            state.best = Some((theta, probe));
        } else {
            state.upper = theta;
        }
        state.iterations += 1;
    }

    // Final pass at the certified level, driven to the entropy maximum so
    // the returned witness is the most-randomized one available there.
    let theta = state.lower;
    let polished = oracle(theta, true)?;
    trace.push((theta, polished.feasible));
    let witness = if polished.feasible {
        polished
    } else {
        // A quick probe certified this level; a polish pass losing it can
        // only be roundoff at the boundary. Fall back to the saved witness.
        state
            .best
            .take()
            .map(|(_, w)| w)
            .filter(|w| w.feasible)
            .ok_or(SolveError::InfeasibleAtZero)?
    };
    debug_assert!(witness.value >= -FEAS_TOL);

    Ok(BisectionOutcome {
        theta,
        witness,
        iterations: state.iterations,
        trace,
    })
}
