//! Feasibility of an entropy level theta: search the binary assignments,
//! maximize the entropy gap over each induced polytope, and report a
//! certified verdict.
//!
//! Few binaries are enumerated outright. Past [`EXHAUSTIVE_LIMIT`] free
//! binaries the search switches to block alternation: pattern selectors are
//! relaxed, re-pinned to the argmax the current witness suggests, and the
//! loop repeats to a fixed point, with a per-block exhaustive fallback when
//! a witness fails the pattern-exactness check. Atom pools are cached per
//! assignment, so repeated probes of the same branch at different theta
//! values restart warm.

use std::collections::HashMap;

use crate::error::SolveError;
use crate::optcore::colgen::Master;
use crate::optcore::concave::{self, AtomPool, GapOutcome, GapVerdict};
use crate::program::{PatternKind, SynthesisProgram, FEAS_TOL};

/// Free binaries beyond this switch the search from enumeration to
/// alternation.
pub const EXHAUSTIVE_LIMIT: usize = 20;
const ALTERNATION_ROUNDS: usize = 25;

/// Bound state of one binary in a branch key: pinned value or relaxed.
const RELAXED: u8 = 2;

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// Witness in full program-variable space; present iff feasible.
    pub witness: Option<Vec<f64>>,
    /// Entropy terms of the best point found (feasible or not).
    pub nu: Vec<f64>,
    /// Best gap value g found across branches.
    pub value: f64,
    /// Conditional-gradient gap certifying the best branch.
    pub gap: f64,
    /// Total inner iterations across all branch solves.
    pub iterations: usize,
    /// Binary assignment of the best branch as (variable, value) pairs.
    pub assignment: Vec<(usize, f64)>,
}

/// One search context per program: the column-generation master, the binary
/// layout, and the per-assignment atom pools. Reused across theta values.
pub struct BranchSearch<'p> {
    program: &'p SynthesisProgram,
    master: Master,
    binaries: Vec<usize>,
    free: Vec<usize>,
    pools: HashMap<Vec<u8>, AtomPool>,
}

impl<'p> BranchSearch<'p> {
    pub fn new(program: &'p SynthesisProgram) -> Result<Self, SolveError> {
        let master = Master::new(program)?;
        let binaries = program.binaries();
        let free = binaries
            .iter()
            .copied()
            .filter(|&v| program.vars[v].lo != program.vars[v].hi)
            .collect();
        Ok(BranchSearch {
            program,
            master,
            binaries,
            free,
            pools: HashMap::new(),
        })
    }

    /// Is entropy level `theta` attainable? With `polish` every branch is
    /// driven to its maximum and the best-gap witness wins; without it the
    /// first certified-feasible branch returns early.
    pub fn check(&mut self, theta: f64, polish: bool) -> Result<FeasibilityResult, SolveError> {
        if self.program.entropy_vars.is_empty() {
            return Err(SolveError::NoEntropyTerms);
        }
        if self.free.len() <= EXHAUSTIVE_LIMIT {
            self.check_exhaustive(theta, polish)
        } else {
            self.check_alternating(theta, polish)
        }
    }

    /// Pinned-or-relaxed state for every binary: program-pinned ones keep
    /// their value, free ones come from the iterator.
    fn key_from(&self, mut free_vals: impl Iterator<Item = u8>) -> Vec<u8> {
        self.binaries
            .iter()
            .map(|&v| {
                let def = &self.program.vars[v];
                if def.lo == def.hi {
                    def.lo as u8
                } else {
                    free_vals.next().expect("free assignment too short")
                }
            })
            .collect()
    }

    fn apply_key(&mut self, key: &[u8]) {
        for (&var, &state) in self.binaries.iter().zip(key) {
            match state {
                RELAXED => self.master.set_bounds(var, 0.0, 1.0),
                v => self.master.set_bounds(var, f64::from(v), f64::from(v)),
            }
        }
    }

    /// Maximize the gap over the branch `key` describes. A budgeted run gets
    /// one warm retry (the pool keeps everything learned); a second budget
    /// exhaustion surfaces as inconclusive.
    fn solve_branch(
        &mut self,
        key: Vec<u8>,
        theta: f64,
        stop_on_feasible: bool,
    ) -> Result<GapOutcome, SolveError> {
        self.apply_key(&key);
        let master = &mut self.master;
        let pool = self.pools.entry(key).or_default();
        let mut lmo = |obj: &[(usize, f64)]| -> Result<Option<Vec<f64>>, SolveError> {
            for &(v, c) in obj {
                master.set_objective(v, c);
            }
            Ok(master.solve()?.values)
        };
        let entropy = &self.program.entropy_vars;
        let mut out = concave::maximize_gap(&mut lmo, entropy, theta, pool, stop_on_feasible)?;
        if out.verdict == GapVerdict::Budget {
            let retry = concave::maximize_gap(&mut lmo, entropy, theta, pool, stop_on_feasible)?;
            out = GapOutcome {
                iterations: out.iterations + retry.iterations,
                ..retry
            };
            if out.verdict == GapVerdict::Budget {
                return Err(SolveError::Inconclusive {
                    theta,
                    reason: format!(
                        "entropy maximization still undecided after {} iterations (value {}, gap {})",
                        out.iterations, out.value, out.gap
                    ),
                });
            }
        }
        Ok(out)
    }

    fn check_exhaustive(
        &mut self,
        theta: f64,
        polish: bool,
    ) -> Result<FeasibilityResult, SolveError> {
        let k = self.free.len();
        let mut best: Option<(GapOutcome, Vec<u8>)> = None;
        let mut iterations = 0;
        for mask in mask_order(k) {
            let key = self.key_from((0..k).map(|b| ((mask >> b) & 1) as u8));
            let out = self.solve_branch(key.clone(), theta, !polish)?;
            iterations += out.iterations;
            if out.verdict == GapVerdict::EmptyPolytope {
                continue;
            }
            let improved = best.as_ref().is_none_or(|(b, _)| out.value > b.value);
            if improved {
                best = Some((out, key));
            }
            if !polish {
                if let Some((b, _)) = &best {
                    if b.value >= -FEAS_TOL {
                        break;
                    }
                }
            }
        }
        self.assemble(theta, best, iterations)
    }

    /// Alternation: enumerate the non-selector binaries, and for each of
    /// those drive the pattern selectors to a fixed point of the
    /// argmax-reset map starting from the relaxed witness.
    fn check_alternating(
        &mut self,
        theta: f64,
        polish: bool,
    ) -> Result<FeasibilityResult, SolveError> {
        let selector_set: Vec<usize> = self
            .program
            .patterns
            .iter()
            .flat_map(|p| p.selectors.iter().copied())
            .collect();
        let is_selector = |v: usize| selector_set.contains(&v);
        let plain: Vec<usize> = self
            .free
            .iter()
            .copied()
            .filter(|&v| !is_selector(v))
            .collect();
        if plain.len() > EXHAUSTIVE_LIMIT {
            return Err(SolveError::Inconclusive {
                theta,
                reason: format!(
                    "{} non-selector binaries exceed the enumeration budget of {}",
                    plain.len(),
                    EXHAUSTIVE_LIMIT
                ),
            });
        }

        let free_index: HashMap<usize, usize> = self
            .free
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect();
        let mut best: Option<(GapOutcome, Vec<u8>)> = None;
        let mut iterations = 0;
        for mask in mask_order(plain.len()) {
            // Relaxed probe: selectors float in [0, 1]; its witness seeds
            // the argmax reset. An empty relaxation rules out every pinned
            // assignment under this mask, and so does a certified negative
            // gap maximum: the relaxed polytope contains every pinned one.
            let mut free_vals = vec![RELAXED; self.free.len()];
            for (b, &v) in plain.iter().enumerate() {
                free_vals[free_index[&v]] = ((mask >> b) & 1) as u8;
            }
            let relaxed_key = self.key_from(free_vals.iter().copied());
            let relaxed = self.solve_branch(relaxed_key, theta, false)?;
            iterations += relaxed.iterations;
            if relaxed.verdict == GapVerdict::EmptyPolytope {
                continue;
            }
            if relaxed.value + relaxed.gap < -FEAS_TOL {
                continue;
            }

            let mut assign = self.reset_selectors(&relaxed.point, &free_vals, &free_index);
            let mut pinned: Option<(GapOutcome, Vec<u8>)> = None;
            for _ in 0..ALTERNATION_ROUNDS {
                let key = self.key_from(assign.iter().copied());
                let out = self.solve_branch(key.clone(), theta, !polish)?;
                iterations += out.iterations;
                if out.verdict == GapVerdict::EmptyPolytope {
                    pinned = None;
                    break;
                }
                let next = self.reset_selectors(&out.point, &assign, &free_index);
                let fixed = next == assign;
                pinned = Some((out, key));
                if fixed {
                    break;
                }
                assign = next;
            }
            let Some((out, key)) = pinned else { continue };

            // Exactness audit, with the per-block exhaustive fallback.
            let (out, key) = self.enforce_patterns(theta, out, key, polish, &mut iterations)?;
            let improved = best.as_ref().is_none_or(|(b, _)| out.value > b.value);
            if improved {
                best = Some((out, key));
            }
            if !polish {
                if let Some((b, _)) = &best {
                    if b.value >= -FEAS_TOL {
                        break;
                    }
                }
            }
        }
        self.assemble(theta, best, iterations)
    }

    /// Argmax reset of every fully free pattern-selector block; other free
    /// binaries keep their current state.
    fn reset_selectors(
        &self,
        witness: &[f64],
        current: &[u8],
        free_index: &HashMap<usize, usize>,
    ) -> Vec<u8> {
        let mut next = current.to_vec();
        for pat in &self.program.patterns {
            if !pat.selectors.iter().all(|s| free_index.contains_key(s)) {
                continue;
            }
            match pat.kind {
                PatternKind::Max => {
                    let mut arg = 0;
                    let mut top = f64::NEG_INFINITY;
                    for (i, &inp) in pat.inputs.iter().enumerate() {
                        if witness[inp] > top {
                            top = witness[inp];
                            arg = i;
                        }
                    }
                    for (i, &s) in pat.selectors.iter().enumerate() {
                        next[free_index[&s]] = u8::from(i == arg);
                    }
                }
                PatternKind::Clamp { offset } => {
                    let z: f64 = pat.inputs.iter().map(|&v| witness[v]).sum::<f64>() - offset;
                    next[free_index[&pat.selectors[0]]] = u8::from(z > 0.0);
                }
            }
        }
        next
    }

    /// Index of the first pattern whose output disagrees with its exact
    /// semantics on this witness.
    fn pattern_violation(&self, witness: &[f64]) -> Option<usize> {
        self.program.patterns.iter().position(|pat| {
            let got = witness[pat.output];
            let want = match pat.kind {
                PatternKind::Max => pat
                    .inputs
                    .iter()
                    .map(|&v| witness[v])
                    .fold(f64::NEG_INFINITY, f64::max),
                PatternKind::Clamp { offset } => {
                    (pat.inputs.iter().map(|&v| witness[v]).sum::<f64>() - offset).max(0.0)
                }
            };
            (got - want).abs() > FEAS_TOL
        })
    }

    /// Re-solves violating blocks exhaustively (one-hot for max blocks, on
    /// or off for clamp blocks) until the witness passes the audit.
    fn enforce_patterns(
        &mut self,
        theta: f64,
        mut out: GapOutcome,
        mut key: Vec<u8>,
        polish: bool,
        iterations: &mut usize,
    ) -> Result<(GapOutcome, Vec<u8>), SolveError> {
        let free_index: HashMap<usize, usize> = self
            .free
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect();
        for _ in 0..=self.program.patterns.len() {
            let Some(pi) = self.pattern_violation(&out.point) else {
                return Ok((out, key));
            };
            let pat = self.program.patterns[pi].clone();
            if !pat.selectors.iter().all(|s| free_index.contains_key(s)) {
                break;
            }
            let options: Vec<Vec<u8>> = match pat.kind {
                PatternKind::Max => (0..pat.selectors.len())
                    .map(|arg| {
                        (0..pat.selectors.len())
                            .map(|i| u8::from(i == arg))
                            .collect()
                    })
                    .collect(),
                PatternKind::Clamp { .. } => vec![vec![0], vec![1]],
            };
            let base = self.binary_positions(&key);
            let mut pick: Option<(GapOutcome, Vec<u8>)> = None;
            for opt in options {
                let mut k = key.clone();
                for (&s, &bit) in pat.selectors.iter().zip(&opt) {
                    k[base[&s]] = bit;
                }
                let cand = self.solve_branch(k.clone(), theta, !polish)?;
                *iterations += cand.iterations;
                if cand.verdict == GapVerdict::EmptyPolytope {
                    continue;
                }
                if pick.as_ref().is_none_or(|(b, _)| cand.value > b.value) {
                    pick = Some((cand, k));
                }
            }
            match pick {
                Some((o, k)) => {
                    out = o;
                    key = k;
                }
                None => break,
            }
        }
        if self.pattern_violation(&out.point).is_some() {
            return Err(SolveError::Inconclusive {
                theta,
                reason: "selector search could not certify pattern exactness".into(),
            });
        }
        Ok((out, key))
    }

    /// Position of each binary variable inside a branch key.
    fn binary_positions(&self, _key: &[u8]) -> HashMap<usize, usize> {
        self.binaries
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect()
    }

    fn assemble(
        &self,
        theta: f64,
        best: Option<(GapOutcome, Vec<u8>)>,
        iterations: usize,
    ) -> Result<FeasibilityResult, SolveError> {
        let Some((out, key)) = best else {
            // Every branch had an empty polytope: the linear system itself
            // is unsatisfiable, independent of theta.
            return Ok(FeasibilityResult {
                feasible: false,
                witness: None,
                nu: Vec::new(),
                value: f64::NEG_INFINITY,
                gap: 0.0,
                iterations,
                assignment: Vec::new(),
            });
        };
        let assignment: Vec<(usize, f64)> = self
            .binaries
            .iter()
            .zip(&key)
            .map(|(&v, &s)| (v, f64::from(s.min(1))))
            .collect();
        let feasible = out.value >= -FEAS_TOL;
        if feasible {
            self.program.verify_witness(&out.point)?;
            let _ = theta;
            Ok(FeasibilityResult {
                feasible: true,
                witness: Some(out.point),
                nu: out.nu,
                value: out.value,
                gap: out.gap,
                iterations,
                assignment,
            })
        } else {
            Ok(FeasibilityResult {
                feasible: false,
                witness: None,
                nu: out.nu,
                value: out.value,
                gap: out.gap,
                iterations,
                assignment,
            })
        }
    }
}

/// All k-bit masks, most set bits first, ties in ascending mask order.
/// High entropy levels need many active terms, so branches that switch more
/// products on are the likeliest to certify feasibility early.
fn mask_order(k: usize) -> Vec<u64> {
    let mut masks: Vec<u64> = (0..(1u64 << k)).collect();
    masks.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
    masks
}
