//! Column generation over the occupancy flow.
//!
//! The synthesis programs are linear except that most of their variables
//! are occupancy flows over a large acyclic state graph. Carrying every
//! occupancy variable and conservation row in the simplex would dwarf the
//! handful of rows that actually couple formulas together, so the master
//! problem keeps only the coupling rows and represents the flow polytope by
//! a convex combination of its vertices (deterministic action choices),
//! generated on demand: a Dantzig-Wolfe decomposition where the pricing
//! subproblem is one backward sweep over the flow graph.
//!
//! Infeasible masters price with the Farkas duals from the simplex, which
//! share the reduced-cost rule with optimal duals; when no vertex can price
//! in, the infeasibility verdict extends to the full program. Bound changes
//! on structural variables (branching on selectors) and objective changes
//! (the concave maximizer re-weighting entropy terms) keep the column pool
//! valid, because the flow polytope depends on neither.

use std::collections::HashMap;

use crate::error::SolveError;
use crate::optcore::flow::{Column, FlowNet};
use crate::optcore::lp::{BoundedLp, LpOutcome, RowOp};
use crate::program::{Op, SynthesisProgram};

const PRICE_TOL: f64 = 1e-8;
const MAX_COLUMNS: usize = 10_000;

fn row_op(op: Op) -> RowOp {
    match op {
        Op::Le => RowOp::Le,
        Op::Ge => RowOp::Ge,
        Op::Eq => RowOp::Eq,
    }
}

#[derive(Debug, Clone)]
pub struct MasterOutcome {
    pub feasible: bool,
    pub objective: f64,
    /// Witness in program-variable space (occupancies reassembled from the
    /// column weights); None when infeasible.
    pub values: Option<Vec<f64>>,
}

/// The restricted master problem plus its column pool. One instance serves
/// a whole synthesis run: selector branching only touches bounds and the
/// entropy maximizer only touches objectives, so columns never go stale.
pub struct Master {
    lp: BoundedLp,
    /// Program var -> master LP var; None for flow variables.
    lp_var_of: Vec<Option<usize>>,
    is_flow_var: Vec<bool>,
    /// Program var -> (master row, coefficient) appearances, flow vars only.
    lambda_rows: Vec<Vec<(usize, f64)>>,
    convexity_row: usize,
    net: FlowNet,
    pool: HashMap<Vec<usize>, usize>,
    columns: Vec<(Column, usize)>,
    nvars: usize,
}

impl Master {
    pub fn new(program: &SynthesisProgram) -> Result<Self, SolveError> {
        let net = program.flow.clone().unwrap_or_else(FlowNet::empty);
        let nvars = program.vars.len();
        let mut is_flow_var = vec![false; nvars];
        for row in &net.var_of {
            for &v in row {
                is_flow_var[v] = true;
            }
        }

        let mut lp = BoundedLp::new();
        let mut lambda_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nvars];
        let mut struct_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nvars];
        for row in &program.rows {
            if row.flow_state.is_some() {
                debug_assert!(row.terms.iter().all(|&(v, _)| is_flow_var[v]));
                continue;
            }
            let r = lp.add_row(row_op(row.op), row.rhs);
            for &(v, c) in &row.terms {
                if is_flow_var[v] {
                    lambda_rows[v].push((r, c));
                } else {
                    struct_cols[v].push((r, c));
                }
            }
        }
        let convexity_row = lp.add_row(RowOp::Eq, 1.0);

        let mut lp_var_of = vec![None; nvars];
        for (v, def) in program.vars.iter().enumerate() {
            if is_flow_var[v] {
                // The vertex hull keeps occupancies inside [0, 1] already;
                // tighter bounds would need master rows of their own.
                debug_assert!(def.lo == 0.0 && def.hi == 1.0);
                continue;
            }
            lp_var_of[v] = Some(lp.add_var(def.lo, def.hi, 0.0, &struct_cols[v]));
        }

        let mut master = Master {
            lp,
            lp_var_of,
            is_flow_var,
            lambda_rows,
            convexity_row,
            net,
            pool: HashMap::new(),
            columns: Vec::new(),
            nvars,
        };
        // Seed with the zero-score vertex so the convexity row is
        // satisfiable from the first solve.
        let seed = master.net.best_vertex(&vec![0.0; nvars]);
        master.add_column(seed);
        Ok(master)
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    /// Bounds of a structural (non-flow) program variable; selector
    /// branching pins binaries through this.
    pub fn set_bounds(&mut self, program_var: usize, lo: f64, hi: f64) {
        let id = self.lp_var_of[program_var].expect("flow variables cannot be re-bounded");
        self.lp.set_bounds(id, lo, hi);
    }

    /// Objective coefficient of a structural program variable. Flow
    /// variables carry no direct objective by construction.
    pub fn set_objective(&mut self, program_var: usize, obj: f64) {
        let id = self.lp_var_of[program_var].expect("flow variables carry no objective");
        self.lp.set_objective(id, obj);
    }

    fn add_column(&mut self, col: Column) {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for &(v, occ) in &col.occupancy {
            for &(r, c) in &self.lambda_rows[v] {
                *acc.entry(r).or_insert(0.0) += c * occ;
            }
        }
        let mut coefs: Vec<(usize, f64)> = acc.into_iter().collect();
        coefs.push((self.convexity_row, 1.0));
        let wvar = self.lp.add_var(0.0, 1.0, 0.0, &coefs);
        self.pool.insert(col.choices.clone(), self.columns.len());
        self.columns.push((col, wvar));
    }

    fn price(&self, out: &LpOutcome) -> (Column, f64) {
        let mut score = vec![0.0; self.nvars];
        for (v, slot) in score.iter_mut().enumerate() {
            if !self.is_flow_var[v] {
                continue;
            }
            let mut s = 0.0;
            for &(r, c) in &self.lambda_rows[v] {
                s -= out.duals[r] * c;
            }
            *slot = s;
        }
        let col = self.net.best_vertex(&score);
        let d = col.value(&score) - out.duals[self.convexity_row];
        (col, d)
    }

    /// Solves the master to optimality over the full flow polytope,
    /// generating vertices until none prices in. The verdict (feasible or
    /// not) is exact for the whole program, not just the restricted master.
    pub fn solve(&mut self) -> Result<MasterOutcome, SolveError> {
        loop {
            let out = self.lp.solve()?;
            let (col, d) = self.price(&out);
            if d > PRICE_TOL && !self.pool.contains_key(&col.choices) {
                if self.columns.len() >= MAX_COLUMNS {
                    return Err(SolveError::Budget {
                        place: "column generation",
                        best: out.objective,
                    });
                }
                self.add_column(col);
                continue;
            }
            // A repeated column with positive reduced cost is numerical
            // noise: it is already a variable of the master, so its true
            // reduced cost at this optimum is nonpositive.
            if !out.feasible {
                return Ok(MasterOutcome {
                    feasible: false,
                    objective: 0.0,
                    values: None,
                });
            }
            let mut values = vec![0.0; self.nvars];
            for (v, &id) in self.lp_var_of.iter().enumerate() {
                if let Some(id) = id {
                    values[v] = self.lp.value(id);
                }
            }
            for (col, wvar) in &self.columns {
                let w = self.lp.value(*wvar);
                if w > 0.0 {
                    for &(v, occ) in &col.occupancy {
                        values[v] += w * occ;
                    }
                }
            }
            return Ok(MasterOutcome {
                feasible: true,
                objective: out.objective,
                values: Some(values),
            });
        }
    }
}

/// Reference construction: the whole program as one explicit LP, flow rows
/// and occupancy variables included. Only sensible for small programs; the
/// tests cross-check the master against it.
pub fn direct_lp(program: &SynthesisProgram) -> (BoundedLp, Vec<usize>) {
    let mut lp = BoundedLp::new();
    let rows: Vec<usize> = program
        .rows
        .iter()
        .map(|row| lp.add_row(row_op(row.op), row.rhs))
        .collect();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); program.vars.len()];
    for (i, row) in program.rows.iter().enumerate() {
        for &(v, c) in &row.terms {
            cols[v].push((rows[i], c));
        }
    }
    let ids: Vec<usize> = program
        .vars
        .iter()
        .enumerate()
        .map(|(v, def)| lp.add_var(def.lo, def.hi, 0.0, &cols[v]))
        .collect();
    (lp, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A two-state, two-action net: action 0 stays out of state 1, action 1
    /// feeds it. Variables 0..4 are occupancies, later ids are structural.
    fn fork_program() -> SynthesisProgram {
        let mut p = SynthesisProgram::default();
        let l00 = p.add_var("l00".into(), 0.0, 1.0, false);
        let l01 = p.add_var("l01".into(), 0.0, 1.0, false);
        let l10 = p.add_var("l10".into(), 0.0, 1.0, false);
        let l11 = p.add_var("l11".into(), 0.0, 1.0, false);
        let var_of = vec![vec![l00, l01], vec![l10, l11]];
        // Action 0 leaks out of the net, action 1 moves to state 1.
        let succ = vec![vec![vec![], vec![(1, 1.0)]], vec![vec![], vec![]]];
        let net = FlowNet::new(0, var_of, succ).unwrap();
        p.add_flow_rows(&net);
        p.flow = Some(net);
        p
    }

    fn reach_mass_terms(p: &SynthesisProgram) -> Vec<(usize, f64)> {
        // Occupancy mass sitting in state 1 (either action there).
        let _ = p;
        vec![(2, 1.0), (3, 1.0)]
    }

    #[test]
    fn farkas_pricing_pulls_in_the_needed_vertex() {
        let mut p = fork_program();
        let terms = reach_mass_terms(&p);
        p.add_row("reach".into(), terms, Op::Ge, 0.8);
        let mut master = Master::new(&p).unwrap();
        // The seed column (all action 0) leaves state 1 empty, so the first
        // restricted master is infeasible; the Farkas prices must fetch the
        // action-1 vertex rather than giving up.
        let out = master.solve().unwrap();
        assert!(out.feasible);
        let values = out.values.unwrap();
        assert!(values[2] + values[3] >= 0.8 - 1e-7);
        assert!(master.column_count() >= 2);
    }

    #[test]
    fn impossible_mass_demand_is_reported_infeasible() {
        let mut p = fork_program();
        let terms = reach_mass_terms(&p);
        p.add_row("reach".into(), terms, Op::Ge, 1.5);
        let mut master = Master::new(&p).unwrap();
        let out = master.solve().unwrap();
        assert!(!out.feasible);
    }

    #[test]
    fn empty_net_reduces_to_a_plain_lp() {
        let mut p = SynthesisProgram::default();
        let a = p.add_var("a".into(), 0.0, 2.0, false);
        let b = p.add_var("b".into(), 0.0, 2.0, false);
        p.add_row("cap".into(), vec![(a, 1.0), (b, 1.0)], Op::Le, 3.0);
        let mut master = Master::new(&p).unwrap();
        master.set_objective(a, 1.0);
        master.set_objective(b, 2.0);
        let out = master.solve().unwrap();
        assert!(out.feasible);
        assert!((out.objective - 5.0).abs() < 1e-9);
        let values = out.values.unwrap();
        assert!((values[a] - 1.0).abs() < 1e-9);
        assert!((values[b] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn branch_rebounds_reuse_the_column_pool() {
        let mut p = fork_program();
        let x = p.add_var("x".into(), 0.0, 1.0, true);
        let mut terms = reach_mass_terms(&p);
        // reach mass - 0.9 x >= 0: with x pinned to 1 the flow must commit
        // to action 1; with x pinned to 0 anything goes.
        terms.push((x, -0.9));
        p.add_row("gate".into(), terms, Op::Ge, 0.0);
        let mut master = Master::new(&p).unwrap();

        master.set_bounds(x, 1.0, 1.0);
        let forced = master.solve().unwrap();
        assert!(forced.feasible);
        let v = forced.values.unwrap();
        assert!(v[2] + v[3] >= 0.9 - 1e-7);
        let pool_after_first = master.column_count();

        master.set_bounds(x, 0.0, 0.0);
        let relaxed = master.solve().unwrap();
        assert!(relaxed.feasible);
        assert_eq!(master.column_count(), pool_after_first);

        master.set_bounds(x, 1.0, 1.0);
        let again = master.solve().unwrap();
        assert!(again.feasible);
        assert_eq!(master.column_count(), pool_after_first);
    }

    /// Random layered nets with random coupling rows, cross-checked against
    /// the explicit whole-program LP.
    #[test]
    fn matches_the_direct_lp_on_random_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut feasible_seen = 0;
        let mut infeasible_seen = 0;
        for case in 0..300 {
            let mut p = SynthesisProgram::default();
            // Layered DAG: 2-3 layers of width 1-3.
            let layers = rng.gen_range(2..=3);
            let mut layer_states: Vec<Vec<usize>> = Vec::new();
            let mut next_state = 0usize;
            for _ in 0..layers {
                let w = rng.gen_range(1..=3);
                layer_states.push((0..w).map(|i| next_state + i).collect());
                next_state += w;
            }
            let n_states = next_state;
            let mut var_of: Vec<Vec<usize>> = vec![Vec::new(); n_states];
            let mut succ: Vec<Vec<Vec<(usize, f64)>>> = vec![Vec::new(); n_states];
            for (li, states) in layer_states.iter().enumerate() {
                for &s in states {
                    let n_actions = rng.gen_range(1..=2);
                    for a in 0..n_actions {
                        let v = p.add_var(format!("l{s}_{a}"), 0.0, 1.0, false);
                        var_of[s].push(v);
                        let mut row = Vec::new();
                        if li + 1 < layers {
                            let next = &layer_states[li + 1];
                            // Partial mass: some flow may leak outside.
                            let keep = rng.gen_range(1..=next.len());
                            let mass = if rng.gen_bool(0.3) { 0.7 } else { 1.0 };
                            for (k, &t) in next.iter().take(keep).enumerate() {
                                let _ = k;
                                row.push((t, mass / keep as f64));
                            }
                        }
                        succ[s].push(row);
                    }
                }
            }
            let net = FlowNet::new(0, var_of, succ).unwrap();
            let flow_vars: Vec<usize> = (0..p.vars.len()).collect();
            p.add_flow_rows(&net);
            p.flow = Some(net);

            // One or two structural variables, one of them tied to the flow
            // through an equality so the objective reaches the occupancies.
            let s0 = p.add_var("s0".into(), 0.0, 1.0, false);
            let mut tie: Vec<(usize, f64)> = flow_vars
                .iter()
                .filter(|_| rng.gen_bool(0.6))
                .map(|&v| (v, 1.0))
                .collect();
            tie.push((s0, -1.0));
            p.add_row("tie".into(), tie, Op::Eq, 0.0);
            for extra in 0..rng.gen_range(0..=2) {
                let mut terms: Vec<(usize, f64)> = Vec::new();
                for &v in &flow_vars {
                    if rng.gen_bool(0.5) {
                        let c = if rng.gen_bool(0.5) { 1.0 } else { -0.5 };
                        terms.push((v, c));
                    }
                }
                if terms.is_empty() {
                    continue;
                }
                let op = if rng.gen_bool(0.5) { Op::Le } else { Op::Ge };
                let rhs = f64::from(rng.gen_range(-1..=2)) * 0.4;
                p.add_row(format!("extra{extra}"), terms, op, rhs);
            }

            let mut master = Master::new(&p).unwrap();
            master.set_objective(s0, 1.0);
            let got = master.solve().unwrap();

            let (mut direct, ids) = direct_lp(&p);
            direct.set_objective(ids[s0], 1.0);
            let want = direct.solve().unwrap();

            assert_eq!(
                got.feasible, want.feasible,
                "case {case}: master {} vs direct {}",
                got.feasible, want.feasible
            );
            if got.feasible {
                feasible_seen += 1;
                assert!(
                    (got.objective - want.objective).abs() < 1e-6,
                    "case {case}: master obj {} vs direct obj {}",
                    got.objective,
                    want.objective
                );
                let values = got.values.unwrap();
                for row in &p.rows {
                    assert!(
                        row.violation(&values) < 1e-7,
                        "case {case}: row {} violated by {}",
                        row.name,
                        row.violation(&values)
                    );
                }
            } else {
                infeasible_seen += 1;
            }
        }
        assert!(feasible_seen > 100, "only {feasible_seen} feasible cases");
        assert!(infeasible_seen > 20, "only {infeasible_seen} infeasible cases");
    }
}
