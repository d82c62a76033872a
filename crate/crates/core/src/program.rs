//! The occupancy-measure program handed to the solver.
//!
//! A program is a set of bounded variables, linear rows, and a designated
//! group of entropy variables; the solver maximizes the entropy of the
//! normalized entropy-variable vector subject to the rows. Binary variables
//! (candidate selectors and bound-pattern switches) are marked so the
//! feasibility search can enumerate or alternate over them; products of a
//! binary with a bounded expression are linearized exactly by their envelope
//! rows, which this module also builds.

use crate::error::SolveError;
use crate::optcore::flow::FlowNet;
use serde::{Deserialize, Serialize};

/// Absolute tolerance for row and bound satisfaction in witness checks.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarDef {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub binary: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    /// (variable index, coefficient), one entry per variable.
    pub terms: Vec<(usize, f64)>,
    pub op: Op,
    pub rhs: f64,
    /// Set on occupancy conservation rows; these are handled by column
    /// generation rather than carried in the master.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_state: Option<usize>,
}

impl Row {
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v]).sum()
    }

    /// Signed violation: positive means the row is broken by that much.
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.eval(values);
        match self.op {
            Op::Le => lhs - self.rhs,
            Op::Ge => self.rhs - lhs,
            Op::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// nu = mu * x with binary x; kept for the candidate-set bookkeeping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProductTriple {
    pub nu: usize,
    pub mu: usize,
    pub x: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    /// output = max over the inputs (selector per input picks the argmax).
    Max,
    /// output = selector * (sum of inputs - offset), i.e. the sum clamped to
    /// zero from below when the selector is off.
    Clamp { offset: f64 },
}

/// A structured group of rows tying one output variable to input variables
/// through binary selectors. The rows themselves are in `rows`; the pattern
/// records the participants so the feasibility search can propose selector
/// values from a witness instead of enumerating blindly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pattern {
    pub kind: PatternKind,
    pub output: usize,
    pub inputs: Vec<usize>,
    /// Max: one per input. Clamp: exactly one.
    pub selectors: Vec<usize>,
    /// Max: one linearized product per input. Clamp: none.
    pub products: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthesisProgram {
    pub vars: Vec<VarDef>,
    pub rows: Vec<Row>,
    /// Variables whose normalized vector's entropy is the objective.
    pub entropy_vars: Vec<usize>,
    /// Satisfaction-probability (or bound) variable per formula.
    pub mu_vars: Vec<usize>,
    /// Candidate selector per formula.
    pub x_vars: Vec<usize>,
    pub ground_truth: usize,
    pub triples: Vec<ProductTriple>,
    pub patterns: Vec<Pattern>,
    /// Occupancy structure for the column-generation solver; rebuilt by the
    /// assembler, not serialized.
    #[serde(skip)]
    pub flow: Option<FlowNet>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProgramStats {
    pub vars: usize,
    pub rows: usize,
    pub binaries: usize,
    pub flow_rows: usize,
    pub entropy_terms: usize,
}

impl SynthesisProgram {
    pub fn add_var(&mut self, name: String, lo: f64, hi: f64, binary: bool) -> usize {
        self.vars.push(VarDef {
            name,
            lo,
            hi,
            binary,
        });
        self.vars.len() - 1
    }

    pub fn add_row(
        &mut self,
        name: String,
        terms: Vec<(usize, f64)>,
        op: Op,
        rhs: f64,
    ) -> usize {
        self.rows.push(Row {
            name,
            terms,
            op,
            rhs,
            flow_state: None,
        });
        self.rows.len() - 1
    }

    /// Exact envelope of f = y * g for binary y, where g = sum(inputs) -
    /// offset and g is bounded by the last argument pair. Four rows;
    /// equality holds at integral y.
    pub fn add_product_rows(
        &mut self,
        tag: &str,
        f: usize,
        y: usize,
        inputs: &[usize],
        offset: f64,
        (g_lo, g_hi): (f64, f64),
    ) {
        self.add_row(
            format!("{tag}/cap"),
            vec![(f, 1.0), (y, -g_hi)],
            Op::Le,
            0.0,
        );
        self.add_row(
            format!("{tag}/floor"),
            vec![(f, 1.0), (y, -g_lo)],
            Op::Ge,
            0.0,
        );
        let mut up: Vec<(usize, f64)> = vec![(f, 1.0), (y, -g_lo)];
        up.extend(inputs.iter().map(|&v| (v, -1.0)));
        self.add_row(format!("{tag}/tie_hi"), up, Op::Le, -offset - g_lo);
        let mut dn: Vec<(usize, f64)> = vec![(f, 1.0), (y, -g_hi)];
        dn.extend(inputs.iter().map(|&v| (v, -1.0)));
        self.add_row(format!("{tag}/tie_lo"), dn, Op::Ge, -offset - g_hi);
    }

    /// Conservation rows for a flow net: outflow minus inflow is 1 at the
    /// initial state and 0 elsewhere.
    pub fn add_flow_rows(&mut self, net: &FlowNet) {
        let n = net.state_count();
        let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for s in 0..n {
            for (a, row) in net.succ[s].iter().enumerate() {
                for &(t, p) in row {
                    inflow[t].push((net.var_of[s][a], -p));
                }
            }
        }
        for (s, inflow) in inflow.iter_mut().enumerate() {
            let mut terms: Vec<(usize, f64)> =
                net.var_of[s].iter().map(|&v| (v, 1.0)).collect();
            terms.append(inflow);
            let rhs = if s == net.initial { 1.0 } else { 0.0 };
            self.rows.push(Row {
                name: format!("flow/{s}"),
                terms,
                op: Op::Eq,
                rhs,
                flow_state: Some(s),
            });
        }
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&v| self.vars[v].binary).collect()
    }

    pub fn stats(&self) -> ProgramStats {
        ProgramStats {
            vars: self.vars.len(),
            rows: self.rows.len(),
            binaries: self.vars.iter().filter(|v| v.binary).count(),
            flow_rows: self.rows.iter().filter(|r| r.flow_state.is_some()).count(),
            entropy_terms: self.entropy_vars.len(),
        }
    }

    /// Full linear-feasibility check of a candidate solution: length, finite
    /// values, bounds, binary integrality, and every row within tolerance.
    /// The entropy level is checked by the caller, which owns the target.
    pub fn verify_witness(&self, values: &[f64]) -> Result<(), SolveError> {
        if values.len() != self.vars.len() {
            return Err(SolveError::Witness(format!(
                "expected {} values, got {}",
                self.vars.len(),
                values.len()
            )));
        }
        for (def, &v) in self.vars.iter().zip(values) {
            if !v.is_finite() {
                return Err(SolveError::Witness(format!(
                    "variable `{}` is {v}",
                    def.name
                )));
            }
            if def.lo == 0.0 && v < -FEAS_TOL {
                return Err(SolveError::NegativeOccupancy {
                    var: def.name.clone(),
                    value: v,
                });
            }
            if v < def.lo - FEAS_TOL || v > def.hi + FEAS_TOL {
                return Err(SolveError::Witness(format!(
                    "variable `{}` = {v} outside [{}, {}]",
                    def.name, def.lo, def.hi
                )));
            }
            if def.binary && v.min((v - 1.0).abs()) > FEAS_TOL {
                return Err(SolveError::Witness(format!(
                    "binary `{}` = {v} is not integral",
                    def.name
                )));
            }
        }
        for row in &self.rows {
            let viol = row.violation(values);
            if viol > FEAS_TOL {
                return Err(SolveError::Witness(format!(
                    "row `{}` violated by {viol:.3e}",
                    row.name
                )));
            }
        }
        Ok(())
    }

    /// Serializes the program and the entropy level for an external solver.
    pub fn export_json(&self, theta: f64) -> String {
        let envelope = ExportEnvelope {
            format: "entropy-feasibility-v1",
            theta,
            objective: "maximize entropy in bits of the normalized entropy_vars vector",
            program: self,
        };
        serde_json::to_string_pretty(&envelope).expect("program serializes")
    }
}

#[derive(Serialize)]
struct ExportEnvelope<'a> {
    format: &'static str,
    theta: f64,
    objective: &'static str,
    program: &'a SynthesisProgram,
}

/// Reply expected from an external solver.
#[derive(Debug, Clone, Deserialize)]
pub struct BackendAnswer {
    pub feasible: bool,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

impl BackendAnswer {
    pub fn parse(text: &str) -> Result<Self, SolveError> {
        serde_json::from_str(text)
            .map_err(|e| SolveError::Backend(format!("bad witness JSON: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product_fixture(offset: f64, g_lo: f64, g_hi: f64) -> SynthesisProgram {
        let mut p = SynthesisProgram::default();
        let f = p.add_var("f".into(), -10.0, 10.0, false);
        let y = p.add_var("y".into(), 0.0, 1.0, true);
        let a = p.add_var("a".into(), 0.0, 1.0, false);
        let b = p.add_var("b".into(), 0.0, 1.0, false);
        assert_eq!((f, y, a, b), (0, 1, 2, 3));
        p.add_product_rows("t", f, y, &[a, b], offset, (g_lo, g_hi));
        p
    }

    #[test]
    fn product_rows_pin_the_product_at_integral_y() {
        let p = product_fixture(0.5, -0.5, 1.5);
        let cases = [
            // (y, a, b) -> f must equal y * (a + b - 0.5)
            (0.0, 0.3, 0.4),
            (1.0, 0.3, 0.4),
            (1.0, 0.9, 0.9),
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
        ];
        for (y, a, b) in cases {
            let want = y * (a + b - 0.5);
            let ok = [want, 0.0, 1.0, -0.5]
                .iter()
                .map(|&f| {
                    let vals = vec![f, y, a, b];
                    p.rows.iter().all(|r| r.violation(&vals) <= 1e-12)
                })
                .collect::<Vec<bool>>();
            // Exactly the true product value satisfies all four rows.
            for (i, &f) in [want, 0.0, 1.0, -0.5].iter().enumerate() {
                assert_eq!(
                    ok[i],
                    (f - want).abs() < 1e-12,
                    "y={y} a={a} b={b} f={f}"
                );
            }
        }
    }

    #[test]
    fn verify_witness_reports_each_failure_kind() {
        let mut p = SynthesisProgram::default();
        let l = p.add_var("l_0".into(), 0.0, 1.0, false);
        let y = p.add_var("y_0".into(), 0.0, 1.0, true);
        p.add_row("r".into(), vec![(l, 1.0), (y, 1.0)], Op::Le, 1.2);

        assert!(p.verify_witness(&[0.2, 1.0]).is_ok());
        assert!(matches!(
            p.verify_witness(&[0.2]),
            Err(SolveError::Witness(_))
        ));
        assert!(matches!(
            p.verify_witness(&[-0.1, 1.0]),
            Err(SolveError::NegativeOccupancy { .. })
        ));
        assert!(matches!(
            p.verify_witness(&[0.2, 0.5]),
            Err(SolveError::Witness(_))
        ));
        assert!(matches!(
            p.verify_witness(&[0.2, 1.0, 0.0]),
            Err(SolveError::Witness(_))
        ));
        assert!(matches!(
            p.verify_witness(&[1.0, 1.0]),
            Err(SolveError::Witness(_))
        ));
    }

    #[test]
    fn export_and_backend_answer_round_trip() {
        let mut p = SynthesisProgram::default();
        let a = p.add_var("nu_0".into(), 0.0, 1.0, false);
        p.entropy_vars.push(a);
        p.add_row("r".into(), vec![(a, 2.0)], Op::Ge, 0.5);
        let text = p.export_json(0.25);
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["theta"], 0.25);
        assert_eq!(parsed["program"]["vars"][0]["name"], "nu_0");
        assert_eq!(parsed["program"]["rows"][0]["op"], "ge");

        let answer = BackendAnswer::parse(r#"{"feasible": true, "values": [0.5]}"#).unwrap();
        assert!(answer.feasible);
        assert_eq!(answer.values.unwrap(), vec![0.5]);
        let answer = BackendAnswer::parse(r#"{"feasible": false}"#).unwrap();
        assert!(!answer.feasible);
        assert!(BackendAnswer::parse("nope").is_err());
    }

    #[test]
    fn flow_rows_balance_a_small_net() {
        use crate::optcore::flow::FlowNet;
        // Two states: 0 -> 1 with probability 0.6 under action 0, exit with
        // 0.4; state 1 exits entirely.
        let net = FlowNet::new(
            0,
            vec![vec![0], vec![1]],
            vec![vec![vec![(1, 0.6)]], vec![vec![]]],
        )
        .unwrap();
        let mut p = SynthesisProgram::default();
        p.add_var("l0".into(), 0.0, 1.0, false);
        p.add_var("l1".into(), 0.0, 1.0, false);
        p.add_flow_rows(&net);
        assert_eq!(p.rows.len(), 2);
        assert_eq!(p.rows[0].flow_state, Some(0));
        assert!(p.verify_witness(&[1.0, 0.6]).is_ok());
        assert!(p.verify_witness(&[1.0, 0.5]).is_err());
    }
}
