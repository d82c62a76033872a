//! Bounded-variable revised simplex with a dense basis inverse.
//!
//! Maximizes a linear objective over rows `a.x (<=|>=|==) b` and box bounds
//! `lo <= x <= hi` (upper bounds may be infinite). Feasibility is restored
//! by a composite phase 1 that walks the current basis toward its bounds
//! directly, so there are no artificial columns and the solver warm-starts
//! cleanly after bound changes, objective changes, or new columns, which is
//! what the column-generation layer leans on.
//!
//! On infeasible problems the phase-1 duals are exposed as a Farkas
//! certificate in the same orientation as optimal duals, so pricing code
//! has a single path for both outcomes.

use crate::error::SolveError;

pub const LP_TOL: f64 = 1e-9;
const RATIO_EPS: f64 = 1e-11;
/// Bound-crossing allowance of the two-pass ratio test: a basic variable the
/// chosen step overshoots ends up at most this far outside its bound.
const HARRIS_TOL: f64 = 1e-10;
const PIVOT_EPS: f64 = 1e-11;
const REFACTOR_EVERY: usize = 64;
const MAX_PIVOTS: usize = 200_000;
const DEGENERATE_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualKind {
    Optimal,
    Farkas,
}

#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub feasible: bool,
    pub objective: f64,
    /// Row duals in the orientation of the rows as given. For a feasible
    /// solve they certify optimality; for an infeasible one they are the
    /// phase-1 (Farkas) prices. Either way a candidate column with positive
    /// reduced cost `c_j - duals . col_j` can improve the problem.
    pub duals: Vec<f64>,
    pub dual_kind: DualKind,
}

#[derive(Debug, Clone)]
struct Var {
    lo: f64,
    hi: f64,
    obj: f64,
    /// Sparse column in internal (sign-normalized) row orientation.
    col: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct BoundedLp {
    rhs: Vec<f64>,
    /// Internal row = sign * original row; Ge rows are stored negated.
    sign: Vec<f64>,
    vars: Vec<Var>,
    /// Slack variable of each row.
    slack_of: Vec<usize>,
    rows_frozen: bool,

    basis: Vec<usize>,
    /// Var -> basis position + 1; 0 when nonbasic.
    pos: Vec<usize>,
    at_upper: Vec<bool>,
    x: Vec<f64>,
    binv: Vec<f64>,
    started: bool,
    pivots_since_refactor: usize,
}

impl Default for BoundedLp {
    fn default() -> Self {
        Self::new()
    }
}

impl BoundedLp {
    pub fn new() -> Self {
        BoundedLp {
            rhs: Vec::new(),
            sign: Vec::new(),
            vars: Vec::new(),
            slack_of: Vec::new(),
            rows_frozen: false,
            basis: Vec::new(),
            pos: Vec::new(),
            at_upper: Vec::new(),
            x: Vec::new(),
            binv: Vec::new(),
            started: false,
            pivots_since_refactor: 0,
        }
    }

    pub fn row_count(&self) -> usize {
        self.rhs.len()
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    /// All rows must be added before the first variable.
    pub fn add_row(&mut self, op: RowOp, rhs: f64) -> usize {
        assert!(!self.rows_frozen, "rows must be added before variables");
        let r = self.rhs.len();
        let sign = if op == RowOp::Ge { -1.0 } else { 1.0 };
        self.rhs.push(sign * rhs);
        self.sign.push(sign);
        let (slo, shi) = match op {
            RowOp::Eq => (0.0, 0.0),
            _ => (0.0, f64::INFINITY),
        };
        self.slack_of.push(usize::MAX);
        let slack = self.push_var(slo, shi, 0.0, vec![(r, 1.0)]);
        self.slack_of[r] = slack;
        r
    }

    /// Adds a variable; `col` holds (row, coefficient) in the rows'
    /// original orientation. Starts nonbasic at its lower bound.
    pub fn add_var(&mut self, lo: f64, hi: f64, obj: f64, col: &[(usize, f64)]) -> usize {
        self.rows_frozen = true;
        let mut internal: Vec<(usize, f64)> = col
            .iter()
            .filter(|&&(_, c)| c != 0.0)
            .map(|&(r, c)| (r, self.sign[r] * c))
            .collect();
        internal.sort_unstable_by_key(|&(r, _)| r);
        for w in internal.windows(2) {
            assert!(w[0].0 != w[1].0, "duplicate row in column");
        }
        self.push_var(lo, hi, obj, internal)
    }

    fn push_var(&mut self, lo: f64, hi: f64, obj: f64, col: Vec<(usize, f64)>) -> usize {
        debug_assert!(lo <= hi && lo.is_finite());
        self.vars.push(Var { lo, hi, obj, col });
        self.pos.push(0);
        self.at_upper.push(false);
        self.x.push(lo);
        self.vars.len() - 1
    }

    pub fn set_objective(&mut self, var: usize, obj: f64) {
        self.vars[var].obj = obj;
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        debug_assert!(lo <= hi && lo.is_finite());
        self.vars[var].lo = lo;
        self.vars[var].hi = hi;
        if self.pos[var] == 0 {
            // Snap a nonbasic variable onto the nearest of the new bounds.
            let v = self.x[var];
            if hi.is_finite() && (v - hi).abs() < (v - lo).abs() {
                self.at_upper[var] = true;
                self.x[var] = hi;
            } else {
                self.at_upper[var] = false;
                self.x[var] = lo;
            }
        }
    }

    pub fn value(&self, var: usize) -> f64 {
        self.x[var]
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn objective_value(&self) -> f64 {
        self.vars.iter().zip(&self.x).map(|(v, &x)| v.obj * x).sum()
    }

    /// alpha = B^-1 . col (dense, by basis position).
    fn ftran(&self, col: &[(usize, f64)]) -> Vec<f64> {
        let m = self.row_count();
        let mut alpha = vec![0.0; m];
        for (i, slot) in alpha.iter_mut().enumerate() {
            let row = &self.binv[i * m..(i + 1) * m];
            let mut acc = 0.0;
            for &(r, c) in col {
                acc += row[r] * c;
            }
            *slot = acc;
        }
        alpha
    }

    /// y = v . B^-1 where v is indexed by basis position.
    fn btran(&self, v: &[f64]) -> Vec<f64> {
        let m = self.row_count();
        let mut y = vec![0.0; m];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = &self.binv[i * m..(i + 1) * m];
            for r in 0..m {
                y[r] += vi * row[r];
            }
        }
        y
    }

    fn dot_col(&self, y: &[f64], var: usize) -> f64 {
        self.vars[var].col.iter().map(|&(r, c)| y[r] * c).sum()
    }

    /// Rebuilds B^-1 and the basic values from scratch. A singular basis is
    /// replaced by the all-slack basis, which always exists.
    fn refactor(&mut self) {
        let m = self.row_count();
        if !self.started {
            self.basis = self.slack_of.clone();
            for (i, &v) in self.basis.iter().enumerate() {
                self.pos[v] = i + 1;
            }
            self.started = true;
        }
        if !self.invert_current_basis() {
            // Reset to slacks; displaced variables go to their nearest bound.
            let old = std::mem::take(&mut self.basis);
            for v in old {
                self.pos[v] = 0;
                let (lo, hi) = (self.vars[v].lo, self.vars[v].hi);
                let xv = self.x[v];
                if hi.is_finite() && (xv - hi).abs() < (xv - lo).abs() {
                    self.at_upper[v] = true;
                    self.x[v] = hi;
                } else {
                    self.at_upper[v] = false;
                    self.x[v] = lo;
                }
            }
            self.basis = self.slack_of.clone();
            for i in 0..m {
                self.pos[self.basis[i]] = i + 1;
            }
            let ok = self.invert_current_basis();
            debug_assert!(ok, "slack basis is always invertible");
        }
        self.recompute_basic_values();
        self.pivots_since_refactor = 0;
    }

    fn invert_current_basis(&mut self) -> bool {
        let m = self.row_count();
        // Gauss-Jordan on [B | I] with partial pivoting.
        let mut a = vec![0.0; m * m];
        for (i, &v) in self.basis.iter().enumerate() {
            for &(r, c) in &self.vars[v].col {
                a[r * m + i] = c;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for k in 0..m {
            let mut piv = k;
            let mut best = a[k * m + k].abs();
            for r in k + 1..m {
                let c = a[r * m + k].abs();
                if c > best {
                    best = c;
                    piv = r;
                }
            }
            if best < PIVOT_EPS {
                return false;
            }
            if piv != k {
                for c in 0..m {
                    a.swap(piv * m + c, k * m + c);
                    inv.swap(piv * m + c, k * m + c);
                }
            }
            let d = a[k * m + k];
            for c in 0..m {
                a[k * m + c] /= d;
                inv[k * m + c] /= d;
            }
            for r in 0..m {
                if r == k {
                    continue;
                }
                let f = a[r * m + k];
                if f == 0.0 {
                    continue;
                }
                for c in 0..m {
                    a[r * m + c] -= f * a[k * m + c];
                    inv[r * m + c] -= f * inv[k * m + c];
                }
            }
        }
        // binv maps row space to basis positions: binv[i][r].
        // Gauss-Jordan produced B^-1 with (position, row) layout already.
        self.binv = inv;
        true
    }

    fn recompute_basic_values(&mut self) {
        let m = self.row_count();
        let mut r0 = self.rhs.clone();
        for (v, var) in self.vars.iter().enumerate() {
            if self.pos[v] != 0 {
                continue;
            }
            let xv = self.x[v];
            if xv != 0.0 {
                for &(r, c) in &var.col {
                    r0[r] -= c * xv;
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let xb: f64 = row.iter().zip(&r0).map(|(&b, &r)| b * r).sum();
            self.x[self.basis[i]] = xb;
        }
    }

    fn violation_of(&self, var: usize) -> f64 {
        let v = self.x[var];
        let (lo, hi) = (self.vars[var].lo, self.vars[var].hi);
        if v < lo {
            lo - v
        } else if v > hi {
            v - hi
        } else {
            0.0
        }
    }

    fn total_violation(&self) -> f64 {
        self.basis.iter().map(|&v| self.violation_of(v)).sum()
    }

    /// Maximizes the objective. Returns row duals with the outcome; the
    /// primal values stay readable through [`BoundedLp::values`].
    pub fn solve(&mut self) -> Result<LpOutcome, SolveError> {
        // One pivot budget spans all passes: a basis that keeps slipping
        // out of phase-2 feasibility ends in an honest budget error rather
        // than restarting forever.
        let mut pivots = 0usize;
        loop {
            if let Some(out) = self.solve_pass(&mut pivots)? {
                return Ok(out);
            }
        }
    }

    /// One phase-1 + phase-2 pass. `Ok(None)` asks for a fresh pass after
    /// the basis slipped out of bounds mid-optimization.
    fn solve_pass(&mut self, pivots: &mut usize) -> Result<Option<LpOutcome>, SolveError> {
        self.refactor();
        let mut stalled = 0usize;
        let mut best_w = f64::INFINITY;

        // Phase 1: walk basic variables inside their bounds.
        loop {
            if self
                .basis
                .iter()
                .all(|&b| self.violation_of(b) <= LP_TOL)
            {
                break;
            }
            let m = self.row_count();
            // Classify with the same tolerance as the ratio test: a basic
            // within roundoff of its bound must count as feasible here, or
            // the priced direction can disagree in sign with the true
            // directional derivative of the violation sum.
            let mut slope = vec![0.0; m];
            for (i, &b) in self.basis.iter().enumerate() {
                let xv = self.x[b];
                if xv > self.vars[b].hi + LP_TOL {
                    slope[i] = 1.0;
                } else if xv < self.vars[b].lo - LP_TOL {
                    slope[i] = -1.0;
                }
            }
            let y = self.btran(&slope);
            let bland = stalled > DEGENERATE_LIMIT;
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.vars.len() {
                if self.pos[j] != 0 || self.vars[j].lo == self.vars[j].hi {
                    continue;
                }
                let g = self.dot_col(&y, j);
                // dw/dt when moving j off its bound; want it negative.
                let dw = if self.at_upper[j] { g } else { -g };
                if dw < -LP_TOL {
                    let score = -dw;
                    match enter {
                        Some((_, s)) if !bland && score <= s => {}
                        Some(_) if bland => break,
                        _ => {
                            enter = Some((j, score));
                            if bland {
                                break;
                            }
                        }
                    }
                }
            }
            let Some((j, _)) = enter else {
                // Negated phase-1 prices put the Farkas certificate in the
                // same orientation as optimal duals: minimizing y.(Ax) over
                // the box exceeds y.b, and a candidate column improves the
                // problem exactly when c_j - y.col_j > 0, same as phase 2.
                let mut duals = self.report_duals(&y);
                for d in &mut duals {
                    *d = -*d;
                }
                return Ok(Some(LpOutcome {
                    feasible: false,
                    objective: 0.0,
                    duals,
                    dual_kind: DualKind::Farkas,
                }));
            };
            self.pivot_step(j)?;
            // Anti-cycling keys off realized progress, not step length:
            // micro-steps that technically move but shave nothing off the
            // violation sum must still count toward the Bland switch.
            let w = self.total_violation();
            if w < best_w - 1e-12 {
                best_w = w;
                stalled = 0;
            } else {
                stalled += 1;
            }
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(SolveError::Budget {
                    place: "simplex phase 1",
                    best: self.total_violation(),
                });
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                self.refactor();
            }
        }

        // Phase 2: optimize the real objective.
        stalled = 0;
        let mut best_obj = f64::NEG_INFINITY;
        loop {
            let m = self.row_count();
            let mut cb = vec![0.0; m];
            for (i, &b) in self.basis.iter().enumerate() {
                cb[i] = self.vars[b].obj;
            }
            let y = self.btran(&cb);
            let bland = stalled > DEGENERATE_LIMIT;
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.vars.len() {
                if self.pos[j] != 0 || self.vars[j].lo == self.vars[j].hi {
                    continue;
                }
                let d = self.vars[j].obj - self.dot_col(&y, j);
                let improving = if self.at_upper[j] { -d } else { d };
                if improving > LP_TOL {
                    match enter {
                        Some((_, s)) if !bland && improving <= s => {}
                        Some(_) if bland => break,
                        _ => {
                            enter = Some((j, improving));
                            if bland {
                                break;
                            }
                        }
                    }
                }
            }
            let Some((j, _)) = enter else {
                let duals = self.report_duals(&y);
                return Ok(Some(LpOutcome {
                    feasible: true,
                    objective: self.objective_value(),
                    duals,
                    dual_kind: DualKind::Optimal,
                }));
            };
            self.pivot_step(j)?;
            let obj = self.objective_value();
            if obj > best_obj + 1e-12 {
                best_obj = obj;
                stalled = 0;
            } else {
                stalled += 1;
            }
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(SolveError::Budget {
                    place: "simplex phase 2",
                    best: self.objective_value(),
                });
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                self.refactor();
            }
            // Bound updates between solves and eta-file drift can leave
            // phase 2 walking on an infeasible basis. The bail threshold is
            // per variable and sits well above the phase-1 exit tolerance,
            // so the next pass has actual repair work to do.
            if self.basis.iter().any(|&b| self.violation_of(b) > 1e-7) {
                if std::env::var("LP_DEBUG").is_ok() {
                    let (worst, v) = self
                        .basis
                        .iter()
                        .map(|&b| (b, self.violation_of(b)))
                        .max_by(|a, b| a.1.total_cmp(&b.1))
                        .unwrap();
                    eprintln!(
                        "bail: pivots={} var={} viol={:.3e} x={:.6} lo={} hi={} since_refactor={}",
                        pivots, worst, v, self.x[worst], self.vars[worst].lo,
                        self.vars[worst].hi, self.pivots_since_refactor
                    );
                }
                return Ok(None);
            }
        }
    }

    /// Moves nonbasic `j` off its bound: either flips it to its other bound
    /// or pivots it into the basis at the first blocking basic variable.
    /// Returns the step length.
    fn pivot_step(&mut self, j: usize) -> Result<f64, SolveError> {
        let dir = if self.at_upper[j] { -1.0 } else { 1.0 };
        let col: Vec<(usize, f64)> = self.vars[j].col.clone();
        let alpha = self.ftran(&col);
        let debug_pre: Option<Vec<f64>> = std::env::var("LP_DEBUG")
            .is_ok()
            .then(|| self.basis.iter().map(|&b| self.violation_of(b)).collect());

        let own_range = self.vars[j].hi - self.vars[j].lo;

        // Two-pass ratio test. Pass 1 finds the largest step where every
        // basic stays within HARRIS_TOL of its breakpoint; pass 2 picks the
        // numerically strongest pivot among the blockers inside that step
        // and moves to its exact breakpoint. Near-degenerate near-ties no
        // longer overshoot each other by a fixed time epsilon, which pivot
        // columns with huge entries used to amplify into real violations.
        let mut breaks: Vec<(usize, f64, f64, f64)> = Vec::new(); // (pos, t, target, |rate|)
        let mut t_max = if own_range.is_finite() {
            own_range
        } else {
            f64::INFINITY
        };
        for (i, &b) in self.basis.iter().enumerate() {
            let move_rate = -alpha[i] * dir;
            if move_rate.abs() < RATIO_EPS {
                continue;
            }
            let xb = self.x[b];
            let (lo, hi) = (self.vars[b].lo, self.vars[b].hi);
            // The breakpoint ahead in the travel direction. A variable
            // already beyond a bound and moving further away has none and
            // must not block (clamping it to a bound it never crossed
            // would silently break Ax + s = b).
            let target = if move_rate > 0.0 {
                if xb < lo - LP_TOL {
                    lo
                } else if xb > hi + LP_TOL {
                    f64::INFINITY
                } else {
                    hi
                }
            } else if xb > hi + LP_TOL {
                hi
            } else if xb < lo - LP_TOL {
                f64::NEG_INFINITY
            } else {
                lo
            };
            if !target.is_finite() {
                continue;
            }
            let t = ((target - xb) / move_rate).max(0.0);
            let relaxed = t + HARRIS_TOL / move_rate.abs();
            if relaxed < t_max {
                t_max = relaxed;
            }
            breaks.push((i, t, target, move_rate.abs()));
        }

        let mut leaving: Option<(usize, f64)> = None; // (basis pos, target)
        let mut best_t = own_range;
        let mut best_mag = 0.0;
        for &(i, t, target, mag) in &breaks {
            if t <= t_max && (leaving.is_none() || mag > best_mag) {
                leaving = Some((i, target));
                best_t = t;
                best_mag = mag;
            }
        }

        if leaving.is_none() && !own_range.is_finite() {
            return Err(SolveError::Numerical {
                place: "simplex ratio test",
                msg: "unbounded direction".into(),
            });
        }

        match leaving {
            None => {
                // Bound flip: j travels to its other bound.
                let t = best_t;
                for (i, &b) in self.basis.iter().enumerate() {
                    self.x[b] += -alpha[i] * dir * t;
                }
                self.x[j] += dir * t;
                self.at_upper[j] = !self.at_upper[j];
                if let Some(pre) = &debug_pre {
                    for (i2, &b2) in self.basis.iter().enumerate() {
                        let v2 = self.violation_of(b2);
                        if v2 > pre[i2] + 1e-7 {
                            eprintln!(
                                "flip overshoot: j={j} dir={dir} t={t:.6e} victim={b2} alpha={:.6e} x={:.6e} lo={} hi={}",
                                alpha[i2], self.x[b2], self.vars[b2].lo, self.vars[b2].hi
                            );
                        }
                    }
                }
                Ok(t)
            }
            Some((pos, target)) => {
                let t = best_t;
                if alpha[pos].abs() < PIVOT_EPS {
                    // Numerically useless pivot; rebuild and report no move.
                    self.refactor();
                    return Ok(0.0);
                }
                for (i, &b) in self.basis.iter().enumerate() {
                    self.x[b] += -alpha[i] * dir * t;
                }
                self.x[j] += dir * t;
                let out = self.basis[pos];
                if let Some(pre) = &debug_pre {
                    for (i2, &b2) in self.basis.iter().enumerate() {
                        let v2 = self.violation_of(b2);
                        if v2 > pre[i2] + 1e-7 && i2 != pos {
                            eprintln!(
                                "pivot overshoot: j={j} dir={dir} t={t:.6e} out={out} victim={b2} alpha={:.6e} x={:.6e} lo={} hi={}",
                                alpha[i2], self.x[b2], self.vars[b2].lo, self.vars[b2].hi
                            );
                        }
                    }
                }
                // The leaving variable lands on `target` by construction;
                // snapping only erases roundoff, never real mass.
                debug_assert!((self.x[out] - target).abs() < 1e-6);
                self.x[out] = target;
                self.at_upper[out] = target == self.vars[out].hi && self.vars[out].lo != self.vars[out].hi;
                self.pos[out] = 0;
                self.basis[pos] = j;
                self.pos[j] = pos + 1;
                // Product-form update of B^-1.
                let m = self.row_count();
                let pr = alpha[pos];
                let prow: Vec<f64> = self.binv[pos * m..(pos + 1) * m]
                    .iter()
                    .map(|&v| v / pr)
                    .collect();
                for (i, &f) in alpha.iter().enumerate() {
                    if i == pos || f == 0.0 {
                        continue;
                    }
                    for (r, &pv) in prow.iter().enumerate() {
                        self.binv[i * m + r] -= f * pv;
                    }
                }
                self.binv[pos * m..(pos + 1) * m].copy_from_slice(&prow);
                self.pivots_since_refactor += 1;
                Ok(t)
            }
        }
    }

    fn report_duals(&self, y_internal: &[f64]) -> Vec<f64> {
        y_internal
            .iter()
            .zip(&self.sign)
            .map(|(&y, &s)| y * s)
            .collect()
    }
}
