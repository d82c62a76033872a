//! Maximizes the entropy gap g(v) = f1(v) - theta * f2(v) over a convex
//! polytope reached through a linear-minimization oracle.
//!
//! f1 is the unnormalized entropy -sum v_k log2(v_k / S) with S = sum v_k,
//! f2 = S, both in bits. f1 is concave (it is a negated relative entropy
//! against the uniform scaling of S), so g is concave and the feasibility
//! question "is max g >= 0" answers whether entropy level theta is
//! attainable. The maximizer is a fully corrective conditional-gradient
//! loop: the oracle proposes polytope points for the current gradient, a
//! pairwise reweighting step then reoptimizes over the convex hull of
//! everything proposed so far. The atom pool persists across theta values
//! because the polytope does not move when only the objective does.

use crate::error::SolveError;
use crate::program::FEAS_TOL;

/// Probabilities below this are treated as zero inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Conditional-gradient gap at which the maximum counts as reached.
pub const CONV_TOL: f64 = 1e-6;
/// Outer iteration budget for one maximization call.
pub const FW_BUDGET: usize = 5000;

const PAIRWISE_TOL: f64 = 1e-10;
const INNER_ROUNDS: usize = 200;

/// Entropy in bits of the distribution obtained by normalizing `nu`.
/// Zero mass yields zero entropy.
pub fn entropy_bits(nu: &[f64]) -> f64 {
    let total: f64 = nu.iter().map(|&v| v.max(0.0)).sum();
    if total <= PROB_FLOOR {
        return 0.0;
    }
    let mut h = 0.0;
    for &v in nu {
        let p = v.max(0.0) / total;
        if p > PROB_FLOOR {
            h -= p * p.log2();
        }
    }
    h
}

/// f1(nu) = -sum nu_k log2(nu_k / S); the 0 log 0 terms drop out.
pub fn f1(nu: &[f64]) -> f64 {
    let total: f64 = nu.iter().map(|&v| v.max(0.0)).sum();
    if total <= PROB_FLOOR {
        return 0.0;
    }
    let mut acc = 0.0;
    for &v in nu {
        let v = v.max(0.0);
        if v > PROB_FLOOR {
            acc -= v * (v / total).log2();
        }
    }
    acc
}

/// g(nu) = f1(nu) - theta * sum(nu).
pub fn gap_value(nu: &[f64], theta: f64) -> f64 {
    let total: f64 = nu.iter().map(|&v| v.max(0.0)).sum();
    f1(nu) - theta * total
}

/// Gradient of g: dg/dnu_k = -log2(nu_k / S) - theta, with nu floored at
/// [`PROB_FLOOR`] inside the logarithm.
pub fn gap_gradient(nu: &[f64], theta: f64, out: &mut [f64]) {
    let total: f64 = nu.iter().map(|&v| v.max(0.0)).sum::<f64>().max(PROB_FLOOR);
    for (o, &v) in out.iter_mut().zip(nu) {
        let p = v.max(PROB_FLOOR) / total;
        *o = -p.log2() - theta;
    }
}

/// How a maximization call ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapVerdict {
    /// Conditional-gradient gap fell below [`CONV_TOL`].
    Maximized,
    /// Early exit: the current point already clears g >= -feasTol.
    FeasiblePoint,
    /// Certified: g + gap < -feasTol, so no point of the polytope reaches 0.
    Infeasible,
    /// The oracle reported an empty polytope.
    EmptyPolytope,
    /// Budget ran out first; value and gap describe the best point found.
    Budget,
}

#[derive(Debug, Clone)]
pub struct GapOutcome {
    pub verdict: GapVerdict,
    /// Best point in full program-variable space; empty when the polytope is.
    pub point: Vec<f64>,
    /// Its entropy-term projection.
    pub nu: Vec<f64>,
    /// g at the point.
    pub value: f64,
    /// Final conditional-gradient gap (an upper bound on sup g - value).
    pub gap: f64,
    pub iterations: usize,
}

/// Polytope points proposed so far, with the hull weights of the current
/// iterate. Reusable across theta values for the same polytope.
#[derive(Debug, Clone, Default)]
pub struct AtomPool {
    atoms: Vec<Vec<f64>>,
    nus: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl AtomPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn push(&mut self, atom: Vec<f64>, entropy_vars: &[usize], weight: f64) {
        let nu = entropy_vars.iter().map(|&v| atom[v].max(0.0)).collect();
        self.atoms.push(atom);
        self.nus.push(nu);
        self.weights.push(weight);
    }

    fn contains(&self, atom: &[f64]) -> bool {
        self.atoms.iter().any(|a| {
            a.iter()
                .zip(atom)
                .all(|(x, y)| (x - y).abs() <= 1e-12)
        })
    }

    fn normalize(&mut self) {
        let total: f64 = self.weights.iter().sum();
        if total > 1e-12 {
            for w in &mut self.weights {
                *w /= total;
            }
        } else if !self.weights.is_empty() {
            let u = 1.0 / self.weights.len() as f64;
            for w in &mut self.weights {
                *w = u;
            }
        }
    }

    fn current_nu(&self) -> Vec<f64> {
        let e = self.nus.first().map_or(0, Vec::len);
        let mut nu = vec![0.0; e];
        for (w, anu) in self.weights.iter().zip(&self.nus) {
            if *w > 0.0 {
                for (acc, &v) in nu.iter_mut().zip(anu) {
                    *acc += w * v;
                }
            }
        }
        nu
    }

    fn current_point(&self) -> Vec<f64> {
        let n = self.atoms.first().map_or(0, Vec::len);
        let mut p = vec![0.0; n];
        for (w, atom) in self.weights.iter().zip(&self.atoms) {
            if *w > 0.0 {
                for (acc, &v) in p.iter_mut().zip(atom) {
                    *acc += w * v;
                }
            }
        }
        p
    }

    /// Pairwise reweighting to a fixed point of g over the current hull:
    /// shift mass from the worst supported atom to the best one, step size
    /// by exact line search, until the pairwise gap closes.
    fn correct(&mut self, theta: f64) {
        self.normalize();
        if self.atoms.len() < 2 {
            return;
        }
        let e = self.nus[0].len();
        let mut grad = vec![0.0; e];
        for _ in 0..INNER_ROUNDS {
            let nu = self.current_nu();
            gap_gradient(&nu, theta, &mut grad);
            let mut fw = 0;
            let mut fw_val = f64::NEG_INFINITY;
            let mut aw = None;
            let mut aw_val = f64::INFINITY;
            for (i, anu) in self.nus.iter().enumerate() {
                let d: f64 = grad.iter().zip(anu).map(|(g, v)| g * v).sum();
                if d > fw_val {
                    fw = i;
                    fw_val = d;
                }
                if self.weights[i] > 1e-15 && d < aw_val {
                    aw = Some(i);
                    aw_val = d;
                }
            }
            let Some(aw) = aw else { break };
            if fw == aw || fw_val - aw_val <= PAIRWISE_TOL {
                break;
            }
            let cap = self.weights[aw];
            let fw_nu = self.nus[fw].clone();
            let aw_nu = self.nus[aw].clone();
            let t = golden_max(
                |t| {
                    let mixed: Vec<f64> = nu
                        .iter()
                        .zip(&fw_nu)
                        .zip(&aw_nu)
                        .map(|((&z, &f), &a)| z + t * (f - a))
                        .collect();
                    gap_value(&mixed, theta)
                },
                0.0,
                cap,
            );
            if t <= 0.0 {
                break;
            }
            self.weights[fw] += t;
            self.weights[aw] -= t;
            if self.weights[aw] < 1e-15 {
                self.weights[aw] = 0.0;
            }
        }
    }
}

/// Golden-section search for the maximum of a concave `f` on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if b - a < 1e-14 {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // The ends are candidates too: the cap may sit on the true maximizer.
    let ends = [(lo, f(lo)), (hi, f(hi)), (mid, f(mid))];
    ends.iter()
        .fold((mid, f64::NEG_INFINITY), |best, &(t, v)| {
            if v > best.1 {
                (t, v)
            } else {
                best
            }
        })
        .0
}

/// Maximizes g over the polytope behind `lmo`. The oracle receives a sparse
/// objective (entropy variables only) and must return a g-feasible point
/// maximizing it, or None when the polytope is empty.
///
/// With `stop_on_feasible` the loop returns as soon as the current point
/// certifies g >= -feasTol; bisection uses that to answer feasibility
/// without polishing. Infeasibility is certified through the concavity
/// bound sup g <= g(z) + gap(z).
pub fn maximize_gap<L>(
    lmo: &mut L,
    entropy_vars: &[usize],
    theta: f64,
    pool: &mut AtomPool,
    stop_on_feasible: bool,
) -> Result<GapOutcome, SolveError>
where
    L: FnMut(&[(usize, f64)]) -> Result<Option<Vec<f64>>, SolveError>,
{
    if pool.is_empty() {
        let obj: Vec<(usize, f64)> = entropy_vars.iter().map(|&v| (v, 1.0)).collect();
        match lmo(&obj)? {
            None => {
                return Ok(GapOutcome {
                    verdict: GapVerdict::EmptyPolytope,
                    point: Vec::new(),
                    nu: Vec::new(),
                    value: f64::NEG_INFINITY,
                    gap: 0.0,
                    iterations: 0,
                })
            }
            Some(atom) => pool.push(atom, entropy_vars, 1.0),
        }
    }

    let mut grad = vec![0.0; entropy_vars.len()];
    let mut last = (f64::NEG_INFINITY, f64::INFINITY);
    for it in 0..FW_BUDGET {
        pool.correct(theta);
        let nu = pool.current_nu();
        let value = gap_value(&nu, theta);
        gap_gradient(&nu, theta, &mut grad);
        let obj: Vec<(usize, f64)> = entropy_vars
            .iter()
            .zip(&grad)
            .map(|(&v, &c)| (v, c))
            .collect();
        let Some(cand) = lmo(&obj)? else {
            return Ok(GapOutcome {
                verdict: GapVerdict::EmptyPolytope,
                point: Vec::new(),
                nu: Vec::new(),
                value: f64::NEG_INFINITY,
                gap: 0.0,
                iterations: it,
            });
        };
        let lin_cur: f64 = grad.iter().zip(&nu).map(|(g, v)| g * v).sum();
        let lin_cand: f64 = entropy_vars
            .iter()
            .zip(&grad)
            .map(|(&v, &g)| g * cand[v].max(0.0))
            .sum();
        let gap = (lin_cand - lin_cur).max(0.0);
        last = (value, gap);

        let done = |verdict| {
            Ok(GapOutcome {
                verdict,
                point: pool.current_point(),
                nu: nu.clone(),
                value,
                gap,
                iterations: it + 1,
            })
        };
        if stop_on_feasible && value >= -FEAS_TOL {
            return done(GapVerdict::FeasiblePoint);
        }
        if value + gap < -FEAS_TOL {
            return done(GapVerdict::Infeasible);
        }
        if gap <= CONV_TOL || pool.contains(&cand) {
            // A repeated atom means the remaining gap is oracle roundoff:
            // the hull already holds that point, so the bound is stale.
            return done(GapVerdict::Maximized);
        }
        pool.push(cand, entropy_vars, 0.0);
    }

    Ok(GapOutcome {
        verdict: GapVerdict::Budget,
        point: pool.current_point(),
        nu: pool.current_nu(),
        value: last.0,
        gap: last.1,
        iterations: FW_BUDGET,
    })
}
