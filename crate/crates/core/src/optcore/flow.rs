//! Occupancy flows over an acyclic transition structure.
//!
//! The synthesis programs put their occupancy variables on a state graph
//! where no state can repeat, so the graph is a DAG and a unit of mass
//! entering at the initial state induces a bounded flow polytope. The
//! extreme points of that polytope are the occupancies of deterministic
//! action choices, and a linear functional is maximized over it by one
//! backward dynamic-programming sweep. That sweep is the pricing step of the
//! column-generation solver.

use crate::error::SolveError;
use std::collections::VecDeque;

/// An acyclic flow network. Mass that leaves through transitions pointing
/// outside the net simply exits; there are no capacity constraints beyond
/// nonnegativity (per-variable upper bounds live in the program).
#[derive(Debug, Clone)]
pub struct FlowNet {
    /// Net-state index where one unit of mass enters.
    pub initial: usize,
    /// var_of[state][action] = program variable carrying that occupancy.
    pub var_of: Vec<Vec<usize>>,
    /// succ[state][action] = in-net successors with probabilities; entries
    /// may sum to less than 1 when some successors are outside the net.
    pub succ: Vec<Vec<Vec<(usize, f64)>>>,
    topo: Vec<usize>,
}

/// A vertex of the flow polytope: the occupancy of one deterministic choice.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    /// Chosen action per net state (also for states the flow never reaches).
    pub choices: Vec<usize>,
    /// Occupancy by program variable index, ascending, zeros omitted.
    pub occupancy: Vec<(usize, f64)>,
}

impl Column {
    pub fn value(&self, score: &[f64]) -> f64 {
        self.occupancy.iter().map(|&(v, m)| score[v] * m).sum()
    }
}

impl FlowNet {
    pub fn new(
        initial: usize,
        var_of: Vec<Vec<usize>>,
        succ: Vec<Vec<Vec<(usize, f64)>>>,
    ) -> Result<Self, SolveError> {
        let n = var_of.len();
        debug_assert_eq!(succ.len(), n);
        let mut indeg = vec![0usize; n];
        for rows in &succ {
            for row in rows {
                for &(t, _) in row {
                    indeg[t] += 1;
                }
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&s| indeg[s] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(s) = queue.pop_front() {
            topo.push(s);
            for row in &succ[s] {
                for &(t, _) in row {
                    indeg[t] -= 1;
                    if indeg[t] == 0 {
                        queue.push_back(t);
                    }
                }
            }
        }
        if topo.len() != n {
            return Err(SolveError::Numerical {
                place: "flow network",
                msg: "transition structure has a cycle".into(),
            });
        }
        Ok(FlowNet {
            initial,
            var_of,
            succ,
            topo,
        })
    }

    /// An empty net for the degenerate case where the process is settled
    /// before it starts; its only vertex is the zero flow.
    pub fn empty() -> Self {
        FlowNet {
            initial: 0,
            var_of: Vec::new(),
            succ: Vec::new(),
            topo: Vec::new(),
        }
    }

    pub fn state_count(&self) -> usize {
        self.var_of.len()
    }

    pub fn var_count(&self) -> usize {
        self.var_of.iter().map(|r| r.len()).sum()
    }

    /// Maximizes sum_{s,a} score[var_of[s][a]] * occupancy over the flow
    /// polytope. Exact: the optimum of a linear functional sits at a
    /// deterministic choice, found by one backward sweep over a topological
    /// order. Ties pick the smallest action index, so the result is
    /// deterministic.
    pub fn best_vertex(&self, score: &[f64]) -> Column {
        let n = self.state_count();
        if n == 0 {
            return Column {
                choices: Vec::new(),
                occupancy: Vec::new(),
            };
        }
        let mut value = vec![0.0f64; n];
        let mut choices = vec![0usize; n];
        for &s in self.topo.iter().rev() {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for a in 0..self.var_of[s].len() {
                let mut v = score[self.var_of[s][a]];
                for &(t, p) in &self.succ[s][a] {
                    v += p * value[t];
                }
                if v > best {
                    best = v;
                    arg = a;
                }
            }
            value[s] = best;
            choices[s] = arg;
        }
        self.vertex_of(&choices)
    }

    /// Occupancy induced by a fixed action choice per state.
    pub fn vertex_of(&self, choices: &[usize]) -> Column {
        let n = self.state_count();
        let mut mass = vec![0.0f64; n];
        if n > 0 {
            mass[self.initial] = 1.0;
        }
        let mut occupancy = Vec::new();
        for &s in &self.topo {
            let m = mass[s];
            if m <= 0.0 {
                continue;
            }
            let a = choices[s];
            occupancy.push((self.var_of[s][a], m));
            for &(t, p) in &self.succ[s][a] {
                mass[t] += m * p;
            }
        }
        occupancy.sort_unstable_by_key(|&(v, _)| v);
        Column {
            choices: choices.to_vec(),
            occupancy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Layered random DAG: `layers` layers of `width` states, two actions,
    /// each action distributing over next-layer states with some exit mass.
    fn random_net(rng: &mut ChaCha8Rng, layers: usize, width: usize) -> FlowNet {
        let n = layers * width;
        let mut var_of = Vec::with_capacity(n);
        let mut succ = Vec::with_capacity(n);
        let mut var = 0;
        for layer in 0..layers {
            for _ in 0..width {
                let mut vrow = Vec::new();
                let mut srow = Vec::new();
                for _a in 0..2 {
                    vrow.push(var);
                    var += 1;
                    let mut edges = Vec::new();
                    if layer + 1 < layers {
                        let mut left = 1.0;
                        for w in 0..width {
                            let p = if w + 1 == width {
                                // Keep some exit probability now and then.
                                if rng.gen_bool(0.3) {
                                    left * 0.5
                                } else {
                                    left
                                }
                            } else {
                                rng.gen_range(0.0..left)
                            };
                            if p > 0.0 {
                                edges.push(((layer + 1) * width + w, p));
                            }
                            left -= p;
                        }
                    }
                    srow.push(edges);
                }
                var_of.push(vrow);
                succ.push(srow);
            }
        }
        FlowNet::new(0, var_of, succ).unwrap()
    }

    fn brute_force_best(net: &FlowNet, score: &[f64]) -> f64 {
        let n = net.state_count();
        let mut best = f64::NEG_INFINITY;
        let combos = 1usize << n;
        assert!(n <= 16, "brute force only for tiny nets");
        for bits in 0..combos {
            let choices: Vec<usize> = (0..n).map(|s| bits >> s & 1).collect();
            let v = net.vertex_of(&choices).value(score);
            if v > best {
                best = v;
            }
        }
        best
    }

    #[test]
    fn pricing_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let net = random_net(&mut rng, 3, 3);
            let score: Vec<f64> = (0..net.var_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dp = net.best_vertex(&score).value(&score);
            let brute = brute_force_best(&net, &score);
            assert!(
                (dp - brute).abs() < 1e-12,
                "dp {dp} vs brute force {brute}"
            );
        }
    }

    #[test]
    fn occupancy_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(&mut rng, 4, 2);
        let score: Vec<f64> = (0..net.var_count()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let col = net.best_vertex(&score);
        // Initial state carries mass exactly 1.
        let m0: f64 = col
            .occupancy
            .iter()
            .filter(|&&(v, _)| net.var_of[net.initial].contains(&v))
            .map(|&(_, m)| m)
            .sum();
        assert!((m0 - 1.0).abs() < 1e-12);
        for &(_, m) in &col.occupancy {
            assert!(m > 0.0 && m <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn cycles_are_rejected() {
        let var_of = vec![vec![0], vec![1]];
        let succ = vec![vec![vec![(1, 1.0)]], vec![vec![(0, 1.0)]]];
        assert!(matches!(
            FlowNet::new(0, var_of, succ),
            Err(SolveError::Numerical { .. })
        ));
    }

    #[test]
    fn empty_net_has_zero_vertex() {
        let net = FlowNet::empty();
        let col = net.best_vertex(&[]);
        assert!(col.occupancy.is_empty());
    }
}
