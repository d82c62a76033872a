//! Finite-memory policies and their replay machinery.
//!
//! A policy's memory is the packed product key: the stage-expanded model
//! state plus one coordinate per tracked automaton. The decision map sends
//! each key that carries flow to a distribution over actions; every other
//! key falls back to the uniform rule. The file form embeds the automaton
//! transition tables, so a saved policy replays on the bare model without
//! any synthesis artifact.

use crate::automata::product::{key_coord, key_exp, pack_key, ProductMdp};
use crate::automata::StageDfa;
use crate::error::EvalError;
use crate::model::Mdp;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Action distributions whose total strays further than this from 1 are
/// rejected at load time.
const DIST_TOL: f64 = 1e-9;

/// Outflow below this is treated as zero and the state falls back to the
/// uniform rule.
pub const PROB_FLOOR: f64 = 1e-12;

/// One decision point: a model state, a stage, and the automaton
/// coordinates reached so far.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub state: String,
    pub stage: u32,
    pub coords: Vec<usize>,
    /// Probability per action, aligned with `Policy::actions`.
    pub dist: Vec<f64>,
}

/// A randomized finite-memory policy in its serializable form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Policy {
    /// Stage cap of the memory; stages advance to this value and then hold.
    pub stages: u32,
    /// Action names in distribution order.
    pub actions: Vec<String>,
    /// Tracked proposition per automaton, aligned with `dfas`.
    pub atoms: Vec<String>,
    pub dfas: Vec<StageDfa>,
    pub entries: Vec<PolicyEntry>,
}

impl Policy {
    /// Normalizes an occupancy witness into a policy. States whose outflow
    /// is below `PROB_FLOOR` get the uniform distribution. `carries` picks
    /// the product states that appear as decision points; everything else
    /// is left to the runner's uniform fallback.
    pub fn from_occupancy(
        product: &ProductMdp,
        carries: impl Fn(usize) -> bool,
        lambda: impl Fn(usize, usize) -> f64,
    ) -> Policy {
        let mdp = product.expanded().base();
        let na = mdp.action_count();
        let n = product.formula_count();
        let mut entries = Vec::new();
        for s in 0..product.state_count() {
            if !carries(s) {
                continue;
            }
            let row: Vec<f64> = (0..na).map(|a| lambda(s, a)).collect();
            let total: f64 = row.iter().sum();
            let dist = if total > PROB_FLOOR {
                row.iter().map(|&v| v / total).collect()
            } else {
                vec![1.0 / na as f64; na]
            };
            entries.push(PolicyEntry {
                state: mdp.state_name(product.base_state(s)).to_string(),
                stage: product.stage(s),
                coords: (0..n).map(|i| product.coord(s, i)).collect(),
                dist,
            });
        }
        Policy {
            stages: product.expanded().horizon(),
            actions: (0..na).map(|a| mdp.action_name(a).to_string()).collect(),
            atoms: (0..n)
                .map(|i| mdp.prop_name(product.atom_of(i)).to_string())
                .collect(),
            dfas: product.dfas().to_vec(),
            entries,
        }
    }

    /// Shape checks that need no model: aligned lengths, stage range, and
    /// near-stochastic distributions.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.stages == 0 {
            return Err(EvalError::Policy("stage cap must be at least 1".into()));
        }
        if self.actions.is_empty() {
            return Err(EvalError::Policy("policy lists no actions".into()));
        }
        if self.atoms.len() != self.dfas.len() {
            return Err(EvalError::Policy(format!(
                "{} atoms for {} automata",
                self.atoms.len(),
                self.dfas.len()
            )));
        }
        for dfa in &self.dfas {
            dfa.validate()
                .map_err(|e| EvalError::Policy(e.to_string()))?;
        }
        for (idx, e) in self.entries.iter().enumerate() {
            if e.stage == 0 || e.stage > self.stages {
                return Err(EvalError::Policy(format!(
                    "entry {idx}: stage {} outside 1..={}",
                    e.stage, self.stages
                )));
            }
            if e.coords.len() != self.dfas.len() {
                return Err(EvalError::Policy(format!(
                    "entry {idx}: {} coordinates for {} automata",
                    e.coords.len(),
                    self.dfas.len()
                )));
            }
            for (i, (&q, dfa)) in e.coords.iter().zip(&self.dfas).enumerate() {
                if q >= dfa.state_count() {
                    return Err(EvalError::Policy(format!(
                        "entry {idx}: coordinate {i} is {q}, automaton has {} states",
                        dfa.state_count()
                    )));
                }
            }
            if e.dist.len() != self.actions.len() {
                return Err(EvalError::Policy(format!(
                    "entry {idx}: {} probabilities for {} actions",
                    e.dist.len(),
                    self.actions.len()
                )));
            }
            let mut total = 0.0;
            for &p in &e.dist {
                if !p.is_finite() || p < -DIST_TOL {
                    return Err(EvalError::Policy(format!(
                        "entry {idx}: bad probability {p}"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > DIST_TOL {
                return Err(EvalError::Policy(format!(
                    "entry {idx}: distribution sums to {total}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Policy, EvalError> {
        let policy: Policy = serde_json::from_str(text)
            .map_err(|e| EvalError::Policy(format!("not a policy file: {e}")))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Policy, EvalError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Binds the policy to a model so it can be executed.
    pub fn runner<'a>(&'a self, mdp: &'a Mdp) -> Result<PolicyRunner<'a>, EvalError> {
        PolicyRunner::new(self, mdp)
    }
}

/// A policy bound to a model: resolves names to indices once and answers
/// key-level queries during propagation and simulation.
pub struct PolicyRunner<'a> {
    mdp: &'a Mdp,
    policy: &'a Policy,
    /// Proposition index per automaton.
    atom_idx: Vec<usize>,
    map: HashMap<u128, usize>,
    uniform: Vec<f64>,
}

impl<'a> PolicyRunner<'a> {
    fn new(policy: &'a Policy, mdp: &'a Mdp) -> Result<Self, EvalError> {
        policy.validate()?;
        if policy.actions.len() != mdp.action_count() {
            return Err(EvalError::ActionMismatch {
                expected: policy.actions.len(),
                got: mdp.action_count(),
            });
        }
        for (a, name) in policy.actions.iter().enumerate() {
            if mdp.action_name(a) != name {
                return Err(EvalError::Policy(format!(
                    "action {a} is `{name}` in the policy but `{}` in the model",
                    mdp.action_name(a)
                )));
            }
        }
        let atom_idx = policy
            .atoms
            .iter()
            .map(|name| {
                mdp.prop_index(name)
                    .ok_or_else(|| EvalError::UnknownProposition(name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ns = mdp.state_count();
        let mut map = HashMap::with_capacity(policy.entries.len());
        for (idx, e) in policy.entries.iter().enumerate() {
            let s = mdp.state_index(&e.state).ok_or_else(|| {
                EvalError::Policy(format!("entry {idx}: unknown state `{}`", e.state))
            })?;
            let exp = (e.stage as usize - 1) * ns + s;
            let key = pack_key(exp, &e.coords);
            if map.insert(key, idx).is_some() {
                return Err(EvalError::Policy(format!(
                    "entry {idx}: duplicate decision point ({}, stage {}, {:?})",
                    e.state, e.stage, e.coords
                )));
            }
        }
        let na = mdp.action_count();
        Ok(PolicyRunner {
            mdp,
            policy,
            atom_idx,
            map,
            uniform: vec![1.0 / na as f64; na],
        })
    }

    /// Memory key at the start of a run. The initial label is consumed
    /// before the first decision.
    pub fn initial_key(&self) -> u128 {
        let s0 = self.mdp.initial();
        let coords: Vec<usize> = self
            .policy
            .dfas
            .iter()
            .zip(&self.atom_idx)
            .map(|(dfa, &p)| dfa.step(dfa.initial, self.mdp.has_prop(s0, p), 1))
            .collect();
        pack_key(s0, &coords)
    }

    /// The action distribution at a key. Keys with no stored entry use the
    /// uniform rule.
    pub fn dist(&self, key: u128) -> &[f64] {
        match self.map.get(&key) {
            Some(&idx) => &self.policy.entries[idx].dist,
            None => &self.uniform,
        }
    }

    /// Advances the memory along a concrete model move. Matches the product
    /// construction: stages saturate at the cap, automata step on the label
    /// of the state being entered.
    pub fn advance(&self, key: u128, next_base: usize) -> u128 {
        let ns = self.mdp.state_count();
        let exp = key_exp(key);
        let t = (exp / ns) as u32 + 1;
        let t2 = if t < self.policy.stages { t + 1 } else { t };
        let exp2 = (t2 as usize - 1) * ns + next_base;
        let coords: Vec<usize> = self
            .policy
            .dfas
            .iter()
            .enumerate()
            .map(|(i, dfa)| {
                dfa.step(
                    key_coord(key, i),
                    self.mdp.has_prop(next_base, self.atom_idx[i]),
                    t2,
                )
            })
            .collect();
        pack_key(exp2, &coords)
    }

    pub fn base_state(&self, key: u128) -> usize {
        key_exp(key) % self.mdp.state_count()
    }

    pub fn stage(&self, key: u128) -> u32 {
        (key_exp(key) / self.mdp.state_count()) as u32 + 1
    }

    pub fn model(&self) -> &Mdp {
        self.mdp
    }

    pub fn policy(&self) -> &Policy {
        self.policy
    }
}
