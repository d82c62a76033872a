//! Labeled MDPs, their JSON loader, and the stage-expanded process used by
//! the synthesis pipeline.

use crate::error::ModelError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// A finite, fully probabilistic MDP with atomic-proposition labels.
///
/// Every action is enabled in every state and every transition row is a
/// probability distribution; the loader enforces both.
#[derive(Debug, Clone)]
pub struct Mdp {
    state_names: Vec<String>,
    action_names: Vec<String>,
    prop_names: Vec<String>,
    initial: usize,
    /// transitions[s][a] = successor list, probabilities summing to 1.
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// labels[s] = set of proposition indices.
    labels: Vec<BTreeSet<usize>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ModelFile {
    states: Vec<String>,
    initial: String,
    actions: Vec<String>,
    transitions: Vec<TransitionRecord>,
    #[serde(default)]
    labels: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct TransitionRecord {
    from: String,
    action: String,
    to: String,
    prob: f64,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl Mdp {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        if file.states.is_empty() {
            return Err(ModelError::Empty);
        }
        if file.actions.is_empty() {
            return Err(ModelError::NoActions);
        }
        let mut state_idx = BTreeMap::new();
        for (i, name) in file.states.iter().enumerate() {
            if state_idx.insert(name.clone(), i).is_some() {
                return Err(ModelError::DuplicateState(name.clone()));
            }
        }
        let mut action_idx = BTreeMap::new();
        for (i, name) in file.actions.iter().enumerate() {
            if action_idx.insert(name.clone(), i).is_some() {
                return Err(ModelError::DuplicateAction(name.clone()));
            }
        }
        let initial = *state_idx
            .get(&file.initial)
            .ok_or_else(|| ModelError::UnknownInitial(file.initial.clone()))?;

        let ns = file.states.len();
        let na = file.actions.len();
        let mut transitions = vec![vec![Vec::new(); na]; ns];
        let mut seen = BTreeSet::new();
        for (index, rec) in file.transitions.iter().enumerate() {
            let s = *state_idx.get(&rec.from).ok_or(ModelError::UnknownState {
                index,
                name: rec.from.clone(),
            })?;
            let a = *action_idx
                .get(&rec.action)
                .ok_or(ModelError::UnknownAction {
                    index,
                    name: rec.action.clone(),
                })?;
            let t = *state_idx.get(&rec.to).ok_or(ModelError::UnknownState {
                index,
                name: rec.to.clone(),
            })?;
            if !(0.0..=1.0).contains(&rec.prob) || !rec.prob.is_finite() {
                return Err(ModelError::BadProbability {
                    index,
                    prob: rec.prob,
                });
            }
            if !seen.insert((s, a, t)) {
                return Err(ModelError::DuplicateTransition {
                    state: rec.from.clone(),
                    action: rec.action.clone(),
                    next: rec.to.clone(),
                });
            }
            if rec.prob > 0.0 {
                transitions[s][a].push((t, rec.prob));
            }
        }

        // Every (state, action) row must exist and sum to 1 within tolerance;
        // rows are renormalized so downstream code can rely on exact sums.
        for (s, srow) in transitions.iter_mut().enumerate() {
            for (a, row) in srow.iter_mut().enumerate() {
                if row.is_empty() {
                    return Err(ModelError::MissingAction {
                        state: file.states[s].clone(),
                        action: file.actions[a].clone(),
                    });
                }
                let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(ModelError::RowSum {
                        state: file.states[s].clone(),
                        action: file.actions[a].clone(),
                        sum,
                    });
                }
                for entry in row.iter_mut() {
                    entry.1 /= sum;
                }
                row.sort_by_key(|&(t, _)| t);
            }
        }

        // Atomic propositions are the (sorted) union of all label sets.
        let mut prop_idx = BTreeMap::new();
        for (state, props) in &file.labels {
            if !state_idx.contains_key(state) {
                return Err(ModelError::LabelUnknownState(state.clone()));
            }
            for p in props {
                let next = prop_idx.len();
                prop_idx.entry(p.clone()).or_insert(next);
            }
        }
        // Re-sort so indices are alphabetical regardless of file order.
        let mut prop_names: Vec<String> = prop_idx.keys().cloned().collect();
        prop_names.sort();
        let prop_idx: BTreeMap<String, usize> = prop_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();

        let mut labels = vec![BTreeSet::new(); ns];
        for (state, props) in &file.labels {
            let s = state_idx[state];
            for p in props {
                labels[s].insert(prop_idx[p]);
            }
        }

        Ok(Mdp {
            state_names: file.states,
            action_names: file.actions,
            prop_names,
            initial,
            transitions,
            labels,
        })
    }

    pub fn state_count(&self) -> usize {
        self.state_names.len()
    }

    pub fn action_count(&self) -> usize {
        self.action_names.len()
    }

    pub fn prop_count(&self) -> usize {
        self.prop_names.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.state_names[s]
    }

    pub fn action_name(&self, a: usize) -> &str {
        &self.action_names[a]
    }

    pub fn prop_name(&self, p: usize) -> &str {
        &self.prop_names[p]
    }

    pub fn prop_index(&self, name: &str) -> Option<usize> {
        self.prop_names.iter().position(|n| n == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.action_names.iter().position(|n| n == name)
    }

    /// Successor distribution of (state, action); probabilities sum to 1.
    pub fn succ(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s][a]
    }

    pub fn label(&self, s: usize) -> &BTreeSet<usize> {
        &self.labels[s]
    }

    pub fn has_prop(&self, s: usize, p: usize) -> bool {
        self.labels[s].contains(&p)
    }

    /// Stage-expanded process: states (s, t) with t in 1..=horizon. The stage
    /// advances by exactly 1 per step until it saturates at `horizon`; the
    /// label of (s, t) is the base label plus the stage marker t.
    pub fn expand(&self, horizon: u32) -> Result<ExpandedMdp, ModelError> {
        if horizon == 0 {
            return Err(ModelError::ZeroHorizon);
        }
        Ok(ExpandedMdp {
            base: self.clone(),
            horizon,
        })
    }
}

/// The product of an MDP with the stage counter 1..=horizon. States are
/// indexed layer-major: idx = (t - 1) * |S| + s, so index order is a
/// topological order of the strictly stage-increasing part.
#[derive(Debug, Clone)]
pub struct ExpandedMdp {
    base: Mdp,
    horizon: u32,
}

impl ExpandedMdp {
    pub fn base(&self) -> &Mdp {
        &self.base
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn state_count(&self) -> usize {
        self.base.state_count() * self.horizon as usize
    }

    pub fn action_count(&self) -> usize {
        self.base.action_count()
    }

    pub fn index_of(&self, s: usize, t: u32) -> usize {
        debug_assert!(t >= 1 && t <= self.horizon);
        (t as usize - 1) * self.base.state_count() + s
    }

    pub fn base_state(&self, idx: usize) -> usize {
        idx % self.base.state_count()
    }

    pub fn stage(&self, idx: usize) -> u32 {
        (idx / self.base.state_count()) as u32 + 1
    }

    pub fn initial_index(&self) -> usize {
        self.index_of(self.base.initial(), 1)
    }

    /// Successors of an expanded state under an action. The stage coordinate
    /// advances until `horizon` and then holds.
    pub fn succ(&self, idx: usize, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.base_state(idx);
        let t = self.stage(idx);
        let t_next = if t < self.horizon { t + 1 } else { t };
        self.base
            .succ(s, a)
            .iter()
            .map(move |&(sp, p)| (self.index_of(sp, t_next), p))
    }
}

/// A realized state sequence on an MDP, starting at the initial state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
}

impl Trajectory {
    /// Checks that consecutive pairs are reachable under at least one action.
    pub fn validate(&self, mdp: &Mdp) -> Result<(), ModelError> {
        for (step, win) in self.states.windows(2).enumerate() {
            let (s, t) = (win[0], win[1]);
            let ok = (0..mdp.action_count())
                .any(|a| mdp.succ(s, a).iter().any(|&(sp, p)| sp == t && p > 0.0));
            if !ok {
                return Err(ModelError::BrokenTrajectory {
                    step,
                    from: mdp.state_name(s).to_string(),
                    to: mdp.state_name(t).to_string(),
                });
            }
        }
        Ok(())
    }

    /// The label word induced by the trajectory (base labels only; stage
    /// markers are implicit in the position).
    pub fn word<'a>(&'a self, mdp: &'a Mdp) -> impl Iterator<Item = &'a BTreeSet<usize>> + 'a {
        self.states.iter().map(move |&s| mdp.label(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"{
        "states": ["a", "b"],
        "initial": "a",
        "actions": ["stay", "go"],
        "transitions": [
            {"from": "a", "action": "stay", "to": "a", "prob": 1.0},
            {"from": "a", "action": "go",   "to": "b", "prob": 0.9},
            {"from": "a", "action": "go",   "to": "a", "prob": 0.1},
            {"from": "b", "action": "stay", "to": "b", "prob": 1.0},
            {"from": "b", "action": "go",   "to": "a", "prob": 1.0}
        ],
        "labels": {"b": ["goal"]}
    }"#;

    #[test]
    fn loads_and_indexes() {
        let m = Mdp::from_json_str(TOY).unwrap();
        assert_eq!(m.state_count(), 2);
        assert_eq!(m.action_count(), 2);
        assert_eq!(m.initial(), 0);
        assert_eq!(m.prop_index("goal"), Some(0));
        assert!(m.has_prop(1, 0));
        assert!(!m.has_prop(0, 0));
        let row = m.succ(0, 1);
        assert_eq!(row.len(), 2);
        let sum: f64 = row.iter().map(|&(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_missing_action_row() {
        let text = r#"{
            "states": ["a"], "initial": "a", "actions": ["x", "y"],
            "transitions": [{"from": "a", "action": "x", "to": "a", "prob": 1.0}],
            "labels": {}
        }"#;
        match Mdp::from_json_str(text) {
            Err(ModelError::MissingAction { state, action }) => {
                assert_eq!(state, "a");
                assert_eq!(action, "y");
            }
            other => panic!("expected MissingAction, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_row_sum() {
        let text = r#"{
            "states": ["a"], "initial": "a", "actions": ["x"],
            "transitions": [{"from": "a", "action": "x", "to": "a", "prob": 0.5}],
            "labels": {}
        }"#;
        assert!(matches!(
            Mdp::from_json_str(text),
            Err(ModelError::RowSum { .. })
        ));
    }

    #[test]
    fn renormalizes_near_one_rows() {
        let text = r#"{
            "states": ["a"], "initial": "a", "actions": ["x"],
            "transitions": [
                {"from": "a", "action": "x", "to": "a", "prob": 0.9999999999}
            ],
            "labels": {}
        }"#;
        let m = Mdp::from_json_str(text).unwrap();
        assert_eq!(m.succ(0, 0), &[(0, 1.0)]);
    }

    #[test]
    fn rejects_duplicate_transition() {
        let text = r#"{
            "states": ["a"], "initial": "a", "actions": ["x"],
            "transitions": [
                {"from": "a", "action": "x", "to": "a", "prob": 0.5},
                {"from": "a", "action": "x", "to": "a", "prob": 0.5}
            ],
            "labels": {}
        }"#;
        assert!(matches!(
            Mdp::from_json_str(text),
            Err(ModelError::DuplicateTransition { .. })
        ));
    }

    #[test]
    fn expansion_counts_and_stages() {
        let m = Mdp::from_json_str(TOY).unwrap();
        let e = m.expand(5).unwrap();
        assert_eq!(e.state_count(), 10);
        let i0 = e.initial_index();
        assert_eq!(e.stage(i0), 1);
        assert_eq!(e.base_state(i0), 0);
        // Stage advances by one, then saturates.
        let mut idx = i0;
        for want in [2u32, 3, 4, 5, 5, 5] {
            let (next, p) = e.succ(idx, 0).next().unwrap();
            assert_eq!(p, 1.0);
            assert_eq!(e.stage(next), want);
            idx = next;
        }
    }

    #[test]
    fn expansion_preserves_base_probabilities() {
        let m = Mdp::from_json_str(TOY).unwrap();
        let e = m.expand(3).unwrap();
        for s in 0..m.state_count() {
            for t in 1..=3u32 {
                let idx = e.index_of(s, t);
                for a in 0..m.action_count() {
                    let got: Vec<(usize, f64)> =
                        e.succ(idx, a).map(|(i, p)| (e.base_state(i), p)).collect();
                    let want: Vec<(usize, f64)> = m.succ(s, a).to_vec();
                    assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn zero_horizon_rejected() {
        let m = Mdp::from_json_str(TOY).unwrap();
        assert!(matches!(m.expand(0), Err(ModelError::ZeroHorizon)));
    }

    #[test]
    fn trajectory_validation() {
        let m = Mdp::from_json_str(TOY).unwrap();
        Trajectory {
            states: vec![0, 1, 1],
        }
        .validate(&m)
        .unwrap();
        // A chain model has a genuinely unreachable pair (x -> z skips y).
        let chain = r#"{
            "states": ["x", "y", "z"], "initial": "x", "actions": ["f"],
            "transitions": [
                {"from": "x", "action": "f", "to": "y", "prob": 1.0},
                {"from": "y", "action": "f", "to": "z", "prob": 1.0},
                {"from": "z", "action": "f", "to": "z", "prob": 1.0}
            ],
            "labels": {}
        }"#;
        let c = Mdp::from_json_str(chain).unwrap();
        assert!(Trajectory {
            states: vec![0, 2]
        }
        .validate(&c)
        .is_err());
    }
}
