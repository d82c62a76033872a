//! Synchronous product of the stage-expanded MDP with one terminal-extended
//! DFA per candidate formula.
//!
//! States are (expanded state, automaton vector) packed into a `u128` key;
//! only states reachable from the initial key are materialized, and the
//! final numbering is the ascending key order, so identical inputs always
//! produce the identical product.

use super::dfa::StageDfa;
use crate::error::AutomataError;
use crate::model::{ExpandedMdp, Mdp};
use crate::speclang::SpecFormula;
use std::collections::HashMap;

/// Packing limit: 16 bits per automaton coordinate.
pub const MAX_COMPONENTS: usize = 6;

const EXP_SHIFT: u32 = 96;

fn coord_shift(i: usize) -> u32 {
    80 - 16 * i as u32
}

/// Packs an expanded-state index and automaton coordinates into a memory
/// key. Policies store and advance these keys, so the layout is shared.
pub fn pack_key(exp: usize, coords: &[usize]) -> u128 {
    let mut key = (exp as u128) << EXP_SHIFT;
    for (i, &q) in coords.iter().enumerate() {
        key |= (q as u128) << coord_shift(i);
    }
    key
}

pub fn key_exp(key: u128) -> usize {
    (key >> EXP_SHIFT) as usize
}

pub fn key_coord(key: u128, i: usize) -> usize {
    (key >> coord_shift(i)) as usize & 0xffff
}

/// The product process. Every automaton is terminal-extended, so for each
/// formula the expected number of visits to its accepting coordinates equals
/// its satisfaction probability.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    expanded: ExpandedMdp,
    dfas: Vec<StageDfa>,
    /// Proposition index tracked by each automaton.
    atoms: Vec<usize>,
    /// Ascending packed keys; position = product state index.
    keys: Vec<u128>,
    trans: Vec<Vec<Vec<(usize, f64)>>>,
    initial: usize,
    /// accepting[i] = sorted product states whose i-th coordinate accepts.
    accepting: Vec<Vec<usize>>,
    /// True where every coordinate is absorbing: nothing about any formula
    /// can change from here on.
    absorbing: Vec<bool>,
}

impl ProductMdp {
    pub fn build(
        mdp: &Mdp,
        formulas: &[SpecFormula],
        stages: u32,
    ) -> Result<Self, AutomataError> {
        if formulas.len() > MAX_COMPONENTS {
            return Err(AutomataError::TooManyComponents {
                max: MAX_COMPONENTS,
                got: formulas.len(),
            });
        }
        if stages == 0 {
            return Err(AutomataError::HorizonTooSmall {
                given: 0,
                needed: 1,
            });
        }
        let mut atoms = Vec::with_capacity(formulas.len());
        let mut dfas = Vec::with_capacity(formulas.len());
        for f in formulas {
            let atom = mdp
                .prop_index(&f.atom)
                .ok_or_else(|| AutomataError::UnknownAtom(f.atom.clone()))?;
            let dfa = StageDfa::build(f, stages)?.with_terminal();
            if dfa.state_count() > 1 << 16 {
                return Err(AutomataError::Internal(format!(
                    "automaton for `{f}` has {} states, over the packing limit",
                    dfa.state_count()
                )));
            }
            atoms.push(atom);
            dfas.push(dfa);
        }
        let expanded = mdp
            .expand(stages)
            .map_err(|e| AutomataError::Internal(e.to_string()))?;

        let step_all = |exp_next: usize, qs: &[usize], out: &mut Vec<usize>| {
            let s = expanded.base_state(exp_next);
            let t = expanded.stage(exp_next);
            out.clear();
            for (i, dfa) in dfas.iter().enumerate() {
                out.push(dfa.step(qs[i], mdp.has_prop(s, atoms[i]), t));
            }
        };

        // The initial coordinate vector already consumed the initial label.
        let exp0 = expanded.initial_index();
        let mut q0 = Vec::new();
        step_all(exp0, &vec_inits(&dfas), &mut q0);
        let key0 = pack_key(exp0, &q0);

        let mut seen: HashMap<u128, ()> = HashMap::new();
        let mut frontier = vec![key0];
        seen.insert(key0, ());
        let mut scratch = Vec::new();
        while let Some(key) = frontier.pop() {
            let exp = key_exp(key);
            let qs: Vec<usize> = (0..dfas.len())
                .map(|i| key_coord(key, i))
                .collect();
            for a in 0..expanded.action_count() {
                for (exp2, _) in expanded.succ(exp, a) {
                    step_all(exp2, &qs, &mut scratch);
                    let k2 = pack_key(exp2, &scratch);
                    if seen.insert(k2, ()).is_none() {
                        frontier.push(k2);
                    }
                }
            }
        }

        let mut keys: Vec<u128> = seen.into_keys().collect();
        keys.sort_unstable();
        let index: HashMap<u128, usize> =
            keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();

        let na = expanded.action_count();
        let mut trans = Vec::with_capacity(keys.len());
        let mut accepting = vec![Vec::new(); dfas.len()];
        let mut absorbing = Vec::with_capacity(keys.len());
        for (idx, &key) in keys.iter().enumerate() {
            let exp = key_exp(key);
            let qs: Vec<usize> = (0..dfas.len())
                .map(|i| key_coord(key, i))
                .collect();
            for (i, dfa) in dfas.iter().enumerate() {
                if dfa.is_accepting(qs[i]) {
                    accepting[i].push(idx);
                }
            }
            absorbing.push(
                dfas.iter()
                    .zip(&qs)
                    .all(|(dfa, &q)| dfa.is_absorbing(q)),
            );
            let mut rows = Vec::with_capacity(na);
            for a in 0..na {
                let mut row = Vec::new();
                for (exp2, p) in expanded.succ(exp, a) {
                    step_all(exp2, &qs, &mut scratch);
                    row.push((index[&pack_key(exp2, &scratch)], p));
                }
                rows.push(row);
            }
            trans.push(rows);
        }

        Ok(ProductMdp {
            expanded,
            dfas,
            atoms,
            initial: index[&key0],
            keys,
            trans,
            accepting,
            absorbing,
        })
    }

    pub fn state_count(&self) -> usize {
        self.keys.len()
    }

    pub fn action_count(&self) -> usize {
        self.expanded.action_count()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn succ(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.trans[state][action]
    }

    pub fn key(&self, state: usize) -> u128 {
        self.keys[state]
    }

    pub fn index_of_key(&self, key: u128) -> Option<usize> {
        self.keys.binary_search(&key).ok()
    }

    pub fn exp_of(&self, state: usize) -> usize {
        key_exp(self.keys[state])
    }

    pub fn base_state(&self, state: usize) -> usize {
        self.expanded.base_state(self.exp_of(state))
    }

    pub fn stage(&self, state: usize) -> u32 {
        self.expanded.stage(self.exp_of(state))
    }

    pub fn coord(&self, state: usize, i: usize) -> usize {
        key_coord(self.keys[state], i)
    }

    pub fn formula_count(&self) -> usize {
        self.dfas.len()
    }

    pub fn dfas(&self) -> &[StageDfa] {
        &self.dfas
    }

    pub fn atom_of(&self, i: usize) -> usize {
        self.atoms[i]
    }

    pub fn expanded(&self) -> &ExpandedMdp {
        &self.expanded
    }

    /// Product states whose i-th coordinate is accepting, ascending.
    pub fn accepting_states(&self, i: usize) -> &[usize] {
        &self.accepting[i]
    }

    pub fn is_accepting_for(&self, i: usize, state: usize) -> bool {
        self.accepting[i].binary_search(&state).is_ok()
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing[state]
    }

    pub fn absorbing_count(&self) -> usize {
        self.absorbing.iter().filter(|&&b| b).count()
    }

    /// Advances a packed memory key along a concrete base-MDP move. Works
    /// for any key, including ones that left the materialized state set.
    pub fn advance_key(&self, key: u128, next_base: usize) -> u128 {
        let exp = key_exp(key);
        let t = self.expanded.stage(exp);
        let t2 = if t < self.expanded.horizon() { t + 1 } else { t };
        let exp2 = self.expanded.index_of(next_base, t2);
        let mut out = (exp2 as u128) << EXP_SHIFT;
        for (i, dfa) in self.dfas.iter().enumerate() {
            let q2 = dfa.step(
                key_coord(key, i),
                self.expanded.base().has_prop(next_base, self.atoms[i]),
                t2,
            );
            out |= (q2 as u128) << coord_shift(i);
        }
        out
    }

    /// The key of the initial product state.
    pub fn initial_key(&self) -> u128 {
        self.keys[self.initial]
    }

    /// Whether the i-th coordinate of a key is accepting or already passed
    /// through acceptance into the terminal sink.
    pub fn key_settled_accepting(&self, i: usize, key: u128) -> bool {
        let q = key_coord(key, i);
        self.dfas[i].is_accepting(q) || Some(q) == self.dfas[i].terminal
    }
}

fn vec_inits(dfas: &[StageDfa]) -> Vec<usize> {
    dfas.iter().map(|d| d.initial).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speclang::SpecFormula;

    const TOY: &str = r#"{
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

    fn toy() -> Mdp {
        Mdp::from_json_str(TOY).unwrap()
    }

    #[test]
    fn zero_formulas_reduce_to_the_reachable_expansion() {
        let m = toy();
        let p = ProductMdp::build(&m, &[], 4).unwrap();
        // State b at stage 1 is unreachable, everything else is reachable.
        assert_eq!(p.state_count(), p.expanded().state_count() - 1);
        assert_eq!(p.exp_of(p.initial()), p.expanded().initial_index());
        for s in 0..p.state_count() {
            for a in 0..p.action_count() {
                let want: Vec<(usize, f64)> = p.expanded().succ(p.exp_of(s), a).collect();
                let got: Vec<(usize, f64)> = p
                    .succ(s, a)
                    .iter()
                    .map(|&(s2, pr)| (p.exp_of(s2), pr))
                    .collect();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn unknown_atom_is_rejected() {
        let m = toy();
        let f = SpecFormula::parse("F[0,2] treasure").unwrap();
        assert!(matches!(
            ProductMdp::build(&m, &[f], 3),
            Err(AutomataError::UnknownAtom(a)) if a == "treasure"
        ));
    }

    #[test]
    fn component_limit() {
        let m = toy();
        let f = SpecFormula::parse("F[0,1] goal").unwrap();
        let many = vec![f; 7];
        assert!(matches!(
            ProductMdp::build(&m, &many, 3),
            Err(AutomataError::TooManyComponents { max: 6, got: 7 })
        ));
    }

    #[test]
    fn initial_consumes_the_first_label() {
        // F[0,0] goal: decided by the initial state's label alone.
        let m = toy();
        let f = SpecFormula::parse("F[0,0] goal").unwrap();
        let p = ProductMdp::build(&m, &[f], 2).unwrap();
        // `a` is unlabeled, so coordinate 0 is already rejecting at the start.
        let q0 = p.coord(p.initial(), 0);
        assert!(!p.dfas()[0].is_accepting(q0));
        assert!(p.dfas()[0].is_absorbing(q0));
    }

    #[test]
    fn absorbing_states_stay_absorbing() {
        let m = toy();
        let fs = [
            SpecFormula::parse("F[1,2] goal").unwrap(),
            SpecFormula::parse("G[0,1] !goal").unwrap(),
        ];
        let p = ProductMdp::build(&m, &fs, 4).unwrap();
        assert!(p.absorbing_count() > 0);
        for s in 0..p.state_count() {
            if !p.is_absorbing(s) {
                continue;
            }
            for a in 0..p.action_count() {
                for &(s2, _) in p.succ(s, a) {
                    assert!(p.is_absorbing(s2));
                }
            }
        }
    }

    #[test]
    fn accepting_coordinates_are_left_immediately() {
        let m = toy();
        let f = SpecFormula::parse("F[1,3] goal").unwrap();
        let p = ProductMdp::build(&m, &[f], 4).unwrap();
        assert!(!p.accepting_states(0).is_empty());
        for &s in p.accepting_states(0) {
            for a in 0..p.action_count() {
                for &(s2, _) in p.succ(s, a) {
                    assert!(
                        !p.is_accepting_for(0, s2),
                        "accepting state {s} has accepting successor {s2}"
                    );
                }
            }
        }
    }

    #[test]
    fn keys_are_sorted_and_consistent() {
        let m = toy();
        let f = SpecFormula::parse("G[0,2] !goal").unwrap();
        let p = ProductMdp::build(&m, &[f], 3).unwrap();
        for s in 0..p.state_count() {
            assert_eq!(p.index_of_key(p.key(s)), Some(s));
            if s > 0 {
                assert!(p.key(s - 1) < p.key(s));
            }
        }
    }

    #[test]
    fn advance_key_tracks_transitions() {
        let m = toy();
        let fs = [
            SpecFormula::parse("F[1,2] goal").unwrap(),
            SpecFormula::parse("G[1,3] goal").unwrap(),
        ];
        let p = ProductMdp::build(&m, &fs, 4).unwrap();
        for s in 0..p.state_count() {
            for a in 0..p.action_count() {
                for &(s2, _) in p.succ(s, a) {
                    let got = p.advance_key(p.key(s), p.base_state(s2));
                    assert_eq!(got, p.key(s2));
                }
            }
        }
    }
}
