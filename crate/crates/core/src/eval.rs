//! Evaluation of a synthesized policy: exact satisfaction probabilities by
//! joint propagation of the policy memory with a formula automaton, Monte
//! Carlo simulation with fixed-seed reproducibility, and the adversary's
//! posterior over the candidate set.

use crate::automata::StageDfa;
use crate::error::EvalError;
use crate::model::Mdp;
use crate::optcore::concave;
use crate::policy::Policy;
use crate::speclang::SpecFormula;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Probabilities this close to the candidate threshold still count; keeps a
/// formula driven exactly onto the threshold from flickering out of the set.
pub const BETA_EDGE: f64 = 1e-9;

/// Where a report's satisfaction probabilities came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Source {
    ExactPropagation,
    MonteCarlo { trials: u64, seed: u64 },
}

/// The observer's view of one policy: per-formula satisfaction
/// probabilities, the induced candidate set, and its posterior entropy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyReport {
    pub names: Vec<String>,
    /// Probability the report's candidate decisions are based on.
    pub sat_probs: Vec<f64>,
    pub beta: f64,
    /// Indices of formulas meeting the candidate threshold, ascending.
    pub candidates: Vec<usize>,
    /// Normalized over the candidate set; zero elsewhere.
    pub likelihoods: Vec<f64>,
    pub entropy_bits: f64,
    /// No formula met the threshold; entropy is reported as zero.
    pub empty_candidates: bool,
    pub source: Source,
}

/// One simulation run: the Monte Carlo report plus the exact probabilities
/// and per-key visit rates used to cross-check it.
#[derive(Debug, Clone, Serialize)]
pub struct SimOutcome {
    pub report: EntropyReport,
    /// Exact satisfaction probability per formula, propagated through the
    /// same policy.
    pub exact: Vec<f64>,
    /// 1.96-sigma binomial half width per formula.
    pub half_widths: Vec<f64>,
    /// Mean visits per trial for every memory key seen, ascending by key.
    pub visits: Vec<(u128, f64)>,
    pub trials: u64,
}

/// Candidate set, likelihoods, and entropy induced by satisfaction
/// probabilities: formulas at or above `beta` (within [`BETA_EDGE`]) form
/// the candidate set, their probabilities are normalized into a posterior,
/// and the entropy of that posterior is reported in bits.
pub fn adversary_report(
    names: Vec<String>,
    sat_probs: Vec<f64>,
    beta: f64,
    source: Source,
) -> EntropyReport {
    let candidates: Vec<usize> = (0..sat_probs.len())
        .filter(|&i| sat_probs[i] >= beta - BETA_EDGE)
        .collect();
    let masked: Vec<f64> = (0..sat_probs.len())
        .map(|i| {
            if candidates.binary_search(&i).is_ok() {
                sat_probs[i]
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = masked.iter().sum();
    let likelihoods = if total > concave::PROB_FLOOR {
        masked.iter().map(|&p| p / total).collect()
    } else {
        vec![0.0; sat_probs.len()]
    };
    let entropy_bits = concave::entropy_bits(&masked);
    EntropyReport {
        names,
        sat_probs,
        beta,
        empty_candidates: candidates.is_empty(),
        candidates,
        likelihoods,
        entropy_bits,
        source,
    }
}

impl EntropyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Tab-separated table, one formula per line. Simulation columns are NA
    /// here; [`SimOutcome::tsv`] fills them.
    pub fn tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        for i in 0..self.names.len() {
            out.push_str(&tsv_line(
                &self.names[i],
                Some(self.sat_probs[i]),
                None,
                None,
                self.candidates.binary_search(&i).is_ok(),
                self.likelihoods[i],
            ));
        }
        out
    }
}

const TSV_HEADER: &str = "formula\texact\tempirical\thalf_width\tcandidate\tlikelihood\n";

fn tsv_line(
    name: &str,
    exact: Option<f64>,
    empirical: Option<f64>,
    half_width: Option<f64>,
    candidate: bool,
    likelihood: f64,
) -> String {
    let cell = |v: Option<f64>| match v {
        Some(v) => format!("{v:.6}"),
        None => "NA".to_string(),
    };
    format!(
        "{name}\t{}\t{}\t{}\t{}\t{likelihood:.6}\n",
        cell(exact),
        cell(empirical),
        cell(half_width),
        u8::from(candidate),
    )
}

impl SimOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }

    pub fn tsv(&self) -> String {
        let r = &self.report;
        let mut out = String::from(TSV_HEADER);
        for i in 0..r.names.len() {
            out.push_str(&tsv_line(
                &r.names[i],
                Some(self.exact[i]),
                Some(r.sat_probs[i]),
                Some(self.half_widths[i]),
                r.candidates.binary_search(&i).is_ok(),
                r.likelihoods[i],
            ));
        }
        out
    }
}

/// Exact probability that a run of the policy satisfies the formula.
///
/// Propagates the joint distribution of (policy memory key, formula
/// automaton state) forward for horizon steps. The automaton route is
/// independent of the positional semantics in the formula evaluator, so the
/// two can cross-check each other.
pub fn exact_satisfaction(
    mdp: &Mdp,
    policy: &Policy,
    formula: &SpecFormula,
) -> Result<f64, EvalError> {
    let runner = policy.runner(mdp)?;
    let prop = mdp
        .prop_index(&formula.atom)
        .ok_or_else(|| EvalError::UnknownProposition(formula.atom.clone()))?;
    let h = formula.horizon();
    let dfa = StageDfa::build_uncapped(formula, h + 1)
        .map_err(|e| EvalError::Policy(format!("formula automaton: {e}")))?;

    // BTreeMap keeps the accumulation order fixed, so repeated runs agree
    // bit for bit.
    let s0 = mdp.initial();
    let q0 = dfa.step(dfa.initial, mdp.has_prop(s0, prop), 1);
    let mut mass: BTreeMap<(u128, usize), f64> = BTreeMap::new();
    mass.insert((runner.initial_key(), q0), 1.0);
    let na = mdp.action_count();
    for step in 1..=h {
        let stage = step + 1;
        let mut next: BTreeMap<(u128, usize), f64> = BTreeMap::new();
        for (&(key, q), &m) in &mass {
            let s = runner.base_state(key);
            let dist = runner.dist(key);
            for (a, &pa) in dist.iter().enumerate().take(na) {
                if pa <= 0.0 {
                    continue;
                }
                for &(s2, p) in mdp.succ(s, a) {
                    if p <= 0.0 {
                        continue;
                    }
                    let key2 = runner.advance(key, s2);
                    let q2 = dfa.step(q, mdp.has_prop(s2, prop), stage);
                    *next.entry((key2, q2)).or_insert(0.0) += m * pa * p;
                }
            }
        }
        mass = next;
    }
    Ok(mass
        .iter()
        .filter(|&(&(_, q), _)| dfa.is_accepting(q))
        .map(|(_, &m)| m)
        .sum())
}

/// Exact satisfaction of every formula plus the adversary view, all by
/// propagation.
pub fn check(
    mdp: &Mdp,
    policy: &Policy,
    formulas: &[SpecFormula],
    beta: f64,
) -> Result<EntropyReport, EvalError> {
    let probs = formulas
        .iter()
        .map(|f| exact_satisfaction(mdp, policy, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(adversary_report(
        formulas.iter().map(ToString::to_string).collect(),
        probs,
        beta,
        Source::ExactPropagation,
    ))
}

/// Monte Carlo estimate of the satisfaction probabilities under the policy.
///
/// Each trial draws its own deterministic stream (root seed plus trial
/// index), so results are reproducible bit for bit regardless of thread
/// count; counters are integers and are only turned into rates at the end.
pub fn simulate(
    mdp: &Mdp,
    policy: &Policy,
    formulas: &[SpecFormula],
    beta: f64,
    trials: u64,
    seed: u64,
) -> Result<SimOutcome, EvalError> {
    if trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let runner = policy.runner(mdp)?;
    let props = formulas
        .iter()
        .map(|f| {
            mdp.prop_index(&f.atom)
                .ok_or_else(|| EvalError::UnknownProposition(f.atom.clone()))
        })
        .collect::<Result<Vec<usize>, _>>()?;
    let maxh = formulas.iter().map(|f| f.horizon()).max().unwrap_or(0);
    let len = maxh as usize + 1;
    let nf = formulas.len();

    let zero = || (vec![0u64; nf], HashMap::<u128, u64>::new());
    let (sat_counts, visit_counts) = (0..trials)
        .into_par_iter()
        .fold(zero, |(mut sat, mut visits), trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let mut states = Vec::with_capacity(len);
            let mut s = mdp.initial();
            let mut key = runner.initial_key();
            states.push(s);
            *visits.entry(key).or_insert(0) += 1;
            for _ in 1..len {
                let a = sample(&mut rng, runner.dist(key));
                s = sample_succ(&mut rng, mdp.succ(s, a));
                key = runner.advance(key, s);
                states.push(s);
                *visits.entry(key).or_insert(0) += 1;
            }
            for (i, f) in formulas.iter().enumerate() {
                let holds = |j: usize, _: &str| mdp.has_prop(states[j], props[i]);
                if f.satisfied_by(len, &holds).expect("trajectory covers the horizon") {
                    sat[i] += 1;
                }
            }
            (sat, visits)
        })
        .reduce(zero, |(mut sat_a, mut vis_a), (sat_b, vis_b)| {
            for (a, b) in sat_a.iter_mut().zip(&sat_b) {
                *a += b;
            }
            for (k, c) in vis_b {
                *vis_a.entry(k).or_insert(0) += c;
            }
            (sat_a, vis_a)
        });

    let n = trials as f64;
    let sat_probs: Vec<f64> = sat_counts.iter().map(|&c| c as f64 / n).collect();
    let half_widths = sat_probs
        .iter()
        .map(|&p| 1.96 * (p * (1.0 - p) / n).sqrt())
        .collect();
    let mut visits: Vec<(u128, f64)> = visit_counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n))
        .collect();
    visits.sort_unstable_by_key(|&(k, _)| k);
    let exact = formulas
        .iter()
        .map(|f| exact_satisfaction(mdp, policy, f))
        .collect::<Result<Vec<_>, _>>()?;
    let report = adversary_report(
        formulas.iter().map(ToString::to_string).collect(),
        sat_probs,
        beta,
        Source::MonteCarlo { trials, seed },
    );
    Ok(SimOutcome {
        report,
        exact,
        half_widths,
        visits,
        trials,
    })
}

fn sample(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    dist.len() - 1
}

fn sample_succ(rng: &mut ChaCha8Rng, row: &[(usize, f64)]) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for &(s, p) in row {
        acc += p;
        if r < acc {
            return s;
        }
    }
    row.last().expect("transition rows are nonempty").0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::product::ProductMdp;
    use rand::Rng;

    #[test]
    fn candidate_sets_and_entropy_match_hand_calculations() {
        let names = |n: usize| (0..n).map(|i| format!("f{i}")).collect::<Vec<_>>();

        let r = adversary_report(names(2), vec![0.95, 0.95], 0.8, Source::ExactPropagation);
        assert_eq!(r.candidates, vec![0, 1]);
        assert!((r.likelihoods[0] - 0.5).abs() < 1e-12);
        assert!((r.entropy_bits - 1.0).abs() < 1e-12);
        assert!(!r.empty_candidates);

        let r = adversary_report(names(2), vec![0.95, 0.5], 0.8, Source::ExactPropagation);
        assert_eq!(r.candidates, vec![0]);
        assert!((r.likelihoods[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.likelihoods[1], 0.0);
        assert_eq!(r.entropy_bits, 0.0);

        let r = adversary_report(
            names(4),
            vec![0.8, 0.8, 0.8, 0.4],
            0.8,
            Source::ExactPropagation,
        );
        assert_eq!(r.candidates, vec![0, 1, 2]);
        assert!((r.entropy_bits - 3.0_f64.log2()).abs() < 1e-12);

        // Just-below threshold within the edge tolerance still counts.
        let r = adversary_report(
            names(2),
            vec![0.9, 0.8 - 5e-10],
            0.8,
            Source::ExactPropagation,
        );
        assert_eq!(r.candidates, vec![0, 1]);

        let r = adversary_report(names(2), vec![0.1, 0.2], 0.8, Source::ExactPropagation);
        assert!(r.empty_candidates);
        assert_eq!(r.entropy_bits, 0.0);
        assert!(r.likelihoods.iter().all(|&l| l == 0.0));
    }

    fn line_mdp() -> Mdp {
        // A deterministic two-state flip: a <-> b, with "hold" staying put.
        Mdp::from_json_str(
            r#"{
            "states": ["a", "b"],
            "initial": "a",
            "actions": ["flip", "hold"],
            "transitions": [
                {"from": "a", "action": "flip", "to": "b", "prob": 1.0},
                {"from": "a", "action": "hold", "to": "a", "prob": 1.0},
                {"from": "b", "action": "flip", "to": "a", "prob": 1.0},
                {"from": "b", "action": "hold", "to": "b", "prob": 1.0}
            ],
            "labels": {"b": ["goal"]}
        }"#,
        )
        .unwrap()
    }

    fn pure_policy(mdp: &Mdp, stages: u32, action: usize) -> Policy {
        // Covers the saturated stage too, so the choice holds at any length.
        let product = ProductMdp::build(mdp, &[], stages).unwrap();
        Policy::from_occupancy(&product, |_| true, |_, a| f64::from(u8::from(a == action)))
    }

    #[test]
    fn deterministic_runs_give_unit_or_zero_probability() {
        let mdp = line_mdp();
        let always_flip = pure_policy(&mdp, 4, 0);
        let always_hold = pure_policy(&mdp, 4, 1);
        let f = SpecFormula::parse("G[1,3] goal").unwrap();
        // Flipping visits b at odd positions only; holding never reaches b.
        let g13 = exact_satisfaction(&mdp, &always_flip, &f).unwrap();
        assert_eq!(g13, 0.0);
        let f = SpecFormula::parse("F[0,3] goal").unwrap();
        assert_eq!(exact_satisfaction(&mdp, &always_flip, &f).unwrap(), 1.0);
        assert_eq!(exact_satisfaction(&mdp, &always_hold, &f).unwrap(), 0.0);
        let f = SpecFormula::parse("G[1,10] F[0,1] goal").unwrap();
        assert_eq!(exact_satisfaction(&mdp, &always_flip, &f).unwrap(), 1.0);
    }

    fn random_mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Mdp {
        let states: Vec<String> = (0..ns).map(|i| format!("s{i}")).collect();
        let actions: Vec<String> = (0..na).map(|i| format!("a{i}")).collect();
        let mut transitions = Vec::new();
        for s in 0..ns {
            for action in &actions {
                let mut mass: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.0..1.0)).collect();
                let total: f64 = mass.iter().sum();
                for m in &mut mass {
                    *m /= total;
                }
                for (t, &m) in mass.iter().enumerate() {
                    transitions.push(serde_json::json!({
                        "from": states[s], "action": action,
                        "to": states[t], "prob": m
                    }));
                }
            }
        }
        let mut labeled: Vec<&String> = states.iter().filter(|_| rng.gen_bool(0.5)).collect();
        if labeled.is_empty() {
            labeled.push(&states[ns - 1]);
        }
        let labels: serde_json::Map<String, serde_json::Value> = labeled
            .iter()
            .map(|s| ((*s).clone(), serde_json::json!(["p"])))
            .collect();
        let file = serde_json::json!({
            "states": states, "initial": states[0], "actions": actions,
            "transitions": transitions, "labels": labels
        });
        Mdp::from_json_str(&file.to_string()).unwrap()
    }

    fn random_policy(rng: &mut ChaCha8Rng, mdp: &Mdp, formula: &SpecFormula, stages: u32) -> Policy {
        let product = ProductMdp::build(mdp, std::slice::from_ref(formula), stages).unwrap();
        let weights: Vec<f64> = (0..product.state_count() * mdp.action_count())
            .map(|_| rng.gen_range(0.1..1.0))
            .collect();
        let na = mdp.action_count();
        Policy::from_occupancy(&product, |_| true, |s, a| weights[s * na + a])
    }

    /// Exhaustive path enumeration under the policy, deciding satisfaction
    /// with the positional evaluator rather than the automaton.
    fn brute_force(mdp: &Mdp, policy: &Policy, formula: &SpecFormula) -> f64 {
        let runner = policy.runner(mdp).unwrap();
        let prop = mdp.prop_index(&formula.atom).unwrap();
        let len = formula.horizon() as usize + 1;
        let na = mdp.action_count();
        let mut total = 0.0;
        let mut stack = vec![(runner.initial_key(), mdp.initial(), vec![mdp.initial()], 1.0)];
        while let Some((key, s, word, prob)) = stack.pop() {
            if word.len() == len {
                let holds = |j: usize, _: &str| mdp.has_prop(word[j], prop);
                if formula.satisfied_by(len, &holds).unwrap() {
                    total += prob;
                }
                continue;
            }
            let dist = runner.dist(key);
            for s2 in 0..mdp.state_count() {
                let step: f64 = (0..na)
                    .map(|a| {
                        dist[a]
                            * mdp
                                .succ(s, a)
                                .iter()
                                .find(|&&(t, _)| t == s2)
                                .map_or(0.0, |&(_, p)| p)
                    })
                    .sum();
                if step <= 0.0 {
                    continue;
                }
                let mut w = word.clone();
                w.push(s2);
                stack.push((runner.advance(key, s2), s2, w, prob * step));
            }
        }
        total
    }

    #[test]
    fn propagation_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shapes = [
            "p", "!p", "F[0,3] p", "F[1,4] p", "G[0,2] p", "G[2,4] !p",
            "F[0,2] G[1,2] p", "G[0,2] F[0,2] p",
        ];
        for case in 0..24 {
            let mdp = random_mdp(&mut rng, 3, 2);
            let text = shapes[case % shapes.len()];
            let formula = SpecFormula::parse(text).unwrap();
            let stages = formula.horizon().max(1);
            let policy = random_policy(&mut rng, &mdp, &formula, stages);
            let want = brute_force(&mdp, &policy, &formula);
            let got = exact_satisfaction(&mdp, &policy, &formula).unwrap();
            assert!(
                (got - want).abs() < 1e-9,
                "case {case} `{text}`: propagation {got} vs enumeration {want}"
            );
        }
    }

    #[test]
    fn simulation_is_reproducible_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(&mut rng, 3, 2);
        let f1 = SpecFormula::parse("F[0,3] p").unwrap();
        let f2 = SpecFormula::parse("G[1,2] p").unwrap();
        let policy = random_policy(&mut rng, &mdp, &f1, 3);
        let formulas = vec![f1, f2];

        let a = simulate(&mdp, &policy, &formulas, 0.8, 20_000, 42).unwrap();
        let b = simulate(&mdp, &policy, &formulas, 0.8, 20_000, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json(), "same seed must give identical bytes");

        for i in 0..formulas.len() {
            let err = (a.report.sat_probs[i] - a.exact[i]).abs();
            assert!(
                err <= 2.5 * a.half_widths[i] + 1e-9,
                "formula {i}: empirical {} vs exact {} (hw {})",
                a.report.sat_probs[i],
                a.exact[i],
                a.half_widths[i]
            );
        }

        let c = simulate(&mdp, &policy, &formulas, 0.8, 20_000, 43).unwrap();
        assert_ne!(a.to_json(), c.to_json(), "different seeds should differ");

        // Visits are per-trial means: the initial key is visited once per
        // trial, and every rate stays within the trajectory length.
        let runner = policy.runner(&mdp).unwrap();
        let init = a
            .visits
            .iter()
            .find(|&&(k, _)| k == runner.initial_key())
            .unwrap();
        assert_eq!(init.1, 1.0);
        assert!(a.visits.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn single_trial_rates_are_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = random_mdp(&mut rng, 3, 2);
        let f = SpecFormula::parse("F[0,2] p").unwrap();
        let policy = random_policy(&mut rng, &mdp, &f, 2);
        let out = simulate(&mdp, &policy, &[f], 0.8, 1, 5).unwrap();
        assert!(out.report.sat_probs[0] == 0.0 || out.report.sat_probs[0] == 1.0);
        assert!(out.visits.iter().all(|&(_, v)| v == 1.0));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let mdp = line_mdp();
        let policy = pure_policy(&mdp, 3, 0);
        let f = SpecFormula::parse("F[0,2] goal").unwrap();
        assert!(matches!(
            simulate(&mdp, &policy, std::slice::from_ref(&f), 0.8, 0, 1),
            Err(EvalError::NoTrials)
        ));
        let missing = SpecFormula::parse("F[0,2] nosuch").unwrap();
        assert!(matches!(
            exact_satisfaction(&mdp, &policy, &missing),
            Err(EvalError::UnknownProposition(_))
        ));
        assert!(matches!(
            simulate(&mdp, &policy, &[missing], 0.8, 10, 1),
            Err(EvalError::UnknownProposition(_))
        ));
    }

    #[test]
    fn tables_have_stable_shape() {
        let mdp = line_mdp();
        let policy = pure_policy(&mdp, 4, 0);
        let f = SpecFormula::parse("F[0,3] goal").unwrap();
        let report = check(&mdp, &policy, std::slice::from_ref(&f), 0.8).unwrap();
        let t = report.tsv();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("formula\texact"));
        assert!(lines[1].contains("\tNA\tNA\t"));
        assert!(lines[1].starts_with("F[0,3] goal\t1.000000"));

        let out = simulate(&mdp, &policy, &[f], 0.8, 50, 7).unwrap();
        let t = out.tsv();
        assert!(!t.contains("NA"));
    }
}
