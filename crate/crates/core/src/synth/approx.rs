//! Approximate synthesis: the occupancy program lives on the stage-expanded
//! model alone, with no automaton coordinates. Each formula's satisfaction
//! probability is replaced by a certified lower bound assembled from the
//! per-position marginals of its atom:
//!
//! - a disjunction over positions is bounded below by the largest marginal,
//!   picked out by a one-hot selector block;
//! - a conjunction over a window is bounded below by the sum of its
//!   marginals minus the window slack, clamped at zero by one selector;
//! - the nested forms chain one block per outer position into the other.
//!
//! The bounds are tight exactly when the position events line up the way
//! the extremal coupling assumes, which deterministic policies often
//! achieve; either way the true probability can only exceed the bound, so a
//! feasible program stays feasible in the exact sense.

use super::{
    add_candidate_rows, audit_result, package, reconcile_candidates, solve_program, Backend,
    SynthesisResult,
};
use crate::automata::product::ProductMdp;
use crate::error::{SolveError, SynthError};
use crate::eval;
use crate::model::Mdp;
use crate::optcore::flow::FlowNet;
use crate::program::{Op, Pattern, PatternKind, SynthesisProgram, FEAS_TOL};
use crate::speclang::{Form, ProblemInstance};

/// Builds the approximate program on the stage-only expansion. The extra
/// final stage collects the mass after the last decision, so every word
/// position up to the shared horizon has a marginal.
///
/// Same variable layout contract as the exact assembly: occupancies first,
/// `s * actions + a`, with out-of-net states pinned to zero.
pub fn assemble_approx(
    mdp: &Mdp,
    instance: &ProblemInstance,
) -> Result<(SynthesisProgram, ProductMdp, Vec<bool>), SynthError> {
    let last = instance.shared_horizon();
    let stages = last + 1;
    let product = ProductMdp::build(mdp, &[], stages)?;
    let ns = product.state_count();
    let na = product.action_count();

    // Only the final stage is saturated; everything before it moves.
    let in_net: Vec<bool> = (0..ns).map(|s| product.stage(s) < stages).collect();

    let mut p = SynthesisProgram::default();
    for s in 0..ns {
        let hi = f64::from(in_net[s]);
        for a in 0..na {
            p.add_var(format!("l_{s}_{a}"), 0.0, hi, false);
        }
    }

    let net_of = {
        let mut map = vec![None; ns];
        let mut next = 0usize;
        for (s, m) in map.iter_mut().enumerate() {
            if in_net[s] {
                *m = Some(next);
                next += 1;
            }
        }
        map
    };
    let net_states: Vec<usize> = (0..ns).filter(|&s| in_net[s]).collect();
    let var_of: Vec<Vec<usize>> = net_states
        .iter()
        .map(|&s| (0..na).map(|a| s * na + a).collect())
        .collect();
    let succ: Vec<Vec<Vec<(usize, f64)>>> = net_states
        .iter()
        .map(|&s| {
            (0..na)
                .map(|a| {
                    product
                        .succ(s, a)
                        .iter()
                        .filter_map(|&(t, pr)| net_of[t].map(|nt| (nt, pr)))
                        .collect()
                })
                .collect()
        })
        .collect();
    let initial = net_of[product.initial()].expect("stage 1 is inside the net");
    let net = FlowNet::new(initial, var_of, succ)?;
    p.add_flow_rows(&net);
    p.flow = Some(net);

    for (i, f) in instance.specs.formulas.iter().enumerate() {
        let prop = mdp
            .prop_index(&f.atom)
            .ok_or_else(|| crate::error::AutomataError::UnknownAtom(f.atom.clone()))?;
        let lit = |s: usize| mdp.has_prop(product.base_state(s), prop) != f.negated;

        // One marginal per word position the formula looks at: the
        // probability that the atom's literal holds there.
        let (k_lo, k_hi) = match f.form {
            Form::Atom => (0, 0),
            Form::Eventually { lo, hi } | Form::Always { lo, hi } => (lo, hi),
            Form::EventuallyAlways { olo, ohi, ilo, ihi }
            | Form::AlwaysEventually { olo, ohi, ilo, ihi } => (olo + ilo, ohi + ihi),
        };
        debug_assert!(k_hi <= last);
        let eta: Vec<usize> = (k_lo..=k_hi)
            .map(|k| {
                let var = p.add_var(format!("eta_{i}_{k}"), 0.0, 1.0, false);
                let mut terms = vec![(var, 1.0)];
                if k < last {
                    // Position k is read at stage k + 1, still in the net,
                    // and each net state is occupied at most once.
                    for &s in &net_states {
                        if product.stage(s) == k + 1 && lit(s) {
                            for a in 0..na {
                                terms.push((s * na + a, -1.0));
                            }
                        }
                    }
                } else {
                    // The last position lives on the saturated stage, where
                    // occupancies are pinned; read its marginal off the
                    // inflow instead.
                    for &s in &net_states {
                        if product.stage(s) != last {
                            continue;
                        }
                        for a in 0..na {
                            let mass: f64 = product
                                .succ(s, a)
                                .iter()
                                .filter(|&&(t, _)| lit(t))
                                .map(|&(_, pr)| pr)
                                .sum();
                            if mass > 0.0 {
                                terms.push((s * na + a, -mass));
                            }
                        }
                    }
                }
                p.add_row(format!("eta_{i}_{k}/def"), terms, Op::Eq, 0.0);
                var
            })
            .collect();
        let at = |k: u32| eta[(k - k_lo) as usize];

        let mu = p.add_var(format!("mu_{i}"), 0.0, 1.0, false);
        match f.form {
            Form::Atom => {
                p.add_row(
                    format!("f{i}/eq"),
                    vec![(mu, 1.0), (at(0), -1.0)],
                    Op::Eq,
                    0.0,
                );
            }
            Form::Eventually { lo, hi } => {
                let inputs: Vec<usize> = (lo..=hi).map(at).collect();
                max_block(&mut p, &format!("f{i}"), mu, &inputs);
            }
            Form::Always { lo, hi } => {
                let inputs: Vec<usize> = (lo..=hi).map(at).collect();
                clamp_block(&mut p, &format!("f{i}"), mu, &inputs);
            }
            Form::EventuallyAlways { olo, ohi, ilo, ihi } => {
                let windows: Vec<usize> = (olo..=ohi)
                    .map(|m| {
                        let z = p.add_var(format!("zeta_{i}_{m}"), 0.0, 1.0, false);
                        let inputs: Vec<usize> = (m + ilo..=m + ihi).map(at).collect();
                        clamp_block(&mut p, &format!("f{i}/w{m}"), z, &inputs);
                        z
                    })
                    .collect();
                max_block(&mut p, &format!("f{i}"), mu, &windows);
            }
            Form::AlwaysEventually { olo, ohi, ilo, ihi } => {
                let windows: Vec<usize> = (olo..=ohi)
                    .map(|m| {
                        let z = p.add_var(format!("zeta_{i}_{m}"), 0.0, 1.0, false);
                        let inputs: Vec<usize> = (m + ilo..=m + ihi).map(at).collect();
                        max_block(&mut p, &format!("f{i}/w{m}"), z, &inputs);
                        z
                    })
                    .collect();
                clamp_block(&mut p, &format!("f{i}"), mu, &windows);
            }
        }
        p.mu_vars.push(mu);
    }

    add_candidate_rows(&mut p, instance);
    Ok((p, product, in_net))
}

/// out = max(inputs), linearized with a one-hot selector per input. The
/// dominance rows pin the max from below; the selected product pins it from
/// above. A single input degenerates to an equality with no binaries.
fn max_block(p: &mut SynthesisProgram, tag: &str, out: usize, inputs: &[usize]) {
    if let [only] = inputs {
        p.add_row(
            format!("{tag}/eq"),
            vec![(out, 1.0), (*only, -1.0)],
            Op::Eq,
            0.0,
        );
        return;
    }
    let selectors: Vec<usize> = (0..inputs.len())
        .map(|t| p.add_var(format!("{tag}/y{t}"), 0.0, 1.0, true))
        .collect();
    let products: Vec<usize> = (0..inputs.len())
        .map(|t| p.add_var(format!("{tag}/g{t}"), 0.0, 1.0, false))
        .collect();
    p.add_row(
        format!("{tag}/onehot"),
        selectors.iter().map(|&y| (y, 1.0)).collect(),
        Op::Eq,
        1.0,
    );
    let mut tie: Vec<(usize, f64)> = vec![(out, 1.0)];
    for (t, &inp) in inputs.iter().enumerate() {
        p.add_product_rows(
            &format!("{tag}/p{t}"),
            products[t],
            selectors[t],
            &[inp],
            0.0,
            (0.0, 1.0),
        );
        p.add_row(
            format!("{tag}/dom{t}"),
            vec![(out, 1.0), (inp, -1.0)],
            Op::Ge,
            0.0,
        );
        tie.push((products[t], -1.0));
    }
    p.add_row(format!("{tag}/tie"), tie, Op::Eq, 0.0);
    p.patterns.push(Pattern {
        kind: PatternKind::Max,
        output: out,
        inputs: inputs.to_vec(),
        selectors,
        products,
    });
}

/// out = max(0, sum(inputs) - (n - 1)): the window lower bound for a
/// conjunction of n events. One selector decides whether the sum clears the
/// slack; the dominance row keeps the sum below the slack when it does not.
/// A single input degenerates to an equality with no binaries.
fn clamp_block(p: &mut SynthesisProgram, tag: &str, out: usize, inputs: &[usize]) {
    let width = (inputs.len() - 1) as f64;
    if let [only] = inputs {
        p.add_row(
            format!("{tag}/eq"),
            vec![(out, 1.0), (*only, -1.0)],
            Op::Eq,
            0.0,
        );
        return;
    }
    let z = p.add_var(format!("{tag}/z"), 0.0, 1.0, true);
    p.add_product_rows(tag, out, z, inputs, width, (-width, 1.0));
    let mut dom: Vec<(usize, f64)> = vec![(out, 1.0)];
    dom.extend(inputs.iter().map(|&v| (v, -1.0)));
    p.add_row(format!("{tag}/dom"), dom, Op::Ge, -width);
    p.patterns.push(Pattern {
        kind: PatternKind::Clamp { offset: width },
        output: out,
        inputs: inputs.to_vec(),
        selectors: vec![z],
        products: Vec::new(),
    });
}

/// Maximizes the entropy level over the approximate program, extracts the
/// policy, and audits every bound against an exact evaluation of that
/// policy. The audited probabilities land in `per_spec[i].actual`.
pub fn synthesize_approx(
    mdp: &Mdp,
    instance: &ProblemInstance,
    eps: f64,
    backend: &Backend,
) -> Result<SynthesisResult, SynthError> {
    let (program, product, in_net) = assemble_approx(mdp, instance)?;
    let run = solve_program(&program, backend, eps)?;
    let final_result = reconcile_candidates(
        &program,
        backend,
        instance.beta,
        run.outcome.theta,
        run.outcome.witness.clone(),
    )?;
    let mut result = package(
        "approx", instance, &product, &program, &in_net, final_result, &run, eps,
    )?;
    for (i, f) in instance.specs.formulas.iter().enumerate() {
        let actual = eval::exact_satisfaction(mdp, &result.policy, f)?;
        let bound = result.per_spec[i].mu;
        if actual < bound - FEAS_TOL {
            return Err(SolveError::Numerical {
                place: "bound audit",
                msg: format!(
                    "formula {i} bound {bound} exceeds the policy's exact probability {actual}"
                ),
            }
            .into());
        }
        result.per_spec[i].actual = Some(actual);
    }
    audit_result(&result, instance)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::SolveError;
    use crate::program::FEAS_TOL;
    use crate::speclang::SpecSet;

    fn instance(lines: &str, gamma: f64, beta: f64) -> ProblemInstance {
        ProblemInstance::new(SpecSet::parse(lines).unwrap(), gamma, beta).unwrap()
    }

    fn corridor() -> Mdp {
        Mdp::from_json_str(
            r#"{
                "states": ["a", "b", "c"],
                "initial": "a",
                "actions": ["fwd", "hold"],
                "transitions": [
                    {"from": "a", "action": "fwd", "to": "b", "prob": 1.0},
                    {"from": "b", "action": "fwd", "to": "c", "prob": 1.0},
                    {"from": "c", "action": "fwd", "to": "c", "prob": 1.0},
                    {"from": "a", "action": "hold", "to": "a", "prob": 1.0},
                    {"from": "b", "action": "hold", "to": "b", "prob": 1.0},
                    {"from": "c", "action": "hold", "to": "c", "prob": 1.0}
                ],
                "labels": {"b": ["blue"], "c": ["red"]}
            }"#,
        )
        .unwrap()
    }

    fn blinker() -> Mdp {
        // `step` alternates the two states, `stay` freezes; b is lit.
        Mdp::from_json_str(
            r#"{
                "states": ["a", "b"],
                "initial": "a",
                "actions": ["step", "stay"],
                "transitions": [
                    {"from": "a", "action": "step", "to": "b", "prob": 1.0},
                    {"from": "b", "action": "step", "to": "a", "prob": 1.0},
                    {"from": "a", "action": "stay", "to": "a", "prob": 1.0},
                    {"from": "b", "action": "stay", "to": "b", "prob": 1.0}
                ],
                "labels": {"b": ["lit"]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn window_bound_synthesizes_a_holding_policy() {
        // G[1,2] blue forces the policy into b by position 1 and keeps it
        // there; the bound is tight because the run is deterministic.
        let mdp = corridor();
        let inst = instance("* G[1,2] blue", 0.95, 0.8);
        let result = synthesize_approx(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap();
        assert!(result.per_spec[0].mu >= 0.95 - FEAS_TOL);
        let actual = result.per_spec[0].actual.unwrap();
        assert!(actual >= result.per_spec[0].mu - FEAS_TOL);
        assert!(actual > 1.0 - 1e-9, "exact probability {actual}");
    }

    #[test]
    fn single_position_window_matches_eventually() {
        // G[2,2] and F[2,2] are the same constraint; both reduce to the
        // position-2 marginal with no binaries.
        let mdp = corridor();
        for line in ["* G[2,2] red", "* F[2,2] red"] {
            let inst = instance(line, 0.99, 0.8);
            let (p, _, _) = assemble_approx(&mdp, &inst).unwrap();
            assert_eq!(p.binaries().len(), 1, "only the candidate selector");
            assert!(p.patterns.is_empty());
            let result = synthesize_approx(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap();
            assert!(result.per_spec[0].actual.unwrap() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn nested_eventually_always_solves_on_the_blinker() {
        // F[0,2] G[0,1] lit: park in b from position 1 on. The approximate
        // program needs a window clamp inside a max over offsets.
        let mdp = blinker();
        let inst = instance("* F[0,2] G[0,1] lit", 0.95, 0.8);
        let result = synthesize_approx(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap();
        assert!(result.per_spec[0].mu >= 0.95 - FEAS_TOL);
        assert!(result.per_spec[0].actual.unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn nested_always_eventually_solves_on_the_blinker() {
        // G[1,3] F[0,1] lit: alternating hits b at every other position, so
        // each window holds one certain marginal.
        let mdp = blinker();
        let inst = instance("* G[1,3] F[0,1] lit", 0.95, 0.8);
        let result = synthesize_approx(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap();
        assert!(result.per_spec[0].mu >= 0.95 - FEAS_TOL);
        assert!(result.per_spec[0].actual.unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn impossible_window_is_infeasible() {
        // The blinker cannot be lit at two consecutive positions without
        // staying, and staying in a keeps it dark; G[0,1] needs position 0
        // lit, which never holds. The marginal bound sees this through
        // eta(0) = 0.
        let mdp = blinker();
        let inst = instance("* G[0,1] lit", 0.5, 0.4);
        let err = synthesize_approx(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap_err();
        assert!(matches!(
            err,
            SynthError::Solve(SolveError::InfeasibleAtZero)
        ));
    }

    #[test]
    fn two_candidates_share_the_corridor() {
        // Passing b on the way to c satisfies F blue and F red in one run.
        let mdp = corridor();
        let inst = instance("* F[0,2] blue\nF[0,2] red", 0.95, 0.8);
        let result = synthesize_approx(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap();
        assert!(result.theta > 1.0 - 1e-3);
        assert_eq!(result.candidate_set, vec![0, 1]);
        for r in &result.per_spec {
            assert!(r.actual.unwrap() >= r.mu - FEAS_TOL);
        }
    }

    #[test]
    fn last_position_marginal_reads_the_sink_inflow() {
        // A formula pinned to the shared horizon's last position exercises
        // the inflow form of the marginal row.
        let mdp = corridor();
        let inst = instance("* F[0,2] blue\nG[2,2] red", 0.9, 0.5);
        let (p, product, _) = assemble_approx(&mdp, &inst).unwrap();
        // Stage count is the horizon plus the collector stage.
        assert_eq!(product.expanded().horizon(), 3);
        // The eta row for position 2 must reference occupancies at stage 2
        // (the inflow), not the pinned stage-3 ones.
        let na = product.action_count();
        let row = p
            .rows
            .iter()
            .find(|r| r.name == "eta_1_2/def")
            .expect("marginal row exists");
        for &(v, _) in &row.terms[1..] {
            assert_eq!(product.stage(v / na), 2);
        }
    }
}
