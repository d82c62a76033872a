//! Exact synthesis: the occupancy program lives on the full product of the
//! stage-expanded model with every candidate automaton, so each formula's
//! satisfaction probability is itself a program variable.

use super::{
    add_candidate_rows, audit_result, package, reconcile_candidates, solve_program, Backend,
    SynthesisResult,
};
use crate::automata::product::ProductMdp;
use crate::error::SynthError;
use crate::model::Mdp;
use crate::optcore::flow::FlowNet;
use crate::program::{Op, SynthesisProgram};
use crate::speclang::ProblemInstance;

/// Builds the exact program. Returns the product alongside the membership
/// mask of the flow net (`true` for states whose occupancies are free), so
/// callers can extract a policy from a witness.
///
/// Variable layout contract: the occupancy of (state `s`, action `a`) is
/// program variable `s * actions + a`, and these come first. States outside
/// the net keep their variables pinned to zero so the layout stays total.
pub fn assemble_exact(
    mdp: &Mdp,
    instance: &ProblemInstance,
) -> Result<(SynthesisProgram, ProductMdp, Vec<bool>), SynthError> {
    let stages = instance.shared_horizon();
    let product = ProductMdp::build(mdp, &instance.specs.formulas, stages)?;
    let ns = product.state_count();
    let na = product.action_count();

    // Once every automaton coordinate has settled, the run's outcome is
    // fixed; those states leave the net and their occupancies are pinned.
    let in_net: Vec<bool> = (0..ns).map(|s| !product.is_absorbing(s)).collect();

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
    let net = if in_net[product.initial()] {
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
        FlowNet::new(net_of[product.initial()].expect("initial is in net"), var_of, succ)?
    } else {
        // The whole process is settled from the start; the program then has
        // no mass to route and the satisfaction rows decide feasibility.
        FlowNet::empty()
    };
    p.add_flow_rows(&net);
    p.flow = Some(net);

    for i in 0..product.formula_count() {
        let mu = p.add_var(format!("mu_{i}"), 0.0, 1.0, false);
        let mut terms = vec![(mu, 1.0)];
        for &s in product.accepting_states(i) {
            debug_assert!(in_net[s], "accepting states stay inside the net");
            for a in 0..na {
                terms.push((s * na + a, -1.0));
            }
        }
        p.add_row(format!("sat_{i}"), terms, Op::Eq, 0.0);
        p.mu_vars.push(mu);
    }

    add_candidate_rows(&mut p, instance);
    Ok((p, product, in_net))
}

/// Maximizes the entropy level over the exact program and extracts the
/// witness policy. `eps` is the level search's termination width.
pub fn synthesize_exact(
    mdp: &Mdp,
    instance: &ProblemInstance,
    eps: f64,
    backend: &Backend,
) -> Result<SynthesisResult, SynthError> {
    let (program, product, in_net) = assemble_exact(mdp, instance)?;
    let run = solve_program(&program, backend, eps)?;
    let final_result = reconcile_candidates(
        &program,
        backend,
        instance.beta,
        run.outcome.theta,
        run.outcome.witness.clone(),
    )?;
    let result = package(
        "exact", instance, &product, &program, &in_net, final_result, &run, eps,
    )?;
    audit_result(&result, instance)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::SolveError;
    use crate::eval;
    use crate::program::FEAS_TOL;
    use crate::speclang::SpecSet;

    fn instance(lines: &str, gamma: f64, beta: f64) -> ProblemInstance {
        ProblemInstance::new(SpecSet::parse(lines).unwrap(), gamma, beta).unwrap()
    }

    fn two_room() -> Mdp {
        // `stay` keeps the state, `go` moves a -> b with 0.9 and slips back.
        Mdp::from_json_str(
            r#"{
                "states": ["a", "b"],
                "initial": "a",
                "actions": ["stay", "go"],
                "transitions": [
                    {"from": "a", "action": "stay", "to": "a", "prob": 1.0},
                    {"from": "b", "action": "stay", "to": "b", "prob": 1.0},
                    {"from": "a", "action": "go", "to": "b", "prob": 0.9},
                    {"from": "a", "action": "go", "to": "a", "prob": 0.1},
                    {"from": "b", "action": "go", "to": "a", "prob": 0.9},
                    {"from": "b", "action": "go", "to": "b", "prob": 0.1}
                ],
                "labels": {"b": ["goal"]}
            }"#,
        )
        .unwrap()
    }

    fn corridor() -> Mdp {
        // Deterministic a -> b -> c -> c with distinct labels.
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

    #[test]
    fn single_formula_gives_zero_entropy() {
        let mdp = two_room();
        let inst = instance("* F[0,2] goal", 0.6, 0.5);
        let result = synthesize_exact(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap();
        assert_eq!(result.theta, 0.0);
        assert_eq!(result.entropy_bits, 0.0);
        assert_eq!(result.candidate_set, vec![0]);
        assert!(result.per_spec[0].mu >= 0.6 - FEAS_TOL);
        // Two stages of `go` reach the goal with 0.9 + 0.1 * 0.9.
        assert!(result.per_spec[0].mu <= 0.99 + FEAS_TOL);
    }

    #[test]
    fn witness_probabilities_match_policy_evaluation() {
        // The satisfaction variables of the program and a fresh chain
        // propagation of the extracted policy are two independent routes to
        // the same number.
        let mdp = two_room();
        let inst = instance("* F[0,2] goal\nG[1,2] goal", 0.6, 0.3);
        let result = synthesize_exact(&mdp, &inst, 1e-3, &Backend::Builtin).unwrap();
        for (i, f) in inst.specs.formulas.iter().enumerate() {
            let direct = eval::exact_satisfaction(&mdp, &result.policy, f).unwrap();
            assert!(
                (direct - result.per_spec[i].mu).abs() < 1e-6,
                "formula {i}: mu {} vs direct {direct}",
                result.per_spec[i].mu
            );
        }
    }

    #[test]
    fn compatible_goals_reach_a_full_bit() {
        // One corridor pass satisfies both formulas surely, so both stay
        // candidates at probability one and the entropy hits 1 bit.
        let mdp = corridor();
        let inst = instance("* F[0,2] blue\nF[0,2] red", 0.95, 0.8);
        let result = synthesize_exact(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap();
        assert!(result.theta > 1.0 - 1e-3, "theta {}", result.theta);
        assert!((result.entropy_bits - 1.0).abs() < 1e-3);
        assert_eq!(result.candidate_set, vec![0, 1]);
        assert!(result.per_spec[0].mu > 1.0 - FEAS_TOL);
        assert!(result.per_spec[1].mu > 1.0 - FEAS_TOL);
    }

    #[test]
    fn unreachable_target_is_infeasible_at_zero() {
        let mdp = two_room();
        let inst = instance("* G[0,2] goal", 0.95, 0.8);
        let err = synthesize_exact(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap_err();
        match err {
            SynthError::Solve(SolveError::InfeasibleAtZero) => {}
            other => panic!("expected infeasibility, got {other}"),
        }
    }

    #[test]
    fn slippery_model_cannot_hit_certainty() {
        // go reaches b with at most 0.99 over two stages, so gamma = 1
        // admits no policy at all.
        let mdp = two_room();
        let inst = instance("* F[0,2] goal", 1.0, 0.8);
        let err = synthesize_exact(&mdp, &inst, 1e-4, &Backend::Builtin).unwrap_err();
        assert!(matches!(
            err,
            SynthError::Solve(SolveError::InfeasibleAtZero)
        ));
    }

    #[test]
    fn program_layout_holds_occupancies_first() {
        let mdp = corridor();
        let inst = instance("* F[0,2] blue\nF[0,2] red", 0.9, 0.5);
        let (p, product, in_net) = assemble_exact(&mdp, &inst).unwrap();
        let na = product.action_count();
        for s in 0..product.state_count() {
            for a in 0..na {
                let def = &p.vars[s * na + a];
                assert_eq!(def.lo, 0.0);
                assert_eq!(def.hi, f64::from(in_net[s]));
            }
        }
        assert_eq!(p.mu_vars.len(), 2);
        assert_eq!(p.x_vars.len(), 2);
        assert_eq!(p.entropy_vars.len(), 2);
        // The ground-truth selector is pinned on.
        let gt = &p.vars[p.x_vars[0]];
        assert_eq!((gt.lo, gt.hi), (1.0, 1.0));
    }
}
