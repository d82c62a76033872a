//! Deterministic automata over stage-labeled inputs.
//!
//! A [`StageDfa`] reads one input per step: the truth value of the tracked
//! proposition together with the stage marker of the state that produced it.
//! Stages run 1, 2, ... up to a cap and then repeat the cap forever. Below
//! the cap the stage itself reveals the word position; at the cap the
//! automaton counts the extra inputs internally, so a formula whose last
//! relevant position lies at or past the cap is still decided correctly.

use crate::error::AutomataError;
use crate::speclang::{Form, SpecFormula};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Input class of an arc: required proposition value (`None` = either) and
/// an inclusive stage window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guard {
    pub need: Option<bool>,
    pub stage_lo: u32,
    pub stage_hi: u32,
}

impl Guard {
    pub fn matches(&self, present: bool, stage: u32) -> bool {
        self.need.is_none_or(|b| b == present)
            && self.stage_lo <= stage
            && stage <= self.stage_hi
    }
}

/// Decision progress of the underlying formula while reading a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prog {
    /// Bare literal, first position not read yet.
    Start,
    /// Single-operator form, undecided.
    Wait,
    /// Nested form: length of the current all-satisfied streak (F G) or
    /// all-violated gap (G F), capped at the inner window width.
    Run(u32),
    Acc,
    Rej,
}

/// One step of the progress machine on the literal value at word position k.
fn advance(form: Form, prog: Prog, lit: bool, k: u32) -> Prog {
    match (form, prog) {
        (_, Prog::Acc) => Prog::Acc,
        (_, Prog::Rej) => Prog::Rej,
        (Form::Atom, _) => {
            if lit {
                Prog::Acc
            } else {
                Prog::Rej
            }
        }
        (Form::Eventually { lo, hi }, Prog::Wait) => {
            if k >= lo && k <= hi && lit {
                Prog::Acc
            } else if k >= hi {
                Prog::Rej
            } else {
                Prog::Wait
            }
        }
        (Form::Always { lo, hi }, Prog::Wait) => {
            if k >= lo && k <= hi && !lit {
                Prog::Rej
            } else if k >= hi {
                Prog::Acc
            } else {
                Prog::Wait
            }
        }
        (Form::EventuallyAlways { olo, ohi, ilo, ihi }, Prog::Run(n)) => {
            let w = ihi - ilo + 1;
            if k < olo + ilo {
                return Prog::Run(0);
            }
            let n2 = if lit { (n + 1).min(w) } else { 0 };
            // A full streak ending at k covers [k-ihi+ilo, k], which is the
            // inner window of outer position k-ihi; that position must lie in
            // the outer interval.
            if n2 == w && k >= olo + ihi {
                Prog::Acc
            } else if k >= ohi + ihi {
                Prog::Rej
            } else {
                Prog::Run(n2)
            }
        }
        (Form::AlwaysEventually { olo, ohi, ilo, ihi }, Prog::Run(n)) => {
            let w = ihi - ilo + 1;
            if k < olo + ilo {
                return Prog::Run(0);
            }
            let n2 = if lit { 0 } else { (n + 1).min(w) };
            if n2 == w && k >= olo + ihi {
                Prog::Rej
            } else if k >= ohi + ihi {
                Prog::Acc
            } else {
                Prog::Run(n2)
            }
        }
        (_, Prog::Start) | (_, Prog::Wait) | (_, Prog::Run(_)) => {
            unreachable!("progress state does not match formula shape")
        }
    }
}

fn start_prog(form: Form) -> Prog {
    match form {
        Form::Atom => Prog::Start,
        Form::Eventually { .. } | Form::Always { .. } => Prog::Wait,
        Form::EventuallyAlways { .. } | Form::AlwaysEventually { .. } => Prog::Run(0),
    }
}

/// A total DFA for one formula, fed by (proposition value, stage) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageDfa {
    pub formula: SpecFormula,
    /// Stage cap; inputs carry stages 1..=stages.
    pub stages: u32,
    pub initial: usize,
    /// arcs[q] = (guard, target); guards partition the input space.
    arcs: Vec<Vec<(Guard, usize)>>,
    /// Sorted accepting states. The formula holds iff one is ever entered.
    accepting: Vec<usize>,
    /// Post-acceptance sink, present after [`StageDfa::with_terminal`].
    pub terminal: Option<usize>,
}

impl StageDfa {
    /// Compiles a formula against a stage cap of at least 1. Positions at or
    /// past the cap are tracked by an internal counter, so any cap works.
    pub fn build(formula: &SpecFormula, stages: u32) -> Result<Self, AutomataError> {
        if stages == 0 {
            return Err(AutomataError::HorizonTooSmall {
                given: 0,
                needed: 1,
            });
        }
        let horizon = formula.horizon();
        // Positions the stage no longer identifies must be counted: position
        // stages-1+c is read by the c-th capped input.
        let c_max = (horizon + 1).saturating_sub(stages);

        let k_of = |t: u32, c: u32| if t < stages { t - 1 } else { stages - 1 + c };
        let key_of = |prog: Prog, c: u32| match prog {
            Prog::Acc | Prog::Rej => (prog, 0),
            _ => (prog, c),
        };

        // Inputs arrive with stages 1, 2, ..., capped at `stages`, so from a
        // state entered at stage t the only possible next input stage is
        // min(t+1, stages). Walking (state, stage) pairs keeps the automaton
        // free of states no real feed can reach.
        let start = key_of(start_prog(formula.form), 0);
        let mut index: BTreeMap<(Prog, u32), usize> = BTreeMap::new();
        index.insert(start, 0);
        let mut order = vec![start];
        let mut feed_stages: Vec<std::collections::BTreeSet<u32>> = vec![Default::default()];
        let mut pairs = std::collections::BTreeSet::new();
        let mut queue = std::collections::VecDeque::new();
        queue.push_back((start, 0u32));
        pairs.insert((start, 0u32));
        while let Some(((prog, c), entered)) = queue.pop_front() {
            let t = (entered + 1).min(stages);
            let q = index[&(prog, c)];
            feed_stages[q].insert(t);
            for present in [false, true] {
                let lit = present != formula.negated;
                let prog2 = advance(formula.form, prog, lit, k_of(t, c));
                let c2 = if t == stages { (c + 1).min(c_max) } else { c };
                let key = key_of(prog2, c2);
                index.entry(key).or_insert_with(|| {
                    order.push(key);
                    feed_stages.push(Default::default());
                    order.len() - 1
                });
                if pairs.insert((key, t)) {
                    queue.push_back((key, t));
                }
            }
        }

        let mut arcs: Vec<Vec<(Guard, usize)>> = Vec::new();
        for (q, &(prog, c)) in order.iter().enumerate() {
            // Targets per stage for each proposition value, then compressed
            // into stage-window guards. Stages no real feed can deliver to
            // this state self-loop, keeping the guards total.
            let mut targets = [vec![0usize; stages as usize], vec![0usize; stages as usize]];
            for t in 1..=stages {
                for (bi, present) in [false, true].into_iter().enumerate() {
                    let to = if feed_stages[q].contains(&t) {
                        let lit = present != formula.negated;
                        let prog2 = advance(formula.form, prog, lit, k_of(t, c));
                        let c2 = if t == stages { (c + 1).min(c_max) } else { c };
                        index[&key_of(prog2, c2)]
                    } else {
                        q
                    };
                    targets[bi][(t - 1) as usize] = to;
                }
            }
            let mut state_arcs = Vec::new();
            let mut t = 1u32;
            while t <= stages {
                let pair = (targets[0][(t - 1) as usize], targets[1][(t - 1) as usize]);
                let mut hi = t;
                while hi < stages
                    && (targets[0][hi as usize], targets[1][hi as usize]) == pair
                {
                    hi += 1;
                }
                if pair.0 == pair.1 {
                    state_arcs.push((
                        Guard {
                            need: None,
                            stage_lo: t,
                            stage_hi: hi,
                        },
                        pair.0,
                    ));
                } else {
                    for (need, to) in [(false, pair.0), (true, pair.1)] {
                        state_arcs.push((
                            Guard {
                                need: Some(need),
                                stage_lo: t,
                                stage_hi: hi,
                            },
                            to,
                        ));
                    }
                }
                t = hi + 1;
            }
            arcs.push(state_arcs);
        }

        let accepting: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, &(p, _))| p == Prog::Acc)
            .map(|(i, _)| i)
            .collect();
        let dfa = StageDfa {
            formula: formula.clone(),
            stages,
            initial: 0,
            arcs,
            accepting,
            terminal: None,
        };
        dfa.validate()?;
        Ok(dfa)
    }

    /// Like [`StageDfa::build`] but insists the cap is large enough that no
    /// internal position counting is needed, i.e. every relevant position is
    /// identified by its stage alone.
    pub fn build_uncapped(formula: &SpecFormula, stages: u32) -> Result<Self, AutomataError> {
        let needed = formula.horizon() + 1;
        if stages < needed {
            return Err(AutomataError::HorizonTooSmall {
                given: stages,
                needed,
            });
        }
        Self::build(formula, stages)
    }

    /// Redirects every arc out of an accepting state to a fresh sink, so a
    /// run visits accepting states at most once and the expected number of
    /// such visits equals the probability of ever accepting.
    pub fn with_terminal(&self) -> StageDfa {
        let mut out = self.clone();
        let sink = out.arcs.len();
        let all = Guard {
            need: None,
            stage_lo: 1,
            stage_hi: self.stages,
        };
        for &q in &self.accepting {
            out.arcs[q] = vec![(all, sink)];
        }
        out.arcs.push(vec![(all, sink)]);
        out.terminal = Some(sink);
        out
    }

    pub fn state_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting.binary_search(&q).is_ok()
    }

    pub fn accepting(&self) -> &[usize] {
        &self.accepting
    }

    /// True if every input keeps the automaton in `q`.
    pub fn is_absorbing(&self, q: usize) -> bool {
        self.arcs[q].iter().all(|&(_, to)| to == q)
    }

    pub fn step(&self, q: usize, present: bool, stage: u32) -> usize {
        for &(g, to) in &self.arcs[q] {
            if g.matches(present, stage) {
                return to;
            }
        }
        unreachable!("guards are total by construction")
    }

    /// Runs the automaton over a word fed with stages 1, 2, ... capped at
    /// `self.stages`, returning the final state.
    pub fn read(&self, word: &[bool]) -> usize {
        let mut q = self.initial;
        for (j, &present) in word.iter().enumerate() {
            let stage = ((j + 1) as u32).min(self.stages);
            q = self.step(q, present, stage);
        }
        q
    }

    /// Whether the word drove the automaton into acceptance (directly or,
    /// for a terminal-extended automaton, through an accepting state).
    pub fn accepts(&self, word: &[bool]) -> bool {
        let q = self.read(word);
        self.is_accepting(q) || Some(q) == self.terminal
    }

    /// Checks that the guards of every state partition the full input space.
    pub fn validate(&self) -> Result<(), AutomataError> {
        for (q, arcs) in self.arcs.iter().enumerate() {
            for t in 1..=self.stages {
                for present in [false, true] {
                    let n = arcs.iter().filter(|(g, _)| g.matches(present, t)).count();
                    if n != 1 {
                        return Err(AutomataError::Internal(format!(
                            "state {q} has {n} arcs for input ({present}, stage {t})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn arcs(&self, q: usize) -> &[(Guard, usize)] {
        &self.arcs[q]
    }
}
