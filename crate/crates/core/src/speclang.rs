//! Bounded temporal formulas over atomic propositions, their parser, and
//! spec-set files.
//!
//! A formula is `F[a,b] phi`, `G[a,b] phi`, or a literal (`p` / `!p`), with
//! intervals over 0-based word positions, inclusive on both ends. Nesting is
//! one temporal operator inside another at most, and the innermost operand
//! is always a literal. `F` asks for some position in the window, `G` for
//! every position.

use crate::error::SpecError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Shape of a formula, with the interval bounds. The literal itself lives in
/// [`SpecFormula`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Form {
    /// Bare literal, evaluated at position 0.
    Atom,
    /// `F[lo,hi] lit`
    Eventually { lo: u32, hi: u32 },
    /// `G[lo,hi] lit`
    Always { lo: u32, hi: u32 },
    /// `F[olo,ohi] G[ilo,ihi] lit`
    EventuallyAlways {
        olo: u32,
        ohi: u32,
        ilo: u32,
        ihi: u32,
    },
    /// `G[olo,ohi] F[ilo,ihi] lit`
    AlwaysEventually {
        olo: u32,
        ohi: u32,
        ilo: u32,
        ihi: u32,
    },
}

/// A parsed formula: a shape applied to one (possibly negated) proposition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecFormula {
    pub form: Form,
    pub atom: String,
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Nat(u32),
    LBrack,
    RBrack,
    Comma,
    Bang,
}

fn tokenize(text: &str) -> Result<Vec<Tok>, String> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '[' => {
                chars.next();
                toks.push(Tok::LBrack);
            }
            ']' => {
                chars.next();
                toks.push(Tok::RBrack);
            }
            ',' => {
                chars.next();
                toks.push(Tok::Comma);
            }
            '!' => {
                chars.next();
                toks.push(Tok::Bang);
            }
            '0'..='9' => {
                let mut n: u64 = 0;
                while let Some(&d) = chars.peek() {
                    if let Some(v) = d.to_digit(10) {
                        n = n * 10 + v as u64;
                        if n > u32::MAX as u64 {
                            return Err("interval bound does not fit in 32 bits".into());
                        }
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push(Tok::Nat(n as u32));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut name = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        name.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push(Tok::Ident(name));
            }
            other => return Err(format!("unexpected character `{other}`")),
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
}

#[derive(Debug)]
enum Ast {
    Literal { atom: String, negated: bool },
    Temporal { always: bool, lo: u32, hi: u32, sub: Box<Ast> },
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), String> {
        match self.next() {
            Some(t) if *t == want => Ok(()),
            Some(t) => Err(format!("expected {what}, found {t:?}")),
            None => Err(format!("expected {what}, found end of input")),
        }
    }

    fn nat(&mut self) -> Result<u32, String> {
        match self.next() {
            Some(Tok::Nat(n)) => Ok(*n),
            Some(t) => Err(format!("expected a number, found {t:?}")),
            None => Err("expected a number, found end of input".into()),
        }
    }

    fn formula(&mut self) -> Result<Ast, String> {
        match self.peek() {
            Some(Tok::Bang) => {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Ident(name)) => {
                        // `!F[...]` would negate a temporal operator, which the
                        // language does not allow; catch it here for a clear error.
                        let name = name.clone();
                        if (name == "F" || name == "G") && self.peek() == Some(&Tok::LBrack) {
                            return Err("negation applies to propositions only".into());
                        }
                        Ok(Ast::Literal {
                            atom: name,
                            negated: true,
                        })
                    }
                    other => Err(format!("expected a proposition after `!`, found {other:?}")),
                }
            }
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                // F and G act as operators only when directly applied to an
                // interval; otherwise they are ordinary proposition names.
                if (name == "F" || name == "G") && self.peek() == Some(&Tok::LBrack) {
                    self.expect(Tok::LBrack, "`[`")?;
                    let lo = self.nat()?;
                    self.expect(Tok::Comma, "`,`")?;
                    let hi = self.nat()?;
                    self.expect(Tok::RBrack, "`]`")?;
                    if lo > hi {
                        return Err(format!("empty interval [{lo},{hi}]"));
                    }
                    let sub = self.formula()?;
                    Ok(Ast::Temporal {
                        always: name == "G",
                        lo,
                        hi,
                        sub: Box::new(sub),
                    })
                } else {
                    Ok(Ast::Literal {
                        atom: name,
                        negated: false,
                    })
                }
            }
            Some(t) => Err(format!("expected a formula, found {t:?}")),
            None => Err("expected a formula, found end of input".into()),
        }
    }
}

fn classify(ast: Ast) -> Result<SpecFormula, String> {
    match ast {
        Ast::Literal { atom, negated } => Ok(SpecFormula {
            form: Form::Atom,
            atom,
            negated,
        }),
        Ast::Temporal { always, lo, hi, sub } => match *sub {
            Ast::Literal { atom, negated } => Ok(SpecFormula {
                form: if always {
                    Form::Always { lo, hi }
                } else {
                    Form::Eventually { lo, hi }
                },
                atom,
                negated,
            }),
            Ast::Temporal {
                always: in_always,
                lo: ilo,
                hi: ihi,
                sub: inner,
            } => {
                let Ast::Literal { atom, negated } = *inner else {
                    return Err("at most two nested temporal operators are supported".into());
                };
                let form = match (always, in_always) {
                    (false, true) => Form::EventuallyAlways {
                        olo: lo,
                        ohi: hi,
                        ilo,
                        ihi,
                    },
                    (true, false) => Form::AlwaysEventually {
                        olo: lo,
                        ohi: hi,
                        ilo,
                        ihi,
                    },
                    (false, false) => {
                        return Err("F[..] F[..] collapses to a single F; write it that way".into())
                    }
                    (true, true) => {
                        return Err("G[..] G[..] collapses to a single G; write it that way".into())
                    }
                };
                Ok(SpecFormula {
                    form,
                    atom,
                    negated,
                })
            }
        },
    }
}

impl SpecFormula {
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let fail = |msg: String| SpecError::Form {
            text: text.trim().to_string(),
            msg,
        };
        let toks = tokenize(text).map_err(fail)?;
        let mut p = Parser {
            toks: &toks,
            pos: 0,
        };
        let ast = p.formula().map_err(fail)?;
        if p.pos != toks.len() {
            return Err(fail(format!(
                "trailing input after formula: {:?}",
                toks[p.pos]
            )));
        }
        classify(ast).map_err(fail)
    }

    /// The stage offsets at which this formula can first be decided, used to
    /// size the expanded process. For nested formulas these are the pairwise
    /// sums of outer and inner bounds.
    pub fn param_set(&self) -> Vec<u32> {
        let mut ps = match self.form {
            Form::Atom => vec![0],
            Form::Eventually { lo, hi } | Form::Always { lo, hi } => vec![lo, hi],
            Form::EventuallyAlways { olo, ohi, ilo, ihi }
            | Form::AlwaysEventually { olo, ohi, ilo, ihi } => {
                vec![olo + ilo, olo + ihi, ohi + ilo, ohi + ihi]
            }
        };
        ps.sort_unstable();
        ps.dedup();
        ps
    }

    /// Largest word position the formula can depend on.
    pub fn horizon(&self) -> u32 {
        *self.param_set().last().unwrap()
    }

    /// Evaluates the formula at position `k` of a word of length `len` whose
    /// positions are exposed through `holds(position, proposition)`.
    ///
    /// The word must cover every position the formula can inspect.
    pub fn eval_at(
        &self,
        len: usize,
        k: usize,
        holds: &impl Fn(usize, &str) -> bool,
    ) -> Result<bool, SpecError> {
        let need = k + self.horizon() as usize;
        if need >= len {
            return Err(SpecError::WordTooShort {
                len,
                horizon: self.horizon(),
                k,
            });
        }
        let lit = |j: usize| holds(j, &self.atom) != self.negated;
        Ok(match self.form {
            Form::Atom => lit(k),
            Form::Eventually { lo, hi } => {
                (k + lo as usize..=k + hi as usize).any(lit)
            }
            Form::Always { lo, hi } => (k + lo as usize..=k + hi as usize).all(lit),
            Form::EventuallyAlways { olo, ohi, ilo, ihi } => (k + olo as usize
                ..=k + ohi as usize)
                .any(|j| (j + ilo as usize..=j + ihi as usize).all(lit)),
            Form::AlwaysEventually { olo, ohi, ilo, ihi } => (k + olo as usize
                ..=k + ohi as usize)
                .all(|j| (j + ilo as usize..=j + ihi as usize).any(lit)),
        })
    }

    /// Evaluates the formula at the start of the word.
    pub fn satisfied_by(
        &self,
        len: usize,
        holds: &impl Fn(usize, &str) -> bool,
    ) -> Result<bool, SpecError> {
        self.eval_at(len, 0, holds)
    }
}

impl fmt::Display for SpecFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lit = if self.negated {
            format!("!{}", self.atom)
        } else {
            self.atom.clone()
        };
        match self.form {
            Form::Atom => write!(f, "{lit}"),
            Form::Eventually { lo, hi } => write!(f, "F[{lo},{hi}] {lit}"),
            Form::Always { lo, hi } => write!(f, "G[{lo},{hi}] {lit}"),
            Form::EventuallyAlways { olo, ohi, ilo, ihi } => {
                write!(f, "F[{olo},{ohi}] G[{ilo},{ihi}] {lit}")
            }
            Form::AlwaysEventually { olo, ohi, ilo, ihi } => {
                write!(f, "G[{olo},{ohi}] F[{ilo},{ihi}] {lit}")
            }
        }
    }
}

/// An ordered set of candidate formulas with one marked as the real task.
#[derive(Debug, Clone)]
pub struct SpecSet {
    pub formulas: Vec<SpecFormula>,
    pub ground_truth: usize,
}

impl SpecSet {
    /// Parses the line-oriented spec-set format: one formula per line, `#`
    /// starts a comment, and a leading `*` marks the ground-truth formula.
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut formulas = Vec::new();
        let mut ground_truth: Option<(usize, usize)> = None; // (index, line)
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (marked, body) = match body.strip_prefix('*') {
                Some(rest) => (true, rest.trim_start()),
                None => (false, body),
            };
            let formula = SpecFormula::parse(body).map_err(|e| SpecError::Parse {
                line,
                msg: e.to_string(),
            })?;
            if marked {
                if let Some((_, first_line)) = ground_truth {
                    return Err(SpecError::MultipleGroundTruth(first_line, line));
                }
                ground_truth = Some((formulas.len(), line));
            }
            formulas.push(formula);
        }
        if formulas.is_empty() {
            return Err(SpecError::EmptySpecSet);
        }
        let Some((ground_truth, _)) = ground_truth else {
            return Err(SpecError::NoGroundTruth);
        };
        Ok(SpecSet {
            formulas,
            ground_truth,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SpecError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// A complete synthesis problem: the candidate set plus both probability
/// thresholds.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub specs: SpecSet,
    /// Required satisfaction probability of the ground-truth formula.
    pub gamma: f64,
    /// Probability at which a formula counts as a plausible candidate.
    pub beta: f64,
}

impl ProblemInstance {
    pub fn new(specs: SpecSet, gamma: f64, beta: f64) -> Result<Self, SpecError> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(SpecError::BadThreshold {
                name: "gamma",
                value: gamma,
                range: "(0, 1]",
            });
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(SpecError::BadThreshold {
                name: "beta",
                value: beta,
                range: "(0, 1)",
            });
        }
        if beta > gamma {
            return Err(SpecError::BetaAboveGamma { beta, gamma });
        }
        Ok(ProblemInstance { specs, gamma, beta })
    }

    /// Stage horizon shared by every automaton: the largest parameter over
    /// all candidates, but at least 1 so the expanded process is nonempty.
    pub fn shared_horizon(&self) -> u32 {
        self.specs
            .formulas
            .iter()
            .map(|f| f.horizon())
            .max()
            .unwrap_or(0)
            .max(1)
    }
}
