//! Error types for every stage of the pipeline. Failures carry enough
//! location detail to fix the offending input.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate state name `{0}`")]
    DuplicateState(String),
    #[error("duplicate action name `{0}`")]
    DuplicateAction(String),
    #[error("initial state `{0}` is not in the state list")]
    UnknownInitial(String),
    #[error("transition {index}: unknown state `{name}`")]
    UnknownState { index: usize, name: String },
    #[error("transition {index}: unknown action `{name}`")]
    UnknownAction { index: usize, name: String },
    #[error("transition {index}: probability {prob} outside [0, 1]")]
    BadProbability { index: usize, prob: f64 },
    #[error("duplicate transition entry for ({state}, {action}, {next})")]
    DuplicateTransition {
        state: String,
        action: String,
        next: String,
    },
    #[error("state `{state}` has no outgoing entries for action `{action}`")]
    MissingAction { state: String, action: String },
    #[error("rows for ({state}, {action}) sum to {sum}, more than 1e-9 away from 1")]
    RowSum {
        state: String,
        action: String,
        sum: f64,
    },
    #[error("labels reference unknown state `{0}`")]
    LabelUnknownState(String),
    #[error("model has no states")]
    Empty,
    #[error("model has no actions")]
    NoActions,
    #[error("expansion horizon must be at least 1")]
    ZeroHorizon,
    #[error("trajectory step {step}: transition {from} -> {to} has probability 0 under every action")]
    BrokenTrajectory { step: usize, from: String, to: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("formula `{text}`: {msg}")]
    Form { text: String, msg: String },
    #[error("spec file has no ground-truth marker `*`")]
    NoGroundTruth,
    #[error("spec file marks more than one formula as ground truth (lines {0} and {1})")]
    MultipleGroundTruth(usize, usize),
    #[error("spec file contains no formulas")]
    EmptySpecSet,
    #[error("threshold {name}={value} outside its valid range {range}")]
    BadThreshold {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("candidate threshold beta={beta} must not exceed required satisfaction gamma={gamma}")]
    BetaAboveGamma { beta: f64, gamma: f64 },
    #[error("word of length {len} is too short to decide a horizon-{horizon} formula at position {k}")]
    WordTooShort { len: usize, horizon: u32, k: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AutomataError {
    #[error("stage horizon {given} is too small; the automaton needs at least {needed}")]
    HorizonTooSmall { given: u32, needed: u32 },
    #[error("product supports at most {max} component automata, got {got}")]
    TooManyComponents { max: usize, got: usize },
    #[error("automaton atom `{0}` is not a proposition of the model")]
    UnknownAtom(String),
    #[error("internal: {0}")]
    Internal(String),
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("program has no entropy terms")]
    NoEntropyTerms,
    #[error("constraints are infeasible before any entropy requirement (theta = 0); the satisfaction threshold cannot be met")]
    InfeasibleAtZero,
    #[error("feasibility check at theta = {theta} was inconclusive: {reason}")]
    Inconclusive { theta: f64, reason: String },
    #[error("iteration budget exhausted in {place} (best value {best})")]
    Budget { place: &'static str, best: f64 },
    #[error("numerical failure in {place}: {msg}")]
    Numerical { place: &'static str, msg: String },
    #[error("witness has negative occupancy {value} at variable `{var}`")]
    NegativeOccupancy { var: String, value: f64 },
    #[error("bisection bounds are invalid: l={l}, u={u}, epsilon={eps}")]
    BadBisection { l: f64, u: f64, eps: f64 },
    #[error("external backend failed: {0}")]
    Backend(String),
    #[error("program/witness mismatch: {0}")]
    Witness(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy expects {expected} actions but the model has {got}")]
    ActionMismatch { expected: usize, got: usize },
    #[error("policy does not fit the model: {0}")]
    Policy(String),
    #[error("formula uses proposition `{0}` which the model does not define")]
    UnknownProposition(String),
    #[error("simulation needs at least one trial")]
    NoTrials,
    #[error("spec error: {0}")]
    Spec(#[from] SpecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Umbrella for the synthesis entry points, which touch every stage.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Automata(#[from] AutomataError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
