//! Synthesis of finite-horizon MDP policies that complete a hidden task
//! while looking as non-committal as possible to an outside observer.
//!
//! The pipeline: parse a set of bounded temporal formulas (`speclang`),
//! compile each to a stage-indexed DFA and build the product with the
//! stage-expanded MDP (`automata`, `model`), assemble an occupancy-measure
//! program whose objective is the entropy of the observer's posterior over
//! the formula set (`program`), solve it by bisection over the entropy level
//! with a column-generation inner solver (`optcore`), and extract a finite-
//! memory policy (`policy`). `synth` ties the stages together and `eval`
//! checks the result by exact propagation and by simulation.

pub mod automata;
pub mod error;
pub mod eval;
pub mod model;
pub mod optcore;
pub mod policy;
pub mod program;
pub mod speclang;
pub mod synth;

pub use automata::{ProductMdp, StageDfa};
pub use error::{AutomataError, EvalError, ModelError, SolveError, SpecError, SynthError};
pub use model::{ExpandedMdp, Mdp, Trajectory};
pub use policy::{Policy, PolicyEntry, PolicyRunner};
pub use speclang::{Form, ProblemInstance, SpecFormula, SpecSet};
pub use synth::{synthesize_approx, synthesize_exact, Backend, SynthesisResult};
