//! The optimization engine: a bounded-variable simplex core, column
//! generation over the occupancy flow, the concave entropy surrogate with
//! its Frank-Wolfe maximizer, binary-assignment search, and the bisection
//! loop over entropy levels.

pub mod bisect;
pub mod colgen;
pub mod concave;
pub mod feas;
pub mod flow;
pub mod lp;

pub use bisect::{bisect, bisect_with, default_bounds, BisectionOutcome, BisectionState};
pub use colgen::{Master, MasterOutcome};
pub use concave::{entropy_bits, AtomPool, GapOutcome, GapVerdict};
pub use feas::{BranchSearch, FeasibilityResult};
pub use flow::{Column, FlowNet};
pub use lp::{BoundedLp, DualKind, LpOutcome, RowOp};
