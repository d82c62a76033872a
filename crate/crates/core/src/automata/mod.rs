//! Formula automata and their synchronous product with the stage-expanded
//! MDP.

pub mod dfa;
pub mod product;

pub use dfa::{Guard, StageDfa};
pub use product::ProductMdp;
