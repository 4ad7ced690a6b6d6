//! Successor-representation learning lab.
//!
//! The crate is organized around exact finite-MDP mathematics ([`mdp`]),
//! gridworld stitch-dataset generation ([`grid`]), linear-representation
//! objectives with closed-form oracles ([`linrep`]), a small differentiable
//! MLP toolkit ([`nn`]), goal-conditioned behavioral cloning with auxiliary
//! representation losses ([`trainer`]), and policy evaluation ([`eval`]).

pub mod eval;
pub mod grid;
pub mod linrep;
pub mod mdp;
pub mod nn;
pub mod rngstream;
pub mod trainer;
