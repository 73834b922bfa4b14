//! Stochastic mirror descent driven by an iterate-dependent Markov chain,
//! together with the exact finite-state solvers used to verify it.
//!
//! The crate has two halves that check each other:
//!
//! * An **optimizer**: mirror descent on the probability simplex (entropic or
//!   Euclidean geometry) whose gradient samples come from a Markov chain
//!   whose transition kernel depends on the current iterate
//!   ([`optimizer::run_smd`]).
//! * A set of **exact oracles** at desk scale: stationary distributions and
//!   Poisson-equation solutions of finite chains ([`markov`]), closed-form
//!   tangent projections with an independent KKT route ([`stationarity`]),
//!   and constructed test problems whose mean-field gradient is known in
//!   closed form ([`problems`]).
//!
//! On top of both sit the noise-decomposition and concentration experiments
//! ([`analysis`]): splitting the chain noise into a martingale-difference
//! part plus a telescoping bias via the Poisson solution, Monte-Carlo tail
//! estimation against Azuma-type bounds, and sample-complexity calculators.
//!
//! The `mirrordyn` binary exposes the experiment harness; see the crate
//! README for the CLI contract and file formats.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod markov;
pub mod optimizer;
pub mod oracles;
pub mod problems;
pub mod stationarity;

pub use error::{MirrorError, Result};
