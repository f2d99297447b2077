//! Trust-region stochastic SQP for equality-constrained problems
//! `min f(x) s.t. c(x) = 0` where only noisy estimates of `f`, its gradient and
//! its Hessian are available.
//!
//! The crate is organised bottom-up: [`linops`] holds the dense kernels,
//! [`problem`] the test problems and ground-truth residuals, [`oracles`] the
//! noisy estimators, [`steps`] and [`merit`] the pieces of one iteration,
//! [`solver`] the driver and [`bench`] the experiment harness.

// `!(a <= b)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod linops;
pub mod merit;
pub mod oracles;
pub mod problem;
pub mod solver;
pub mod steps;

pub use error::{Error, Result};
pub use problem::{make_problem, ProblemModel};
