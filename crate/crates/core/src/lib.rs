//! Monte-Carlo toolkit for the randomization approach to stochastic optimal control.
//!
//! A control problem (controlled SDE plus gain) is solved three ways: by brute-force
//! search over simple feedback controls, by optimizing the intensity of an exogenous
//! marked Poisson process that drives the action, and by a penalized BSDE with
//! constrained jumps solved with least-squares Monte Carlo. Independent oracles
//! (closed forms, an explicit HJB finite-difference scheme, plain expectations)
//! check all of them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod approx;
pub mod bsde;
pub mod campaign;
pub mod config;
pub mod control;
pub mod error;
pub mod intensity;
pub mod oracles;
pub mod point_process;
pub mod problem;
pub mod randomized;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
