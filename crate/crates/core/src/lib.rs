//! Sampling-based model-predictive control cast as dynamic mirror descent.
//!
//! The crate is organized around one MPC round: sample control sequences from
//! a factorized [`distribution::HorizonParams`], roll them out through a model
//! ([`simulation`]), turn the resulting costs into a gradient of a per-round
//! loss ([`losses`]), take one Bregman proximal step ([`updates`]) and shift
//! the plan forward for the next round. [`analytic`] holds exact quadratic
//! losses for linear-quadratic problems, used as verification targets, and
//! [`harness`] runs full episodes and parameter sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod distribution;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod simulation;
pub mod updates;

pub use error::{Error, Result};
