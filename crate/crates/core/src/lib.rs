//! Semiparametric instrumental-variables estimation with a deep ReLU-network
//! first stage.
//!
//! The estimator fits `E(X | Z)` with a fully connected network and plugs the
//! fitted values into an OLS-style moment equation. Around it sit the
//! competitor first stages (spline lasso, linear), a cross-fitted variant,
//! a Hausman-type instrument test, a calculator for the structural rate
//! quantities, and a Monte Carlo laboratory.

pub mod error;
pub mod first_stage;
pub mod inference;
pub mod mlp;
pub mod numerics;
pub mod simlab;
pub mod spec_test;
pub mod split_sample;
pub mod theory_calc;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream};
