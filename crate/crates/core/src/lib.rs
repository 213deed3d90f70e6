//! Numerical laboratory for infinite-horizon Epstein–Zin stochastic
//! differential utility in the high-elasticity regime θ = (1−R)/(1−S) > 1.
//!
//! The crate has three layers:
//!
//! * **closed forms** ([`params`], [`closed_form`]) — preference/market
//!   validation, the proportional value h(π, ξ)·x^{1−R} and its optimizer,
//!   and the one-parameter improper family that witnesses non-uniqueness;
//! * **lattice machinery** ([`lattice`], [`fixed_point`], [`analysis`]) — a
//!   moment-calibrated recombining tree, exact nonlinear backward induction,
//!   Picard iteration with order certificates, the perturbed extremal
//!   construction, and a classifier that tells proper solutions from
//!   improper ones;
//! * **cross-checks** ([`montecarlo`]) — pathwise Monte Carlo residuals
//!   against any closed-form candidate.
//!
//! The `sdu-lab` binary (see [`cli`]) exposes all of it as CSV-emitting
//! subcommands.

// Validation guards are written `!(x > 0.0)` on purpose: the negation
// rejects NaN along with the out-of-range values, which `x <= 0.0` silently
// lets through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod closed_form;
pub mod error;
pub mod fixed_point;
pub mod lattice;
pub mod montecarlo;
pub mod params;

pub use error::SduError;
