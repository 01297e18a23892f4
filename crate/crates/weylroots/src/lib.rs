//! Real zeros of random Weyl polynomials `P_n(x) = sum xi_i x^i / sqrt(i!)`.
//!
//! The crate evaluates the Gaussian baseline in closed form, assembles the
//! Edgeworth corrections for general coefficient laws, and checks the
//! expectation, variance, small-ball and anti-concentration statements by
//! Monte Carlo and brute force.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeff_dist;
pub mod diophantine;
pub mod edgeworth;
pub mod error;
pub mod gaussian_theory;
pub mod montecarlo;
pub mod quadrature;
pub mod rng;
pub mod root_count;
pub mod special;
pub mod weyl_eval;

pub use coeff_dist::CoefficientDistribution;
pub use error::{Category, Error, Result};
pub use weyl_eval::{BasisWindow, WeylSample};
