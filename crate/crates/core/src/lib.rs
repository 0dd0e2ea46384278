//! Monte Carlo laboratory for the factorization `(Id - E) F = delta(Pi D F)`:
//! path simulation, stochastic integrals, adjoint (Riesz) derivatives and
//! the identity checks built on top of them.

// Negated comparisons reject NaN inputs in validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod adjoint;
pub mod cli;
pub mod error;
pub mod functional_calc;
pub mod generators;
pub mod integration;
pub mod levy;
pub mod numerics;
pub mod paths;
pub mod randomness;

pub use error::{Error, Result};
