//! Risk-averse optimization under uncertainty for a semilinear elliptic
//! control problem, solved either directly with finite elements and adjoint
//! gradients or through a reduced-basis neural operator trained on states and
//! control Jacobians.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod forward_model;
pub mod linalg_fem;
pub mod randfield;
pub mod reduction;
pub mod riskopt;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
