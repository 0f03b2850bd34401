//! Matérn random fields on finite-element meshes.
//!
//! Fields are represented by sparse precision matrices built from the
//! stochastic PDE `(κ² − ∇·H∇)^β (τ s) = W`. Fractional exponents go through a
//! best rational approximation so the precision stays sparse. On top of the
//! field representation sit Gaussian-process regression with repeated
//! readings and the statistical finite element method.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod gp;
pub mod hyper;
pub mod io;
pub mod mesh;
pub mod parallel;
pub mod rational;
pub mod sparse;
pub mod spde;
pub mod statfem;

pub use error::{Error, Result};
