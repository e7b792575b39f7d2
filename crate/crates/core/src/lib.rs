//! Numerical laboratory for the parabolic Anderson model `∂_t u = κΔu + ξu` on
//! `Z^d`: solution flows, principal eigenvalues, the characteristic variational
//! problems, universality classes, intermittency diagnostics and the catalytic
//! time-dependent variant.

// `!(x > 0.0)` guards deliberately reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalytic;
pub mod error;
pub mod intermittency;
pub mod lattice;
pub mod linalg;
pub mod potentials;
pub mod rng;
pub mod scaling;
pub mod solver;
pub mod special;
pub mod spectral;
pub mod stats;
pub mod variational;

pub use error::{PamError, Result};
