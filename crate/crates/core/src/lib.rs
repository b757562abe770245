//! Heat kernels, regularized heat traces, zeta-regularized analytic torsion and
//! Quillen-norm functionals for Riemann surfaces with hyperbolic cusps.
//!
//! Conventions shared by every module:
//! - the generator is the Kodaira Laplacian, which on functions is half the
//!   Laplace–Beltrami operator, so heat kernels are classical kernels at time `t/2`;
//! - cusp charts use the punctured unit disc with metric `|du|^2 / (|u| ln|u|)^2`;
//! - radial cusp integrals run in `w = ln|ln r|`, where the cusp measure is `2π e^{-w} dw`.

// Negated comparisons are how inputs reject NaN; reference constants keep every printed digit.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod acceptance;
pub mod cheb;
pub mod chern_anomaly;
pub mod error;
pub mod heat_kernel;
pub mod hyp_geometry;
pub mod metrics_flattenings;
pub mod profile_dsl;
pub mod quad;
pub mod reg_trace;
pub mod special_functions;
pub mod zeta_torsion;

pub use error::{Error, Result};
