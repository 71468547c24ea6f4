//! Numerical pseudo-Riemannian geometry.
//!
//! The crate computes curvature (Christoffel symbols, Riemann/Ricci/scalar,
//! orthonormal-frame components), builds normal coordinates by integrating
//! the radial structure equations, reconstructs the normal-coordinate metric
//! and its direction-dependent conformal factor, detects conjugate points via
//! Jacobi fields, classifies Killing and conformal Killing fields on
//! constant-curvature embeddings, and realizes so(p,q) angular-momentum
//! algebras with Casimir verification.
//!
//! Start from a [`metric::MetricSpec`] (preset or parsed config), then feed
//! it to the modules below. Everything is pure and immutable after
//! construction; batch evaluations are safe to parallelize.
//!
//! Conventions used throughout:
//! - the frame Riemann tensor of a constant-curvature space is
//!   `K (eta_AD eta_BC - eta_AC eta_BD)`; Ricci and scalar curvature follow
//!   the same orientation (the unit 2-sphere has scalar curvature -2 here);
//! - vielbeins satisfy `E^T eta E = g` with deterministic eigen-based
//!   construction;
//! - all randomness is seeded; identical inputs give byte-identical reports.

pub mod algebra;
pub mod cli;
pub mod curvature;
pub mod dual;
pub mod embedding;
pub mod error;
pub mod expr;
pub mod fd;
pub mod jacobi;
pub mod linalg;
pub mod metric;
pub mod normal;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{GeomError, Result};
