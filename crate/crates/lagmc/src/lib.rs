//! Solver and numerical verifier for the second boundary value problem of the
//! Lagrangian mean curvature equation
//!
//! ```text
//! F_tau(lambda(D^2 u)) = f(x) + c   in  Omega,
//! Du(Omega) = Omega~,
//! ```
//!
//! where `Omega`, `Omega~` are smooth uniformly convex planar domains, `f` is a
//! concave right-hand side (typically `f = kappa . x`), `lambda(D^2 u)` are the
//! Hessian eigenvalues and `c` is a constant determined together with the
//! uniformly convex potential `u`.
//!
//! The crate is organized as:
//!
//! * [`operators`] - the operator family `F_tau`, its derivatives, limits,
//!   structure-condition bounds and Legendre dual,
//! * [`geometry`] - uniformly convex domains and concave defining functions,
//! * [`grid`] - boundary-fitted polar grids with spectral/finite-difference
//!   derivatives and quadrature,
//! * [`solver`] - damped Newton inside a homotopy loop for `(u, c)`, plus the
//!   independent dual solve on the target domain,
//! * [`diagnostics`] - numerical certificates (obliqueness, pinching, mass
//!   identity, mean-curvature identity, duality, uniqueness),
//! * [`config`] / [`cli`] - the configuration file format and the command-line
//!   front end.

// node-indexed loops are the idiom throughout the discretization; iterator
// rewrites would obscure the stencil structure
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod operators;
pub mod solver;

pub use diagnostics::DiagnosticsReport;
pub use geometry::{ConvexDomain, DefiningFunction};
pub use grid::{MappedGrid, ScalarField};
pub use operators::{Branch, OperatorParams, SpectrumPoint, StructureBounds};
pub use solver::{ProblemSpec, SolveState};
