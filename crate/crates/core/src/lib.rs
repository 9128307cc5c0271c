//! Global branch continuation for parameter-dependent nonlinear systems
//! `F(lambda, u) = 0`, with topological-degree certificates.
//!
//! The toolkit traces unilateral solution branches by pseudo-arclength
//! continuation, computes local indices and box degrees on parameter slices,
//! classifies every traced branch by the global alternatives (unbounded,
//! boundary contact, base-slice return), and resolves rank-deficient zeros
//! through a finite-dimensional Lyapunov-Schmidt reduction with local
//! half-branch enumeration and Puiseux exponent fitting.
//!
//! A 1-D finite-difference discretization of the quasilinear
//! mean-curvature/Minkowski boundary value problem ships as the main
//! application, next to small closed-form systems (circle, fold, pitchfork,
//! line) used for calibration and testing. Independent brute-force oracles
//! (finite-difference Jacobians, a shooting solver, winding-number degrees)
//! cross-check every main-path computation at desk scale.

pub mod builtins;
pub mod config;
pub mod continuation;
pub mod degree;
pub mod error;
pub mod mcbvp;
mod numeric;
pub mod oracles;
pub mod problem;
pub mod report;
pub mod runner;
pub mod singular;

pub use error::{Error, Result};
