//! Safety-filtered dynamics via control barrier functions (CBFs) and their
//! relationship to projected dynamical systems (PDSs).
//!
//! The library provides:
//!
//! * the closed-form CBF-QP vector field together with an independent KKT
//!   oracle ([`cbf`]),
//! * the projected dynamical system, its tangent/normal cones and the
//!   differential-inclusion residual ([`pds`]),
//! * the quantitative perturbation machinery relating the two: constant
//!   estimation, the per-point radius `sigma(a, x)` and a constructive
//!   inclusion witness check ([`bounds`]),
//! * fixed-step integrators for both flavors of constrained dynamics and
//!   trajectory utilities ([`sim`]),
//! * equilibrium search, monotonicity/contraction verification and the
//!   built-in safe-stabilization example ([`analysis`]),
//! * an expression language for scenario files ([`expr`]) and scenario
//!   assembly/validation ([`scenario`]).

pub mod analysis;
pub mod bounds;
pub mod cbf;
pub mod expr;
pub mod geometry;
pub mod pds;
pub mod scenario;
pub mod sim;

pub use geometry::{ConeRep, SpdMatrix, State, BOUNDARY_TOL};
pub use scenario::Scenario;
