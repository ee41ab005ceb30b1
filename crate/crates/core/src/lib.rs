//! Numerical symplectic homogenization on the cotangent bundle of the circle.
//!
//! The effective Hamiltonian `H̄(p)` of a Hamiltonian `H(q,p)` is computed by
//! three independent routes that validate each other:
//!
//! * min-max spectral invariants of discrete generating functions ([`minmax`]),
//! * long-time Lax-Oleinik averages of the Legendre-dual Lagrangian ([`weakkam`]),
//! * the closed-form level-set formula for 1-D mechanical systems ([`weakkam::levelset_oracle`]).
//!
//! [`homog`] dispatches between them and checks the algebraic laws of the
//! homogenization operator; [`hj`] solves the associated Hamilton-Jacobi problems.

pub mod domain;
pub mod error;
pub mod flow;
pub mod genfun;
pub mod hj;
pub mod homog;
pub mod minmax;
pub mod weakkam;

pub use error::{Error, Result};
