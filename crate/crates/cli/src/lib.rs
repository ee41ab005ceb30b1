//! Experiment runner for effective Hamiltonian computations: declarative
//! configs in, stamped CSV/JSON/SVG artifacts out.

pub mod config;
pub mod diff;
pub mod run;
pub mod svg;
