//! Hamilton-Jacobi generating-function tracking for the planar circular
//! restricted three-body problem.

pub mod basis;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod hamiltonian;
pub mod hj;
pub mod integrator;
pub mod mpc;
pub mod nominal;
pub mod points;
pub mod scenario;
pub mod simplex;
pub mod tracking;
pub mod units;
