//! Binary A-optimal sensor placement for heat source inversion from
//! final-time point measurements.
//!
//! The library covers the full pipeline:
//!
//! * triangular meshing of a rectangular room with circular obstacles
//!   ([`mesh`]),
//! * P1 finite element operators: mass, diffusion stiffness, boundary mass
//!   and pointwise observation ([`assembly`]),
//! * implicit-Euler heat solves and the exact discrete adjoint of the
//!   source-to-observation map ([`heat`]),
//! * a bilaplacian Gaussian prior with Robin boundary ([`prior`]),
//! * randomized low-rank factorization of the prior-preconditioned
//!   observation operator ([`lowrank`]),
//! * the A-optimality criterion, its gradient, and the binary
//!   redundant-dominant p-continuation design optimizer ([`design`]),
//! * noise calibration, MAP reconstruction and posterior variance fields
//!   ([`posterior`]),
//! * a config-driven pipeline with caching and CSV outputs ([`pipeline`]).
//!
//! See the crate examples for one runnable program per capability, and the
//! `oedheat` binary for the `factorize | sweep | reconstruct | variance | all`
//! subcommands.

pub mod assembly;
pub mod config;
pub mod design;
pub mod error;
pub mod heat;
pub mod lowrank;
pub mod mesh;
pub mod pipeline;
pub mod posterior;
pub mod prior;

pub use error::{Error, Result};
