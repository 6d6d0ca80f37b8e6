//! Mesh-free stochastic branching particle solver for nonlinear,
//! non-conservative advection–diffusion–reaction equations on periodic
//! domains.
//!
//! Densities are carried by unweighted particles that move by an
//! Euler–Maruyama step and reproduce or die according to a local growth
//! rate. Fields needed by the dynamics are reconstructed as truncated
//! Fourier series of the particle measure. A finite-difference solver
//! provides reference solutions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branching;
pub mod config;
pub mod error;
pub mod fd;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod particles;
pub mod record;
pub mod rng;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use fd::GridField;
pub use geometry::TorusDomain;
pub use model::{KsModel, Model, ScalarModel};
pub use particles::ParticleSet;
pub use record::RunRecord;
pub use solver::SolverConfig;
pub use spectral::SpectralField;
