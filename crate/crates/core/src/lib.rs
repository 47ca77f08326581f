//! Simulation and analysis of linear dynamic factor models.
//!
//! A panel of observed items is driven by a small set of latent factors that
//! evolve over discrete waves under a linear transition with decaying process
//! noise. This crate simulates such panels, computes their exact population
//! covariances, classifies whether the latent process settles, and measures
//! how many factors standard covariance-based estimators can recover at each
//! wave — in particular how causally coupled factors merge into fewer
//! apparent dimensions as the process equilibrates.
//!
//! Module map:
//! - [`linalg`]: dense matrices and the numeric kernels (eigenvalues,
//!   singular values, rank, inversion).
//! - [`model`]: model definition, validation, covariance recursions, and
//!   panel simulation.
//! - [`equilibrium`]: convergence classification of the transition matrix,
//!   its limit and asymptotic rank, and coupling-based block structure.
//! - [`extraction`]: sample covariances and factor-count estimators.
//! - [`experiment`]: end-to-end scenario runner and report writing.

pub mod equilibrium;
pub mod error;
pub mod experiment;
pub mod extraction;
pub mod linalg;
pub mod model;
mod rng;

pub use error::{Error, Result};
