//! Numerical laboratory for random matching on flat two-dimensional domains.
//!
//! The crate builds the regularised empirical potential `f` solving
//! `-Δf = u - 1`, where `u` is the heat-smoothed empirical density, and uses
//! it to study the expected quadratic matching cost of uniform random points
//! on the flat torus, the unit square (Neumann) and the unit interval.
//!
//! Layout:
//! - [`geometry`]: domains, folding, distances, exponential map, sampling.
//! - [`heatkernel`]: spectral and method-of-images heat kernels, the
//!   time-averaged kernel `q_t`, trace and kernel-bound diagnostics.
//! - [`potential`]: the random potential, its derivatives and energy.
//! - [`transport`]: exact assignment, flow couplings and stability bounds.
//! - [`experiments`]: Monte Carlo drivers, CSV/JSON output and fits.
//! - [`cli`]: the `matchlab` command-line front end.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod heatkernel;
pub mod potential;
pub mod quad;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{DomainKind, Point};
pub use heatkernel::FrequencyLattice;
pub use potential::{PotentialField, SpectralField};
pub use transport::Matching;
