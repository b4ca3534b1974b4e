//! Detection of the times at which a particle trajectory switches between
//! Brownian motion, subdiffusion and superdiffusion.
//!
//! The detector slides a backward and a forward window of `k` steps along the
//! trajectory, computes a scaled maximum-excursion statistic on each side,
//! classifies both sides with a pair of cut-off values and gathers the indices
//! where the two classifications disagree into clusters. Each cluster yields
//! one change point. The cut-off values are calibrated by Monte Carlo
//! simulation under a fully Brownian null so that the probability of reporting
//! a spurious change point is controlled at a chosen level.
//!
//! Module map:
//! - [`trajectory`]: uniform time grids, trajectories, CSV I/O.
//! - [`simulators`]: Brownian, drifted Brownian, Ornstein–Uhlenbeck and
//!   fractional Brownian generators, plus multi-regime scenarios.
//! - [`statistics`]: the excursion statistic, sliding backward/forward
//!   statistics, the three-level classifier and an MSD diagnostic.
//! - [`calibration`]: Monte Carlo cut-off estimation and the threshold cache.
//! - [`detection`]: clustering, change-point estimation and segment labelling.
//! - [`bench`]: simulation studies and report export.

pub mod bench;
pub mod calibration;
pub mod detection;
mod error;
pub mod rng;
pub mod simulators;
pub mod statistics;
pub mod trajectory;

pub use error::{Error, Result};

/// Library version, reported by the CLI and stored in threshold caches.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed used whenever the caller does not supply one.
pub const DEFAULT_SEED: u64 = 0x5EED_2017;
