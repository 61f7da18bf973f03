//! Kernel density estimation from partially rank-ordered set (PROS) samples.
//!
//! The crate covers the full workflow: population models and the exact
//! densities of PROS subset measurements ([`distributions`]), sample
//! generation ([`sampling`]), kernel estimates with variance and confidence
//! bands ([`kde`]), reflection-averaged estimates for symmetric populations
//! ([`symmetric`]), EM estimation of misplacement probabilities ([`em`]),
//! distribution-free efficiency curves ([`analysis`]) and Monte Carlo studies
//! ([`simulation`]).

// `!(x > 0.0)` also rejects NaN, which is the point of those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod distributions;
pub mod em;
pub mod error;
pub mod kde;
pub mod quadrature;
pub mod sampling;
pub mod simulation;
pub mod stats;
pub mod symmetric;

pub use distributions::{Design, Distribution, MisplacementMatrix, RssErrorMatrix};
pub use em::{estimate_alpha, EmConfig, EmInit, EmTrace};
pub use error::{Error, ErrorCategory, Result};
pub use kde::{BandwidthSpec, DensityEstimate, GridSpec, Kernel};
pub use sampling::{DesignTag, FinitePopulation, Observation, ProsSample, Unit};
pub use symmetric::LocationEstimator;
