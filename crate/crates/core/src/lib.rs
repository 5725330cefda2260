//! Bayesian spatio-temporal abundance model for a hidden population.
//!
//! Latent county-by-year counts are tied to several partially detecting
//! surveillance outcomes (binomial thinning, with interval-censored
//! treatment counts) and to statewide survey estimates of prevalence. Risk
//! and detection rates carry ICAR x AR(1) random effects. Posterior
//! inference is by adaptive Metropolis-within-Gibbs with a factor slice
//! sampler for each region's latent count trajectory.

// `!(x > 0.0)` is used on purpose so NaN fails the check; index loops
// walk several parallel arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod execution;
pub mod graph;
pub mod likelihood;
pub mod model;
pub mod sampler;
pub mod simulation;
pub mod summary;

pub use error::{Error, Result};
