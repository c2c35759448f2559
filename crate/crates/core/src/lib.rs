#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Numerical laboratory for a loss-based two-photon entanglement filter.
//!
//! The pipeline runs a pulse-overlap SPDC source through a lossy
//! Hong-Ou-Mandel channel with coincidence post-selection, simulates
//! 16-setting polarization tomography with Poisson counts, reconstructs the
//! state by maximum likelihood and evaluates entanglement metrics.

pub mod channel;
pub mod error;
pub mod metrics;
pub mod optimize;
pub mod quantum;
pub mod scenarios;
pub mod source;
pub mod tomography;

pub use error::{Error, Result};
