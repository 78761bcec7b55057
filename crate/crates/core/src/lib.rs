//! Semi-supervised domain generalization lab.
//!
//! FixMatch-style pseudo-label training with a repel-only contrastive
//! regularizer, synthetic multi-domain data, and instrumentation of
//! pseudo-label quality/quantity and representation domain invariance.

pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pseudo_label;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
