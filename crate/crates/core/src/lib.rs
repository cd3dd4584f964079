//! Evasion attacks against capsule-presence encoders.
//!
//! The crate bundles a differentiable surrogate capsule encoder, the
//! unsupervised k-means classifier that reads its presences, three
//! perturbation algorithms that suppress the capsules activated by the true
//! class, and an experiment harness that reports attack success rate and
//! perturbation L2 statistics.

pub mod attack;
pub mod classifier;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod image;
pub mod tensor;

mod binio;

pub use error::{Error, Result};
pub use image::Image;
