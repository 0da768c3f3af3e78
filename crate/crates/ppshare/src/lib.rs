//! Prototype-sharing classifier on precomputed patch-feature datasets.
//!
//! A model scores an image by the best match between each prototype and
//! the image's patch features, then classifies with a bias-free linear
//! head. The crate covers the full lifecycle: synthesizing planted-cluster
//! datasets, training, merge-pruning the prototype pool under three pair
//! ranking strategies, certifying pruned predictions with a logit bound,
//! and analyzing which classes share prototypes.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod model;
pub mod prune;
pub mod similarity;
pub mod theorem;
pub mod train;

pub use error::{Error, Result};
