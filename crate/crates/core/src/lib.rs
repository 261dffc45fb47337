//! Focal loss versus shortcut learning on a synthetic NLI-shaped corpus.
//!
//! The crate generates a corpus with planted shortcut features, trains a
//! small tanh network under cross-entropy, focal, debiased-focal or
//! product-of-experts losses, and measures in-distribution, hard-subset and
//! challenge-split behaviour.

pub mod datagen;
pub mod error;
pub mod evaluator;
pub mod expcli;
pub mod losses;
pub mod netmodel;
pub mod optimizer;
pub mod plot;
mod rng;
pub mod trainer;

pub use error::{Error, Result};
