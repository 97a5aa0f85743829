//! A desk-scale laboratory for cross-domain attention imbalance.
//!
//! Two synthetic "domains" (disjoint token alphabets) stand in for
//! modalities or languages. The crate generates conflicting-evidence
//! question sets, trains small decoder-only transformers on single-domain
//! instruction data mixed either per dataset or per instance, decomposes
//! each attention head's output into per-span contributions, biases
//! attention toward a chosen span at inference time, and measures how often
//! the model reports the conflict.
//!
//! Module map:
//!
//! - [`numerics`]: tensors, reverse-mode autodiff, Adam.
//! - [`model`]: the transformer, its hook points, greedy decoding.
//! - [`probe`]: span maps and per-span contribution norms.
//! - [`steer`]: the attention-bias intervention.
//! - [`worldgen`]: fact worlds, evaluation sets, instruction corpora, mixers.
//! - [`train`]: training loop and checkpoints.
//! - [`eval`]: conflict judge, detection metrics and experiment drivers.
//! - [`pipeline`]: experiment configuration and per-replicate seeding.

pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod probe;
pub mod steer;
pub mod train;
pub mod worldgen;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/worlds.md")]
    mod worlds {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/probing.md")]
    mod probing {}
    #[doc = include_str!("../../../book/src/steering.md")]
    mod steering {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
