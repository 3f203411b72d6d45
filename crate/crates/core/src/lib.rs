//! Translational knowledge-base embeddings with description-driven concept
//! encoders.
//!
//! The crate has two halves. A TransE-style [`transe::EmbeddingStore`] keeps
//! unit-norm entity vectors and relation translations, scored by
//! `d(head + relation, tail)`. A concept encoder ([`encoders`]) maps a
//! free-text description to a unit-norm vector in the same space, so entities
//! that never appeared in training can still be placed and queried. The
//! [`trainer`] fits either the plain table model or the encoder jointly with
//! the relation table, and [`evaluate`] implements the link-prediction
//! protocol (mean rank and hits@10).
//!
//! The guide under `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

// NaN must fail these checks, which `!(x > y)` does and `x <= y` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluate;
pub mod featurize;
pub mod kernels;
pub mod rng;
pub mod synthetic;
pub mod trainer;
pub mod transe;

pub use error::{Error, Result};

/// Scalar type used throughout. 64-bit unless built with the `f32` feature.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Name of the active scalar type, recorded in checkpoints.
pub const PRECISION: &str = if cfg!(feature = "f32") { "f32" } else { "f64" };

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/datasets.md")]
    struct Datasets;
    #[doc = include_str!("../../../book/src/memory.md")]
    struct Memory;
    #[doc = include_str!("../../../book/src/featurization.md")]
    struct Featurization;
    #[doc = include_str!("../../../book/src/encoders.md")]
    struct Encoders;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
