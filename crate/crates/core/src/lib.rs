//! Desk-scale one-step person search.
//!
//! The crate trains a small conv backbone as a re-identification model on
//! identity crops, transfers it into a joint detection and identification
//! model, fine-tunes that model on synthetic scenes, and scores it with the
//! person-search protocol (recall-scaled mAP and top-1).
//!
//! Module map:
//!
//! - [`tensor`]: NCHW `f64` tensors, conv, FC, BN, pooling and a
//!   finite-difference gradient checker.
//! - [`data`], [`sampling`]: synthetic long-tailed scenes, crops,
//!   augmentation, P×K and image-level samplers.
//! - [`losses`]: identification, metric and detection losses.
//! - [`roi`]: boxes, anchors, NMS, RoI Align and multi-level fusion pooling.
//! - [`model`]: backbone, detector heads, the search and re-id models,
//!   weight transfer and checkpoints.
//! - [`training`]: schedules, optimizers, pretraining and fine-tuning loops.
//! - [`eval`]: detection matching, gallery construction and search metrics.
//! - [`experiment`]: configs, run directories, the stage pipeline and
//!   reports.
//!
//! The guide under `book/` walks through each part; its examples run as
//! doctests.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod rng;
pub mod roi;
pub mod sampling;
pub mod training;

// Guide chapters, compiled so their code blocks run under `cargo test`.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub mod sampling {}
    #[doc = include_str!("../../../book/src/losses.md")]
    pub mod losses {}
    #[doc = include_str!("../../../book/src/roi.md")]
    pub mod roi {}
    #[doc = include_str!("../../../book/src/transfer.md")]
    pub mod transfer {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
