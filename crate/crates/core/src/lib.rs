//! Pseudo pixel-level labels for evolving-content image datasets.
//!
//! Images of the same subject are grouped into [`sequencer`] sequences, one
//! image per sequence is annotated by hand, per-class attention maps are
//! turned into CAM labels by [`campseudo`], and [`merger`] fills the
//! background of the shared annotation with each image's CAM classes.
//! [`metrics`] scores the result and [`synthgen`] produces synthetic data
//! with exact ground truth.

pub mod campseudo;
pub mod error;
pub mod fsutil;
pub mod merger;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sequencer;
pub mod synthgen;
pub mod workspace;

pub use error::{Error, ErrorKind, Result};
