//! Oriented bounding box sequences for deforming 3D shapes, and a composite
//! LSTM autoencoder that reconstructs and predicts them.
//!
//! The pipeline runs in stages:
//!
//! 1. [`geometry`] fits minimum-volume oriented boxes to per-component point
//!    clouds, warm-starting each time step from the previous rotation.
//! 2. [`dataset`] turns box sequences into normalized 24-feature corner
//!    matrices, and provides rigid-motion removal and an orthogonality metric.
//! 3. [`autoenc`] trains the encoder / reconstruction / prediction network.
//! 4. [`baselines`] compares it against nearest-neighbor predictors.
//! 5. [`embed`] embeds encoder states with t-SNE and clusters deformation modes.
//!
//! [`synthgen`] produces a crash-like synthetic benchmark and [`io`] holds the
//! on-disk formats.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoenc;
pub mod baselines;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod geometry;
pub mod io;
pub mod par;
pub mod seed;
pub mod synthgen;

pub use error::{Error, Result};
