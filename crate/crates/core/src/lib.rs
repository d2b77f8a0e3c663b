//! Object-level relative pose toolkit: tensor and manifest I/O, prompt
//! retrieval over proposal embeddings, calibrated two-view and PnP geometry,
//! multi-view registration with bundle adjustment, and evaluation helpers.
//!
//! The [`cli`] module backs the `posekit` binary.

// Validation uses `!(x > 0.0)` so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod evalharness;
pub mod geometry;
pub mod multiview;
pub mod retrieval;
pub mod tensorio;
