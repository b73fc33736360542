//! Multi-view matching and 3D reconstruction of people in frozen scenes.
//!
//! Frames of a single moving camera are treated as calibrated views of a
//! static scene. [`pipeline::run_pipeline`] groups 2D pose detections by
//! person across frames, triangulates each group joint by joint, refines the
//! skeletons under a Gaussian-mixture pose prior and evaluates the result.
//! [`synth`] generates scenes with known ground truth.

// Negated comparisons reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod reconstruction;
pub mod refinement;
pub mod scene;
pub mod skeleton;
pub mod synth;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/affinity.md")]
    mod affinity {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
}
