//! Pinhole cameras, epipolar lines, and robust point triangulation.
//!
//! All image-space quantities here are in pixels. Poses on disk use
//! normalized `[0,1]²` coordinates; [`CameraView::to_pixels`] converts them.

mod camera;
mod epipolar;
mod triangulation;

use thiserror::Error;

pub use camera::{project, project_with_jacobian, CameraView, MIN_DEPTH};
pub use epipolar::{epipolar_line, fundamental_matrix, Line2D, MIN_BASELINE};
pub use triangulation::{
    max_parallax, ransac_triangulate, triangulate_dlt, Observation, Point3D, RansacParams,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("point is behind camera of frame {frame_id} (depth {depth})")]
    BehindCamera { frame_id: u32, depth: f64 },
    #[error("cameras of frames {frame_u} and {frame_v} share an optical center")]
    DegenerateBaseline { frame_u: u32, frame_v: u32 },
    #[error("epipolar line is degenerate (a = b = 0)")]
    DegenerateLine,
    #[error("invalid camera for frame {frame_id}: {reason}")]
    InvalidCamera { frame_id: u32, reason: String },
    #[error("observation weight {weight} in frame {frame_id} is outside [0, 1]")]
    InvalidWeight { frame_id: u32, weight: f64 },
    #[error("triangulation needs at least 2 distinct views, got {got}")]
    InsufficientViews { got: usize },
    #[error("parallax {parallax:.3e} rad is below the minimum {min:.3e} rad")]
    LowParallax { parallax: f64, min: f64 },
    #[error("no consensus set: best hypothesis had {best} inliers, {required} required")]
    NoConsensus { best: usize, required: usize },
    #[error("triangulated point lies at infinity")]
    PointAtInfinity,
    #[error("linear solver failed")]
    SolverFailed,
}
