//! Initial 3D skeletons from matched detection groups.
//!
//! Every joint is triangulated on its own with RANSAC. Joints seen in fewer
//! than two frames, with too little parallax, or without a consensus set are
//! left out and the reason is kept.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ransac_triangulate, GeometryError, Point3D, RansacParams};
use crate::matching::PoseGroup;
use crate::scene::{derive_seed, ObservedScene, SceneError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ReconstructionError {
    #[error("group {person_id} has {members} member(s); at least 2 are needed")]
    NonReconstructable { person_id: usize, members: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("joint {joint}: {source}")]
    Geometry { joint: usize, source: GeometryError },
}

/// Why a joint has no 3D position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointFailure {
    InsufficientViews,
    LowParallax,
    NoConsensus,
}

impl JointFailure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::InsufficientViews => "insufficient-views",
            Self::LowParallax => "low-parallax",
            Self::NoConsensus => "no-consensus",
        }
    }
}

/// A person's reconstructed joints. `joints[c]` is `Some` exactly when the
/// joint is valid; otherwise `failures[c]` says why.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton3D {
    pub person_id: usize,
    pub joints: Vec<Option<Point3D>>,
    pub failures: Vec<Option<JointFailure>>,
    pub mean_reprojection_px: f64,
    pub total_2d_joints_used: usize,
}

impl Skeleton3D {
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_valid(&self) -> Vec<bool> {
        self.joints.iter().map(Option::is_some).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.joints.iter().flatten().count()
    }

    pub fn positions(&self) -> Vec<Option<nalgebra::Vector3<f64>>> {
        self.joints.iter().map(|j| j.as_ref().map(|p| p.position)).collect()
    }

    /// Recomputes the summary statistics from the per-joint points.
    pub fn refresh_summary(&mut self) {
        let (sum, count) = self
            .joints
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), p| (s + p.residual * p.inlier_views.len() as f64, n + p.inlier_views.len()));
        self.total_2d_joints_used = count;
        self.mean_reprojection_px = if count > 0 { sum / count as f64 } else { 0.0 };
    }
}

fn classify(err: GeometryError) -> Option<JointFailure> {
    match err {
        GeometryError::InsufficientViews { .. } => Some(JointFailure::InsufficientViews),
        GeometryError::LowParallax { .. } => Some(JointFailure::LowParallax),
        GeometryError::NoConsensus { .. } | GeometryError::PointAtInfinity | GeometryError::BehindCamera { .. } => {
            Some(JointFailure::NoConsensus)
        }
        _ => None,
    }
}

/// Triangulates every joint of `group` independently. The RANSAC seed for
/// joint `c` is derived from `(params.seed, person_id, c)`.
pub fn reconstruct_group(
    group: &PoseGroup,
    scene: &ObservedScene<'_>,
    params: &RansacParams,
) -> Result<Skeleton3D, ReconstructionError> {
    if !group.is_reconstructable() {
        return Err(ReconstructionError::NonReconstructable {
            person_id: group.person_id,
            members: group.len(),
        });
    }
    let results: Vec<Result<Point3D, JointFailure>> = (0..scene.num_joints())
        .into_par_iter()
        .map(|c| {
            let obs = scene.joint_observations(&group.members, c)?;
            let joint_params = RansacParams {
                seed: derive_seed(params.seed, &[group.person_id as u64, c as u64]),
                ..*params
            };
            match ransac_triangulate(&obs, &joint_params) {
                Ok(p) => Ok(Ok(p)),
                Err(e) => match classify(e.clone()) {
                    Some(f) => Ok(Err(f)),
                    None => Err(ReconstructionError::Geometry { joint: c, source: e }),
                },
            }
        })
        .collect::<Result<_, ReconstructionError>>()?;

    let mut skeleton = Skeleton3D {
        person_id: group.person_id,
        failures: results.iter().map(|r| r.as_ref().err().copied()).collect(),
        joints: results.into_iter().map(Result::ok).collect(),
        mean_reprojection_px: 0.0,
        total_2d_joints_used: 0,
    };
    skeleton.refresh_summary();
    Ok(skeleton)
}

