use nalgebra::Vector3;

use super::RefinementError;
use crate::reconstruction::Skeleton3D;
use crate::skeleton;

/// Reference lengths of anatomical bones, in scene units.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTable {
    edges: Vec<(usize, usize)>,
    mean_lengths: Vec<f64>,
}

impl Default for BoneTable {
    /// Bone lengths of the standing template, in meters.
    fn default() -> Self {
        let t = skeleton::template_pose();
        let edges = skeleton::bone_edges();
        let mean_lengths = edges.iter().map(|&(a, b)| (t[a] - t[b]).norm()).collect();
        Self { edges, mean_lengths }
    }
}

impl BoneTable {
    pub fn new(edges: Vec<(usize, usize)>, mean_lengths: Vec<f64>) -> Result<Self, RefinementError> {
        let bad = |m: String| Err(RefinementError::InvalidBoneTable(m));
        if edges.is_empty() || edges.len() != mean_lengths.len() {
            return bad(format!("{} edges but {} lengths", edges.len(), mean_lengths.len()));
        }
        if let Some(l) = mean_lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return bad(format!("length {l} is not positive"));
        }
        if let Some(e) = edges.iter().find(|(a, b)| a == b) {
            return bad(format!("edge {e:?} joins a joint to itself"));
        }
        Ok(Self { edges, mean_lengths })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn mean_lengths(&self) -> &[f64] {
        &self.mean_lengths
    }

    pub fn validate_for(&self, num_joints: usize) -> Result<(), RefinementError> {
        match self.edges.iter().find(|(a, b)| *a >= num_joints || *b >= num_joints) {
            Some(e) => Err(RefinementError::InvalidBoneTable(format!(
                "edge {e:?} is out of range for {num_joints} joints"
            ))),
            None => Ok(()),
        }
    }
}

/// Scale `s` minimizing `Σ_i (l̄_i − s·l_i)²` over bones with both endpoints
/// known: `s* = Σ l̄_i l_i / Σ l_i²`.
pub fn calibrate_scale_positions(joints: &[Option<Vector3<f64>>], bones: &BoneTable) -> Result<f64, RefinementError> {
    let (mut num, mut den) = (0.0, 0.0);
    for (&(a, b), &reference) in bones.edges.iter().zip(&bones.mean_lengths) {
        if let (Some(Some(pa)), Some(Some(pb))) = (joints.get(a), joints.get(b)) {
            let l = (pa - pb).norm();
            num += reference * l;
            den += l * l;
        }
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(RefinementError::NoBones)
    }
}

pub fn calibrate_scale(skeleton: &Skeleton3D, bones: &BoneTable) -> Result<f64, RefinementError> {
    calibrate_scale_positions(&skeleton.positions(), bones)
}
