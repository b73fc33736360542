#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use mvm::affinity::{DetectionKey, Pose2D};
use mvm::geometry::{project, CameraView};
use mvm::matching::PoseGroup;
use mvm::skeleton::template_pose;

pub const IMAGE: [u32; 2] = [1000, 800];
pub const FOCAL: f64 = 1000.0;

/// `n` cameras on a horizontal arc of `arc_deg` around `target`, frame ids
/// starting at `first_frame`.
pub fn arc_cameras(n: usize, arc_deg: f64, radius: f64, target: Vector3<f64>, first_frame: u32) -> Vec<CameraView> {
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let theta = (-arc_deg / 2.0 + arc_deg * t).to_radians();
            let center = target + Vector3::new(radius * theta.sin(), 0.0, -radius * theta.cos());
            CameraView::look_at(
                first_frame + i as u32,
                [FOCAL, FOCAL],
                [IMAGE[0] as f64 / 2.0, IMAGE[1] as f64 / 2.0],
                IMAGE,
                center,
                target,
                Vector3::y(),
            )
            .unwrap()
        })
        .collect()
}

/// Template skeleton rotated by `yaw` about the vertical and moved to `at`.
pub fn person(at: Vector3<f64>, yaw: f64) -> Vec<Vector3<f64>> {
    let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    template_pose().iter().map(|p| r * p + at).collect()
}

/// Detection of `joints` in `cam` with optional per-joint pixel offsets.
pub fn detect(cam: &CameraView, pose_id: u32, joints: &[Vector3<f64>], offsets: Option<&[Vector2<f64>]>) -> Pose2D {
    let pixels: Vec<[f64; 2]> = joints
        .iter()
        .enumerate()
        .map(|(c, x)| {
            let mut p = project(x, cam).unwrap();
            if let Some(o) = offsets {
                p += o[c];
            }
            cam.to_normalized(&p)
        })
        .collect();
    let n = joints.len();
    Pose2D::new(cam.frame_id(), pose_id, pixels, vec![1.0; n], vec![true; n]).unwrap()
}

pub fn gaussian_offsets(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<Vector2<f64>> {
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| Vector2::new(normal.sample(rng), normal.sample(rng))).collect()
}

pub fn random_direction(rng: &mut ChaCha8Rng) -> Vector2<f64> {
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Vector2::new(a.cos(), a.sin())
}

pub fn group_of(person_id: usize, members: Vec<DetectionKey>) -> PoseGroup {
    PoseGroup {
        person_id,
        member_scores: vec![0.0; members.len()],
        members,
    }
}

/// Ground-truth groups from a label map, ordered by label.
pub fn groups_from_labels(labels: &BTreeMap<DetectionKey, usize>) -> Vec<PoseGroup> {
    let mut members: BTreeMap<usize, Vec<DetectionKey>> = BTreeMap::new();
    for (k, l) in labels {
        members.entry(*l).or_default().push(*k);
    }
    members.into_iter().map(|(l, m)| group_of(l, m)).collect()
}
