use nalgebra::{Vector2, Vector3};

use super::RefinementError;
use crate::geometry::{project, CameraView};
use crate::matching::PoseGroup;
use crate::scene::ObservedScene;

/// `½r²` up to `delta`, linear beyond.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// `ρ'(r) / r`, the iteratively-reweighted least-squares weight.
pub(crate) fn huber_weight(r: f64, delta: f64) -> f64 {
    if r <= delta {
        1.0
    } else {
        delta / r
    }
}

/// One visible 2D sighting of a joint.
#[derive(Debug, Clone)]
pub(crate) struct JointObservation<'a> {
    pub joint: usize,
    pub camera: &'a CameraView,
    pub pixel: Vector2<f64>,
    pub weight: f64,
}

/// Visible observations of every joint flagged in `include`.
pub(crate) fn gather<'a>(
    include: &[bool],
    group: &PoseGroup,
    scene: &ObservedScene<'a>,
) -> Result<Vec<JointObservation<'a>>, RefinementError> {
    let mut out = Vec::new();
    for key in &group.members {
        let pose = scene.pose(key)?;
        let camera = scene.camera(key.frame_id)?;
        for (joint, _) in include.iter().enumerate().filter(|(_, on)| **on) {
            if joint < pose.num_joints() && pose.is_visible(joint) {
                out.push(JointObservation {
                    joint,
                    camera,
                    pixel: pose.pixel(joint, camera),
                    weight: pose.joint_confidence()[joint],
                });
            }
        }
    }
    Ok(out)
}

/// `Σ_u Σ_c w_u^c · huber(‖π_u(X^c) − x_u^c‖, δ)` over group members and
/// visible joints with a known position. A point behind any observing camera
/// gives `+∞`.
pub fn reprojection_energy(
    joints: &[Option<Vector3<f64>>],
    group: &PoseGroup,
    scene: &ObservedScene<'_>,
    robust_delta_px: f64,
) -> Result<f64, RefinementError> {
    let include: Vec<bool> = joints.iter().map(Option::is_some).collect();
    let obs = gather(&include, group, scene)?;
    Ok(obs
        .iter()
        .map(|o| {
            let x = joints[o.joint].expect("gathered joints are known");
            match project(&x, o.camera) {
                Ok(p) => o.weight * huber((p - o.pixel).norm(), robust_delta_px),
                Err(_) => f64::INFINITY,
            }
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::{DetectionKey, Pose2D};

    fn setup(offset_px: f64, confidence: f64) -> (Vec<Pose2D>, Vec<CameraView>, Vector3<f64>) {
        let x = Vector3::new(0.1, 1.0, 0.0);
        let cams: Vec<CameraView> = (0..2)
            .map(|i| {
                CameraView::look_at(
                    i,
                    [1000.0, 1000.0],
                    [640.0, 360.0],
                    [1280, 720],
                    Vector3::new(i as f64 - 0.5, 1.0, -5.0),
                    Vector3::new(0.0, 1.0, 0.0),
                    Vector3::y(),
                )
                .unwrap()
            })
            .collect();
        let poses = cams
            .iter()
            .map(|c| {
                let mut px = project(&x, c).unwrap();
                if c.frame_id() == 0 {
                    px.x += offset_px;
                }
                Pose2D::new(c.frame_id(), 0, vec![c.to_normalized(&px)], vec![confidence], vec![true]).unwrap()
            })
            .collect();
        (poses, cams, x)
    }

    fn group() -> PoseGroup {
        PoseGroup {
            person_id: 0,
            members: vec![DetectionKey::new(0, 0), DetectionKey::new(1, 0)],
            member_scores: vec![0.0, 0.0],
        }
    }

    #[test]
    fn exact_fit_has_zero_energy() {
        let (poses, cams, x) = setup(0.0, 1.0);
        let scene = ObservedScene::new(&poses, &cams).unwrap();
        assert!(reprojection_energy(&[Some(x)], &group(), &scene, 10.0).unwrap() < 1e-18);
    }

    #[test]
    fn one_pixel_offset_costs_one_half() {
        let (poses, cams, x) = setup(1.0, 1.0);
        let scene = ObservedScene::new(&poses, &cams).unwrap();
        let e = reprojection_energy(&[Some(x)], &group(), &scene, 1.0).unwrap();
        assert!((e - 0.5).abs() < 1e-9);
    }

    #[test]
    fn lower_confidence_never_raises_energy() {
        let mut last = f64::INFINITY;
        for conf in [1.0, 0.8, 0.5, 0.2, 0.0] {
            let (poses, cams, x) = setup(25.0, conf);
            let scene = ObservedScene::new(&poses, &cams).unwrap();
            let e = reprojection_energy(&[Some(x)], &group(), &scene, 10.0).unwrap();
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn huber_branches_meet() {
        assert_eq!(huber(2.0, 10.0), 2.0);
        assert_eq!(huber(20.0, 10.0), 150.0);
        assert!((huber(10.0 + 1e-12, 10.0) - huber(10.0, 10.0)).abs() < 1e-10);
    }
}
