//! Deterministic synthetic "frozen crowd" scenes.
//!
//! A handful of people hold still while a single camera sweeps a circular
//! arc around them, looking inward. Because nobody moves, every frame is a
//! calibrated view of the same 3D configuration and every stage of the
//! pipeline has exact ground truth to compare against.
//!
//! Randomness is drawn from ChaCha streams derived from the scene seed, one
//! stream per (frame, person), so dropping one detection never perturbs the
//! noise of another.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{AppearanceDescriptor, DetectionKey, Pose2D};
use crate::geometry::{project, CameraView, GeometryError};
use crate::reconstruction::Skeleton3D;
use crate::scene::derive_seed;
use crate::skeleton;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place person {person} without overlap after {attempts} attempts")]
    Placement { person: usize, attempts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkeletonTemplate {
    /// The 17-joint standing pose of [`skeleton::template_pose`].
    #[default]
    Coco17Standing,
}

impl SkeletonTemplate {
    pub fn joints(&self) -> Vec<Vector3<f64>> {
        match self {
            Self::Coco17Standing => skeleton::template_pose(),
        }
    }
}

/// Axis-aligned ground rectangle (x and z, in scene units) where people
/// stand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementRegion {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Default for PlacementRegion {
    fn default() -> Self {
        Self {
            min: [-2.0, -2.0],
            max: [2.0, 2.0],
        }
    }
}

impl PlacementRegion {
    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trajectory {
    pub arc_degrees: f64,
    pub radius: f64,
    /// Camera height; the optical axes stay horizontal at this height.
    pub height: f64,
    pub num_frames: usize,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            arc_degrees: 40.0,
            radius: 7.0,
            height: 1.2,
            num_frames: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of isotropic Gaussian pixel noise.
    pub pixel_sigma: f64,
    /// Probability that a joint is displaced by `outlier_offset_px`.
    pub outlier_rate: f64,
    pub outlier_offset_px: f64,
    /// Probability that a joint is not detected.
    pub miss_rate: f64,
    /// Probability that a whole detection is missing from a frame.
    pub dropout_rate: f64,
    /// Clean joints draw confidence uniformly from `[1 − spread, 1]`.
    pub confidence_spread: f64,
    /// Length of appearance descriptors; 0 disables them.
    pub descriptor_dim: usize,
    /// Per-component Gaussian noise added to the true descriptor before
    /// re-normalization.
    pub descriptor_noise: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pixel_sigma: 2.0,
            outlier_rate: 0.05,
            outlier_offset_px: 40.0,
            miss_rate: 0.2,
            dropout_rate: 0.0,
            confidence_spread: 0.3,
            descriptor_dim: 16,
            descriptor_noise: 0.1,
        }
    }
}

impl NoiseModel {
    /// No noise, no misses, full confidence.
    pub fn clean() -> Self {
        Self {
            pixel_sigma: 0.0,
            outlier_rate: 0.0,
            outlier_offset_px: 0.0,
            miss_rate: 0.0,
            dropout_rate: 0.0,
            confidence_spread: 0.0,
            descriptor_dim: 16,
            descriptor_noise: 0.0,
        }
    }
}

/// Everything needed to generate one scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub num_people: usize,
    pub template: SkeletonTemplate,
    /// Per-coordinate Gaussian jitter of each joint, in scene units.
    pub pose_jitter: f64,
    /// Face each person in a uniformly random direction.
    pub random_yaw: bool,
    pub placement: PlacementRegion,
    pub trajectory: Trajectory,
    pub image_size: [u32; 2],
    pub focal_px: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_people: 5,
            template: SkeletonTemplate::Coco17Standing,
            pose_jitter: 0.03,
            random_yaw: true,
            placement: PlacementRegion::default(),
            trajectory: Trajectory::default(),
            image_size: [1280, 720],
            focal_px: 1000.0,
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let n = &self.noise;
        for (name, rate) in [
            ("outlier_rate", n.outlier_rate),
            ("miss_rate", n.miss_rate),
            ("dropout_rate", n.dropout_rate),
            ("confidence_spread", n.confidence_spread),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("{name} = {rate} is outside [0, 1]"));
            }
        }
        if !(n.pixel_sigma >= 0.0 && n.outlier_offset_px >= 0.0 && n.descriptor_noise >= 0.0) {
            return bad("noise magnitudes must be non-negative".into());
        }
        if self.trajectory.num_frames < 2 {
            return bad(format!("num_frames = {} must be at least 2", self.trajectory.num_frames));
        }
        let arc = self.trajectory.arc_degrees;
        if !(arc > 0.0 && arc <= 360.0) {
            return bad(format!("arc_degrees = {arc} is outside (0, 360]"));
        }
        if !(self.trajectory.radius > 0.0) || !(self.focal_px > 0.0) {
            return bad("radius and focal length must be positive".into());
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.pose_jitter >= 0.0) {
            return bad("pose_jitter must be non-negative".into());
        }
        let p = &self.placement;
        if !(p.min[0] <= p.max[0] && p.min[1] <= p.max[1]) {
            return bad("placement min must not exceed max".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPerson {
    pub person_id: usize,
    pub joints: Vec<Vector3<f64>>,
    /// Unit-length appearance vector; empty when descriptors are disabled.
    pub descriptor: Vec<f64>,
}

impl GroundTruthPerson {
    pub fn to_skeleton(&self) -> Skeleton3D {
        let mut s = Skeleton3D {
            person_id: self.person_id,
            joints: self
                .joints
                .iter()
                .map(|p| {
                    Some(crate::geometry::Point3D {
                        position: *p,
                        residual: 0.0,
                        inlier_views: Default::default(),
                        parallax: 0.0,
                    })
                })
                .collect(),
            failures: vec![None; self.joints.len()],
            mean_reprojection_px: 0.0,
            total_2d_joints_used: 0,
        };
        s.refresh_summary();
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub people: Vec<GroundTruthPerson>,
    pub cameras: Vec<CameraView>,
}

impl GroundTruthScene {
    /// Largest distance between any two ground-truth joints.
    pub fn diameter(&self) -> f64 {
        let all: Vec<&Vector3<f64>> = self.people.iter().flat_map(|p| &p.joints).collect();
        let mut best = 0.0_f64;
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                best = best.max((*a - *b).norm());
            }
        }
        best
    }
}

/// Detections rendered from a scene, with their hidden identities.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedObservations {
    pub poses: Vec<Pose2D>,
    pub descriptors: BTreeMap<DetectionKey, AppearanceDescriptor>,
    pub labels: BTreeMap<DetectionKey, usize>,
}

/// One posed, placed skeleton drawn from the template.
fn sample_person(
    template: &[Vector3<f64>],
    jitter: f64,
    random_yaw: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Vector3<f64>> {
    let yaw = if random_yaw {
        rng.random_range(0.0..std::f64::consts::TAU)
    } else {
        0.0
    };
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    template
        .iter()
        .map(|p| {
            let offset = if jitter > 0.0 {
                Vector3::from_fn(|_, _| jitter * rng.sample::<f64, _>(StandardNormal))
            } else {
                Vector3::zeros()
            };
            rot * (p + offset)
        })
        .collect()
}

fn ground_box(joints: &[Vector3<f64>]) -> [f64; 4] {
    joints.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |[x0, z0, x1, z1], p| [x0.min(p.x), z0.min(p.z), x1.max(p.x), z1.max(p.z)],
    )
}

fn boxes_overlap(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}

pub const PLACEMENT_ATTEMPTS: usize = 1000;

/// Places people and builds the camera arc.
pub fn sample_scene(spec: &SceneSpec) -> Result<GroundTruthScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));
    let template = spec.template.joints();
    let region = &spec.placement;

    let mut people = Vec::with_capacity(spec.num_people);
    let mut boxes: Vec<[f64; 4]> = Vec::new();
    for person in 0..spec.num_people {
        let body = sample_person(&template, spec.pose_jitter, spec.random_yaw, &mut rng);
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = if region.max[0] > region.min[0] {
                rng.random_range(region.min[0]..region.max[0])
            } else {
                region.min[0]
            };
            let z = if region.max[1] > region.min[1] {
                rng.random_range(region.min[1]..region.max[1])
            } else {
                region.min[1]
            };
            let joints: Vec<Vector3<f64>> = body.iter().map(|p| p + Vector3::new(x, 0.0, z)).collect();
            let bx = ground_box(&joints);
            if boxes.iter().all(|b| !boxes_overlap(b, &bx)) {
                boxes.push(bx);
                placed = Some(joints);
                break;
            }
        }
        let joints = placed.ok_or(SynthError::Placement {
            person,
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        let descriptor = if spec.noise.descriptor_dim > 0 {
            let v: Vec<f64> = (0..spec.noise.descriptor_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            AppearanceDescriptor::new(v)
                .map(|d| d.as_slice().to_vec())
                .unwrap_or_default()
        } else {
            Vec::new()
        };
        people.push(GroundTruthPerson {
            person_id: person,
            joints,
            descriptor,
        });
    }

    Ok(GroundTruthScene {
        people,
        cameras: camera_arc(spec)?,
    })
}

/// Inward-looking cameras evenly spaced on a horizontal arc centered on the
/// placement region; frame ids are `0..num_frames`.
pub fn camera_arc(spec: &SceneSpec) -> Result<Vec<CameraView>, SynthError> {
    let t = &spec.trajectory;
    let [cx, cz] = spec.placement.center();
    let target = Vector3::new(cx, t.height, cz);
    let principal = [spec.image_size[0] as f64 / 2.0, spec.image_size[1] as f64 / 2.0];
    (0..t.num_frames)
        .map(|i| {
            let theta = (-t.arc_degrees / 2.0 + t.arc_degrees * i as f64 / (t.num_frames - 1) as f64).to_radians();
            let center = Vector3::new(cx + t.radius * theta.sin(), t.height, cz - t.radius * theta.cos());
            Ok(CameraView::look_at(
                i as u32,
                [spec.focal_px, spec.focal_px],
                principal,
                spec.image_size,
                center,
                target,
                Vector3::y(),
            )?)
        })
        .collect()
}

/// Projects every person into every camera and applies the noise model.
pub fn render_observations(scene: &GroundTruthScene, spec: &SceneSpec) -> Result<RenderedObservations, SynthError> {
    spec.validate()?;
    let noise = &spec.noise;
    let pixel_noise = Normal::new(0.0, noise.pixel_sigma).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let desc_noise = Normal::new(0.0, noise.descriptor_noise).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let mut out = RenderedObservations {
        poses: Vec::new(),
        descriptors: BTreeMap::new(),
        labels: BTreeMap::new(),
    };
    for cam in &scene.cameras {
        let frame = cam.frame_id() as u64;
        let mut detections = Vec::new();
        for person in &scene.people {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1, frame, person.person_id as u64]));
            if rng.random::<f64>() < noise.dropout_rate {
                continue;
            }
            let mut joints = Vec::with_capacity(person.joints.len());
            let mut conf = Vec::with_capacity(person.joints.len());
            let mut vis = Vec::with_capacity(person.joints.len());
            for x in &person.joints {
                // Fixed number of draws per joint keeps streams aligned.
                let n = Vector2::new(pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng));
                let missed = rng.random::<f64>() < noise.miss_rate;
                let outlier = rng.random::<f64>() < noise.outlier_rate;
                let direction = rng.random_range(0.0..std::f64::consts::TAU);
                let u_clean: f64 = rng.random();
                let u_outlier: f64 = rng.random();

                let Ok(exact) = project(x, cam) else {
                    joints.push([0.0, 0.0]);
                    conf.push(0.0);
                    vis.push(false);
                    continue;
                };
                let mut pixel = exact + n;
                let mut c = 1.0 - noise.confidence_spread * u_clean;
                if outlier {
                    pixel += Vector2::new(direction.cos(), direction.sin()) * noise.outlier_offset_px;
                    c = 0.1 + 0.4 * u_outlier;
                }
                if missed || !cam.contains_pixel(&pixel) {
                    joints.push([0.0, 0.0]);
                    conf.push(0.0);
                    vis.push(false);
                } else {
                    let p = cam.to_normalized(&pixel);
                    joints.push([p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]);
                    conf.push(c);
                    vis.push(true);
                }
            }
            if !vis.iter().any(|v| *v) {
                continue;
            }
            let descriptor = if person.descriptor.is_empty() {
                None
            } else {
                let v: Vec<f64> = person.descriptor.iter().map(|d| d + desc_noise.sample(&mut rng)).collect();
                AppearanceDescriptor::new(v).ok()
            };
            detections.push((person.person_id, joints, conf, vis, descriptor));
        }

        // Pose ids are a random permutation so they carry no identity.
        let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2, frame]));
        let mut ids: Vec<u32> = (0..detections.len() as u32).collect();
        for i in (1..ids.len()).rev() {
            let j = order_rng.random_range(0..=i);
            ids.swap(i, j);
        }
        let mut frame_poses: Vec<(u32, usize, Pose2D, Option<AppearanceDescriptor>)> = Vec::new();
        for ((person, joints, conf, vis, desc), pose_id) in detections.into_iter().zip(ids) {
            let pose = Pose2D::new(cam.frame_id(), pose_id, joints, conf, vis)
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
            frame_poses.push((pose_id, person, pose, desc));
        }
        frame_poses.sort_by_key(|(id, ..)| *id);
        for (_, person, pose, desc) in frame_poses {
            out.labels.insert(pose.key(), person);
            if let Some(d) = desc {
                out.descriptors.insert(pose.key(), d);
            }
            out.poses.push(pose);
        }
    }
    Ok(out)
}

/// Jitter of prior-fitting corpora: twice the scene default, so the prior
/// covers poses the scenes actually produce.
pub const DEFAULT_CORPUS_JITTER: f64 = 0.06;

/// Skeletons drawn from the scene sampler, for fitting a pose prior. Each is
/// root-relative in world units; callers normalize as needed.
pub fn sample_pose_corpus(count: usize, jitter: f64, seed: u64) -> Vec<Vec<Vector3<f64>>> {
    let template = skeleton::template_pose();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    (0..count)
        .map(|_| sample_person(&template, jitter, true, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec { seed: 11, ..SceneSpec::default() };
        let a = sample_scene(&spec).unwrap();
        let b = sample_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(render_observations(&a, &spec).unwrap(), render_observations(&b, &spec).unwrap());
    }

    #[test]
    fn zero_jitter_single_person_matches_template() {
        let spec = SceneSpec {
            num_people: 1,
            pose_jitter: 0.0,
            random_yaw: false,
            placement: PlacementRegion { min: [0.0, 0.0], max: [0.0, 0.0] },
            ..SceneSpec::default()
        };
        let scene = sample_scene(&spec).unwrap();
        assert_eq!(scene.people[0].joints, skeleton::template_pose());
    }

    #[test]
    fn consecutive_axes_differ_by_constant_step() {
        let spec = SceneSpec {
            trajectory: Trajectory { arc_degrees: 30.0, num_frames: 60, ..Trajectory::default() },
            ..SceneSpec::default()
        };
        let cams = camera_arc(&spec).unwrap();
        let step = (30.0f64 / 59.0).to_radians();
        for w in cams.windows(2) {
            let (a, b) = (w[0].optical_axis(), w[1].optical_axis());
            let angle = a.cross(&b).norm().atan2(a.dot(&b));
            assert!((angle - step).abs() < 1e-9);
        }
    }

    #[test]
    fn clean_render_is_exact() {
        let spec = SceneSpec { noise: NoiseModel::clean(), seed: 3, ..SceneSpec::default() };
        let scene = sample_scene(&spec).unwrap();
        let obs = render_observations(&scene, &spec).unwrap();
        assert!(!obs.poses.is_empty());
        for pose in &obs.poses {
            let person = &scene.people[obs.labels[&pose.key()]];
            let cam = &scene.cameras[pose.frame_id() as usize];
            for c in 0..pose.num_joints() {
                if pose.is_visible(c) {
                    let exact = project(&person.joints[c], cam).unwrap();
                    assert!((pose.pixel(c, cam) - exact).norm() < 1e-9);
                    assert_eq!(pose.joint_confidence()[c], 1.0);
                }
            }
        }
    }

    #[test]
    fn total_miss_emits_nothing() {
        let spec = SceneSpec {
            noise: NoiseModel { miss_rate: 1.0, ..NoiseModel::default() },
            ..SceneSpec::default()
        };
        let scene = sample_scene(&spec).unwrap();
        let obs = render_observations(&scene, &spec).unwrap();
        assert!(obs.poses.is_empty() && obs.labels.is_empty());
    }

    #[test]
    fn pixel_noise_has_requested_spread() {
        let spec = SceneSpec {
            noise: NoiseModel { pixel_sigma: 2.0, ..NoiseModel::clean() },
            seed: 5,
            ..SceneSpec::default()
        };
        let scene = sample_scene(&spec).unwrap();
        let obs = render_observations(&scene, &spec).unwrap();
        let mut residuals = Vec::new();
        for pose in &obs.poses {
            let person = &scene.people[obs.labels[&pose.key()]];
            let cam = &scene.cameras[pose.frame_id() as usize];
            for c in 0..pose.num_joints() {
                if pose.is_visible(c) {
                    let d = pose.pixel(c, cam) - project(&person.joints[c], cam).unwrap();
                    residuals.extend([d.x, d.y]);
                }
            }
        }
        assert!(residuals.len() >= 10_000, "only {} samples", residuals.len());
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (residuals.len() - 1) as f64;
        assert!((var.sqrt() - 2.0).abs() < 0.2, "std {}", var.sqrt());
    }

    #[test]
    fn labels_cover_every_detection() {
        let spec = SceneSpec { seed: 8, ..SceneSpec::default() };
        let scene = sample_scene(&spec).unwrap();
        let obs = render_observations(&scene, &spec).unwrap();
        assert_eq!(obs.labels.len(), obs.poses.len());
        assert_eq!(obs.descriptors.len(), obs.poses.len());
        for p in &obs.poses {
            assert!(obs.labels.contains_key(&p.key()));
        }
    }

    #[test]
    fn rejects_bad_rates_and_crowded_regions() {
        let spec = SceneSpec { noise: NoiseModel { miss_rate: 1.5, ..NoiseModel::default() }, ..SceneSpec::default() };
        assert!(matches!(sample_scene(&spec), Err(SynthError::InvalidSpec(_))));
        let crowded = SceneSpec {
            num_people: 2,
            placement: PlacementRegion { min: [0.0, 0.0], max: [0.0, 0.0] },
            ..SceneSpec::default()
        };
        assert!(matches!(sample_scene(&crowded), Err(SynthError::Placement { person: 1, .. })));
    }
}
