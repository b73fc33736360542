//! Cross-view affinity between 2D pose detections.
//!
//! Two detections of the same person in different frames must agree in
//! appearance and satisfy the epipolar constraint joint by joint. The
//! affinity of a pair is
//!
//! ```text
//! A(u, v) = S(u, v) · 1 / (1 + exp(γ · D(u, v)))
//! ```
//!
//! where `S` is the clamped cosine similarity of appearance descriptors and
//! `D` is the mean symmetric point-to-epipolar-line distance in pixels over
//! the joints visible in both detections. Note that `A ≤ 0.5` always, since
//! `D ≥ 0`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, Matrix3, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{epipolar_line, fundamental_matrix, CameraView, GeometryError};

/// Identifies one detection: the frame it came from and its index there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionKey {
    pub frame_id: u32,
    pub pose_id: u32,
}

impl DetectionKey {
    pub fn new(frame_id: u32, pose_id: u32) -> Self {
        Self { frame_id, pose_id }
    }
}

impl std::fmt::Display for DetectionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.frame_id, self.pose_id)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AffinityError {
    #[error("invalid pose {key}: {reason}")]
    InvalidPose { key: DetectionKey, reason: String },
    #[error("descriptor has zero length or non-finite entries")]
    InvalidDescriptor,
    #[error("descriptor dimensions differ ({0} vs {1})")]
    DescriptorMismatch(usize, usize),
    #[error("no descriptor for detection {0}")]
    MissingDescriptor(DetectionKey),
    #[error("poses share frame {0}; geometric distance needs distinct frames")]
    SameFrame(u32),
    #[error("only {common} jointly visible joints, {required} required")]
    InsufficientOverlap { common: usize, required: usize },
    #[error("no camera for frame {0}")]
    MissingCamera(u32),
    #[error("detection {0} appears more than once")]
    DuplicateDetection(DetectionKey),
    #[error("gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("affinity matrix invariant violated: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One detected person in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    key: DetectionKey,
    joints: Vec<[f64; 2]>,
    joint_confidence: Vec<f64>,
    visibility: Vec<bool>,
    confidence: f64,
}

impl Pose2D {
    /// Validates the detection and derives the pose-level confidence as the
    /// mean confidence of the visible joints.
    pub fn new(
        frame_id: u32,
        pose_id: u32,
        joints: Vec<[f64; 2]>,
        joint_confidence: Vec<f64>,
        visibility: Vec<bool>,
    ) -> Result<Self, AffinityError> {
        let key = DetectionKey::new(frame_id, pose_id);
        let invalid = |reason: String| AffinityError::InvalidPose { key, reason };
        if joints.len() != joint_confidence.len() || joints.len() != visibility.len() {
            return Err(invalid(format!(
                "length mismatch: {} joints, {} confidences, {} visibility flags",
                joints.len(),
                joint_confidence.len(),
                visibility.len()
            )));
        }
        let mut sum = 0.0;
        let mut visible = 0usize;
        for (c, ((p, &w), &vis)) in joints.iter().zip(&joint_confidence).zip(&visibility).enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(invalid(format!("joint {c} confidence {w} outside [0, 1]")));
            }
            if vis {
                if !p.iter().all(|v| (0.0..=1.0).contains(v)) {
                    return Err(invalid(format!("visible joint {c} at {p:?} outside [0, 1]²")));
                }
                sum += w;
                visible += 1;
            }
        }
        if visible == 0 {
            return Err(invalid("no visible joints".into()));
        }
        Ok(Self {
            key,
            joints,
            joint_confidence,
            visibility,
            confidence: sum / visible as f64,
        })
    }

    pub fn key(&self) -> DetectionKey {
        self.key
    }

    pub fn frame_id(&self) -> u32 {
        self.key.frame_id
    }

    pub fn pose_id(&self) -> u32 {
        self.key.pose_id
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Joint positions in normalized image coordinates.
    pub fn joints(&self) -> &[[f64; 2]] {
        &self.joints
    }

    pub fn joint_confidence(&self) -> &[f64] {
        &self.joint_confidence
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn is_visible(&self, joint: usize) -> bool {
        self.visibility[joint]
    }

    /// Pose-level confidence `w`.
    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|v| **v).count()
    }

    /// Pixel position of `joint` in `cam`'s image.
    pub fn pixel(&self, joint: usize, cam: &CameraView) -> Vector2<f64> {
        cam.to_pixels(self.joints[joint])
    }
}

/// A unit-length appearance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceDescriptor {
    vector: Vec<f64>,
}

impl AppearanceDescriptor {
    /// Scales `vector` to unit length. Vectors already unit to within
    /// 1e-12 are kept bit-for-bit.
    pub fn new(vector: Vec<f64>) -> Result<Self, AffinityError> {
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(AffinityError::InvalidDescriptor);
        }
        if (norm - 1.0).abs() <= 1e-12 {
            return Ok(Self { vector });
        }
        Ok(Self {
            vector: vector.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity clamped to `[0, 1]`.
pub fn appearance_similarity(
    d_u: &AppearanceDescriptor,
    d_v: &AppearanceDescriptor,
) -> Result<f64, AffinityError> {
    if d_u.dim() != d_v.dim() {
        return Err(AffinityError::DescriptorMismatch(d_u.dim(), d_v.dim()));
    }
    let dot: f64 = d_u.vector.iter().zip(&d_v.vector).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(0.0, 1.0))
}

/// `1 / (1 + exp(γ·D))`.
pub fn distance_to_similarity(gamma: f64, distance: f64) -> f64 {
    1.0 / (1.0 + (gamma * distance).exp())
}

/// Two calibrated views with their fundamental matrices in both directions.
#[derive(Debug, Clone)]
pub struct ViewPair<'a> {
    pub cam_u: &'a CameraView,
    pub cam_v: &'a CameraView,
    /// Maps pixels of `u` to epipolar lines in `v`.
    pub f_uv: Matrix3<f64>,
    /// Maps pixels of `v` to epipolar lines in `u`.
    pub f_vu: Matrix3<f64>,
}

impl<'a> ViewPair<'a> {
    pub fn new(cam_u: &'a CameraView, cam_v: &'a CameraView) -> Result<Self, GeometryError> {
        Ok(Self {
            cam_u,
            cam_v,
            f_uv: fundamental_matrix(cam_u, cam_v)?,
            f_vu: fundamental_matrix(cam_v, cam_u)?,
        })
    }
}

/// Mean symmetric epipolar distance, in pixels, over joints visible in both
/// poses.
pub fn geometric_distance(
    pose_u: &Pose2D,
    pose_v: &Pose2D,
    views: &ViewPair<'_>,
    min_common_joints: usize,
) -> Result<f64, AffinityError> {
    if pose_u.frame_id() == pose_v.frame_id() {
        return Err(AffinityError::SameFrame(pose_u.frame_id()));
    }
    let joints = pose_u.num_joints().min(pose_v.num_joints());
    let mut total = 0.0;
    let mut common = 0usize;
    for c in 0..joints {
        if !(pose_u.is_visible(c) && pose_v.is_visible(c)) {
            continue;
        }
        let x_u = pose_u.pixel(c, views.cam_u);
        let x_v = pose_v.pixel(c, views.cam_v);
        let line_in_u = epipolar_line(&views.f_vu, &x_v)?;
        let line_in_v = epipolar_line(&views.f_uv, &x_u)?;
        total += line_in_u.distance(&x_u) + line_in_v.distance(&x_v);
        common += 1;
    }
    if common < min_common_joints.max(1) {
        return Err(AffinityError::InsufficientOverlap {
            common,
            required: min_common_joints.max(1),
        });
    }
    Ok(total / (2.0 * common as f64))
}

/// Which factors of the affinity are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffinityMode {
    /// Appearance times epipolar similarity.
    #[default]
    Combined,
    /// Epipolar similarity only (`S := 1`).
    Geometric,
    /// Appearance only; the epipolar factor is pinned at its `D = 0` value of
    /// one half so the affinity keeps the same range.
    Appearance,
}

impl std::str::FromStr for AffinityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "combined" => Ok(Self::Combined),
            "geometric" => Ok(Self::Geometric),
            "appearance" => Ok(Self::Appearance),
            other => Err(format!("unknown affinity mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityParams {
    /// Inverse pixel scale of the distance-to-similarity sigmoid.
    pub gamma: f64,
    pub min_common_joints: usize,
    pub mode: AffinityMode,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            min_common_joints: 4,
            mode: AffinityMode::Combined,
        }
    }
}

/// Affinity of one detection pair. Missing descriptors mean `S = 1`.
pub fn pairwise_affinity(
    pose_u: &Pose2D,
    pose_v: &Pose2D,
    desc_u: Option<&AppearanceDescriptor>,
    desc_v: Option<&AppearanceDescriptor>,
    views: &ViewPair<'_>,
    params: &AffinityParams,
) -> Result<f64, AffinityError> {
    if !(params.gamma > 0.0) {
        return Err(AffinityError::InvalidGamma(params.gamma));
    }
    let similarity = match (params.mode, desc_u, desc_v) {
        (AffinityMode::Geometric, _, _) => 1.0,
        (_, Some(a), Some(b)) => appearance_similarity(a, b)?,
        (AffinityMode::Combined, _, _) => 1.0,
        (AffinityMode::Appearance, None, _) => return Err(AffinityError::MissingDescriptor(pose_u.key())),
        (AffinityMode::Appearance, _, None) => return Err(AffinityError::MissingDescriptor(pose_v.key())),
    };
    let geometric = match params.mode {
        AffinityMode::Appearance => 0.5,
        _ => distance_to_similarity(params.gamma, geometric_distance(pose_u, pose_v, views, params.min_common_joints)?),
    };
    Ok(similarity * geometric)
}

/// Symmetric matrix of pairwise affinities over all detections, indexed in
/// ascending `(frame_id, pose_id)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    entries: DMatrix<f64>,
    keys: Vec<DetectionKey>,
    index: HashMap<DetectionKey, usize>,
}

impl AffinityMatrix {
    /// Wraps a precomputed matrix after checking its invariants. Rows are
    /// reordered to ascending key order.
    pub fn from_entries(keys: Vec<DetectionKey>, entries: DMatrix<f64>) -> Result<Self, AffinityError> {
        let n = keys.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(AffinityError::InvalidMatrix(format!(
                "{}×{} entries for {n} detections",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| keys[i]);
        let sorted_keys: Vec<DetectionKey> = order.iter().map(|&i| keys[i]).collect();
        for w in sorted_keys.windows(2) {
            if w[0] == w[1] {
                return Err(AffinityError::DuplicateDetection(w[0]));
            }
        }
        let sorted = DMatrix::from_fn(n, n, |i, j| entries[(order[i], order[j])]);
        for i in 0..n {
            for j in 0..n {
                let a = sorted[(i, j)];
                if !(0.0..=1.0).contains(&a) {
                    return Err(AffinityError::InvalidMatrix(format!("entry ({i}, {j}) = {a} outside [0, 1]")));
                }
                if (a - sorted[(j, i)]).abs() > 1e-12 {
                    return Err(AffinityError::InvalidMatrix(format!("entry ({i}, {j}) is not symmetric")));
                }
                if sorted_keys[i].frame_id == sorted_keys[j].frame_id && a != 0.0 {
                    return Err(AffinityError::InvalidMatrix(format!(
                        "same-frame entry ({i}, {j}) must be zero"
                    )));
                }
            }
        }
        Ok(Self::assemble(sorted_keys, sorted))
    }

    fn assemble(keys: Vec<DetectionKey>, entries: DMatrix<f64>) -> Self {
        let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        Self { entries, keys, index }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[DetectionKey] {
        &self.keys
    }

    pub fn index_of(&self, key: &DetectionKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Affinity between two detections by key; `None` if either is unknown.
    pub fn between(&self, a: &DetectionKey, b: &DetectionKey) -> Option<f64> {
        Some(self.entries[(self.index_of(a)?, self.index_of(b)?)])
    }

    pub fn same_frame(&self, i: usize, j: usize) -> bool {
        self.keys[i].frame_id == self.keys[j].frame_id
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Fills the affinity matrix for every cross-frame pair. Pairs with too few
/// common joints get zero affinity.
pub fn build_affinity_matrix(
    poses: &[Pose2D],
    cameras: &[CameraView],
    descriptors: Option<&BTreeMap<DetectionKey, AppearanceDescriptor>>,
    params: &AffinityParams,
) -> Result<AffinityMatrix, AffinityError> {
    if !(params.gamma > 0.0) {
        return Err(AffinityError::InvalidGamma(params.gamma));
    }
    let cams: BTreeMap<u32, &CameraView> = cameras.iter().map(|c| (c.frame_id(), c)).collect();
    let mut sorted: Vec<&Pose2D> = poses.iter().collect();
    sorted.sort_by_key(|p| p.key());
    for w in sorted.windows(2) {
        if w[0].key() == w[1].key() {
            return Err(AffinityError::DuplicateDetection(w[0].key()));
        }
    }
    for p in &sorted {
        if !cams.contains_key(&p.frame_id()) {
            return Err(AffinityError::MissingCamera(p.frame_id()));
        }
    }
    let descs: Option<Vec<&AppearanceDescriptor>> = match (params.mode, descriptors) {
        (AffinityMode::Geometric, _) | (AffinityMode::Combined, None) => None,
        (AffinityMode::Appearance, None) => {
            return match sorted.first() {
                Some(p) => Err(AffinityError::MissingDescriptor(p.key())),
                None => Ok(AffinityMatrix::assemble(Vec::new(), DMatrix::zeros(0, 0))),
            }
        }
        (_, Some(map)) => Some(
            sorted
                .iter()
                .map(|p| map.get(&p.key()).ok_or(AffinityError::MissingDescriptor(p.key())))
                .collect::<Result<_, _>>()?,
        ),
    };

    let frames: Vec<u32> = cams.keys().copied().collect();
    let mut view_pairs: HashMap<(u32, u32), ViewPair<'_>> = HashMap::new();
    for (i, &fu) in frames.iter().enumerate() {
        for &fv in &frames[i + 1..] {
            view_pairs.insert((fu, fv), ViewPair::new(cams[&fu], cams[&fv])?);
        }
    }

    let n = sorted.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| sorted[i].frame_id() != sorted[j].frame_id())
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            // Keys are sorted, so frame_id of i is below that of j.
            let views = &view_pairs[&(sorted[i].frame_id(), sorted[j].frame_id())];
            let (du, dv) = match &descs {
                Some(d) => (Some(d[i]), Some(d[j])),
                None => (None, None),
            };
            match pairwise_affinity(sorted[i], sorted[j], du, dv, views, params) {
                Ok(a) => Ok(a),
                Err(AffinityError::InsufficientOverlap { .. }) => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;

    let mut entries = DMatrix::zeros(n, n);
    for (&(i, j), &a) in pairs.iter().zip(&values) {
        entries[(i, j)] = a;
        entries[(j, i)] = a;
    }
    Ok(AffinityMatrix::assemble(sorted.iter().map(|p| p.key()).collect(), entries))
}
