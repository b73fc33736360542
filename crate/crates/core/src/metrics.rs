//! Quality measures for matched groups and reconstructed skeletons.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{DetectionKey, Pose2D};
use crate::geometry::{project, triangulate_dlt, Observation};
use crate::matching::{Partition, PoseGroup};
use crate::reconstruction::Skeleton3D;
use crate::scene::{ObservedScene, SceneError};

/// Subjects with fewer jointly valid joints are left out of PA-MPJPE
/// aggregation.
pub const MIN_PA_MPJPE_JOINTS: usize = 7;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("no valid joint has a visible observation")]
    NoSupport,
    #[error("no detection pair passes the confidence gate")]
    NoAdmissiblePair,
    #[error("c_var needs at least 2 detections, got {0}")]
    TooFewDetections(usize),
    #[error("alignment needs 3 common joints, got {0}")]
    TooFewCommonJoints(usize),
    #[error("alignment support is collinear")]
    CollinearSupport,
    #[error("skeletons have {0} and {1} joints")]
    JointCountMismatch(usize, usize),
    #[error("detection {0} has no ground-truth label")]
    MissingLabel(DetectionKey),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Summary of one evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean pixel distance between reprojected valid joints and their
    /// observations, pooled over all skeletons.
    pub mean_reprojection_px: f64,
    pub mean_group_size: f64,
    /// Observations of valid joints left out of their consensus set.
    pub outlier_count: usize,
    /// In squared scene units, summed over joints and averaged over people.
    pub c_var: f64,
    pub pa_mpjpe: Option<f64>,
    pub clustering_f1: Option<f64>,
}

/// Pixel distances between each projected valid joint and every visible
/// observation of it among the group's members.
pub fn reprojection_residuals(
    skeleton: &Skeleton3D,
    group: &PoseGroup,
    scene: &ObservedScene<'_>,
) -> Result<Vec<f64>, MetricsError> {
    let mut out = Vec::new();
    for key in &group.members {
        let pose = scene.pose(key)?;
        let cam = scene.camera(key.frame_id)?;
        for (c, joint) in skeleton.joints.iter().enumerate() {
            let Some(point) = joint else { continue };
            if c < pose.num_joints() && pose.is_visible(c) {
                let d = match project(&point.position, cam) {
                    Ok(p) => (p - pose.pixel(c, cam)).norm(),
                    Err(_) => f64::INFINITY,
                };
                out.push(d);
            }
        }
    }
    Ok(out)
}

/// Mean of [`reprojection_residuals`].
pub fn reprojection_error_px(
    skeleton: &Skeleton3D,
    group: &PoseGroup,
    scene: &ObservedScene<'_>,
) -> Result<f64, MetricsError> {
    let r = reprojection_residuals(skeleton, group, scene)?;
    if r.is_empty() {
        return Err(MetricsError::NoSupport);
    }
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Visible observations of valid joints whose frame is not among the joint's
/// inlier views.
pub fn outlier_count(skeleton: &Skeleton3D, group: &PoseGroup, scene: &ObservedScene<'_>) -> Result<usize, MetricsError> {
    let mut count = 0;
    for key in &group.members {
        let pose = scene.pose(key)?;
        for (c, joint) in skeleton.joints.iter().enumerate() {
            if let Some(point) = joint {
                if c < pose.num_joints() && pose.is_visible(c) && !point.inlier_views.contains(&key.frame_id) {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Spread of pairwise triangulations of one person's detections.
///
/// For every joint, each pair of detections from distinct frames whose two
/// confidences both reach `tau` is triangulated. The squared distances of
/// those points to their mean are summed and divided by the number of
/// pairs; the result is summed over joints, in squared scene units.
pub fn c_var(detections: &[&Pose2D], scene: &ObservedScene<'_>, tau: f64) -> Result<f64, MetricsError> {
    if detections.len() < 2 {
        return Err(MetricsError::TooFewDetections(detections.len()));
    }
    let num_joints = detections.iter().map(|p| p.num_joints()).min().unwrap_or(0);
    let mut total = 0.0;
    let mut any_pair = false;
    for c in 0..num_joints {
        let mut points: Vec<Vector3<f64>> = Vec::new();
        for (i, u) in detections.iter().enumerate() {
            for v in &detections[i + 1..] {
                if u.frame_id() == v.frame_id() || !u.is_visible(c) || !v.is_visible(c) {
                    continue;
                }
                let (wu, wv) = (u.joint_confidence()[c], v.joint_confidence()[c]);
                if wu.min(wv) < tau {
                    continue;
                }
                let (cu, cv) = (scene.camera(u.frame_id())?, scene.camera(v.frame_id())?);
                let obs = [
                    Observation::new(cu, u.pixel(c, cu), 1.0),
                    Observation::new(cv, v.pixel(c, cv), 1.0),
                ];
                if let Ok(p) = triangulate_dlt(&obs, 0.0) {
                    points.push(p.position);
                }
            }
        }
        if points.is_empty() {
            continue;
        }
        any_pair = true;
        let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
        total += points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / points.len() as f64;
    }
    if any_pair {
        Ok(total)
    } else {
        Err(MetricsError::NoAdmissiblePair)
    }
}

/// Similarity `(s, R, t)` minimizing `Σ ‖s R p_i + t − q_i‖²` with
/// `det R = +1`.
pub fn similarity_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<(f64, Matrix3<f64>, Vector3<f64>), MetricsError> {
    let n = source.len();
    if n < 3 || target.len() != n {
        return Err(MetricsError::TooFewCommonJoints(n.min(target.len())));
    }
    let mu_p = source.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_q = target.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, q) in source.iter().zip(target) {
        let (dp, dq) = (p - mu_p, q - mu_q);
        cov += dq * dp.transpose();
        spread += dp * dp.transpose();
        var_p += dp.norm_squared();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(MetricsError::CollinearSupport);
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let s = (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_p;
    let t = mu_q - s * r * mu_p;
    Ok((s, r, t))
}

/// Mean joint distance after aligning the prediction to the ground truth
/// with the best similarity transform, over jointly known joints.
pub fn pa_mpjpe_points(predicted: &[Option<Vector3<f64>>], truth: &[Option<Vector3<f64>>]) -> Result<f64, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::JointCountMismatch(predicted.len(), truth.len()));
    }
    let (p, q): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) = predicted
        .iter()
        .zip(truth)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip();
    let (s, r, t) = similarity_align(&p, &q)?;
    Ok(p.iter().zip(&q).map(|(a, b)| (s * r * a + t - b).norm()).sum::<f64>() / p.len() as f64)
}

pub fn pa_mpjpe(predicted: &Skeleton3D, truth: &Skeleton3D) -> Result<f64, MetricsError> {
    pa_mpjpe_points(&predicted.positions(), &truth.positions())
}

/// Mean PA-MPJPE over subjects with at least [`MIN_PA_MPJPE_JOINTS`]
/// jointly valid joints; `None` when no subject qualifies.
pub fn mean_pa_mpjpe(pairs: &[(&Skeleton3D, &Skeleton3D)]) -> Option<f64> {
    let errors: Vec<f64> = pairs
        .iter()
        .filter(|(p, t)| {
            p.joints.iter().zip(&t.joints).filter(|(a, b)| a.is_some() && b.is_some()).count() >= MIN_PA_MPJPE_JOINTS
        })
        .filter_map(|(p, t)| pa_mpjpe(p, t).ok())
        .collect();
    (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64)
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Pairwise F1 of "same person" decisions over every pair of detections in
/// the partition; unassigned detections count as singletons. If neither
/// side has a positive pair the score is 1.
pub fn clustering_f1(partition: &Partition, labels: &BTreeMap<DetectionKey, usize>) -> Result<f64, MetricsError> {
    let mut contingency: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut predicted: BTreeMap<usize, u64> = BTreeMap::new();
    let mut actual: BTreeMap<usize, u64> = BTreeMap::new();
    let singletons = partition.unassigned.iter().enumerate().map(|(i, k)| (partition.groups.len() + i, k));
    let grouped = partition
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| group.members.iter().map(move |k| (g, k)));
    for (g, key) in grouped.chain(singletons) {
        let truth = *labels.get(key).ok_or(MetricsError::MissingLabel(*key))?;
        *contingency.entry((g, truth)).or_default() += 1;
        *predicted.entry(g).or_default() += 1;
        *actual.entry(truth).or_default() += 1;
    }
    let tp: u64 = contingency.values().map(|&n| pairs(n)).sum();
    let pred_pos: u64 = predicted.values().map(|&n| pairs(n)).sum();
    let true_pos: u64 = actual.values().map(|&n| pairs(n)).sum();
    if pred_pos == 0 && true_pos == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (pred_pos + true_pos) as f64)
}
