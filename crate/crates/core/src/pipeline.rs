//! The end-to-end driver: match, triangulate, refine, calibrate, evaluate.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::affinity::{build_affinity_matrix, AffinityError, AffinityParams, AppearanceDescriptor, DetectionKey, Pose2D};
use crate::geometry::{CameraView, RansacParams};
use crate::matching::{greedy_match, GreedyParams, MatchingError, Partition, PoseGroup};
use crate::metrics::{self, EvalReport, MetricsError};
use crate::reconstruction::{reconstruct_group, ReconstructionError, Skeleton3D};
use crate::refinement::{bundle_adjust, calibrate_scale, BoneTable, BundleParams, GmmPrior, RefinementError};
use crate::scene::{ObservedScene, SceneError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PipelineError {
    #[error("no detections to process")]
    NoDetections,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Reconstruction(#[from] ReconstructionError),
    #[error(transparent)]
    Refinement(#[from] RefinementError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Every tunable of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub affinity: AffinityParams,
    pub greedy: GreedyParams,
    pub ransac: RansacParams,
    pub bundle: BundleParams,
    /// Confidence gate of the pairwise-triangulation spread.
    pub c_var_tau: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            affinity: AffinityParams::default(),
            greedy: GreedyParams::default(),
            ransac: RansacParams::default(),
            bundle: BundleParams::default(),
            c_var_tau: 0.5,
        }
    }
}

/// Hidden identities of a synthetic run, for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: BTreeMap<DetectionKey, usize>,
    /// Ground-truth skeleton of each person, indexed by person id.
    pub skeletons: Vec<Skeleton3D>,
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub poses: &'a [Pose2D],
    pub cameras: &'a [CameraView],
    pub descriptors: Option<&'a BTreeMap<DetectionKey, AppearanceDescriptor>>,
    pub gmm: Option<&'a GmmPrior>,
    pub bones: &'a BoneTable,
    pub ground_truth: Option<&'a GroundTruth>,
}

/// One reconstructed person.
#[derive(Debug, Clone)]
pub struct PersonResult {
    pub initial: Skeleton3D,
    pub refined: Skeleton3D,
    /// Factor taking the skeleton to the bone table's units, when any bone
    /// is complete.
    pub scale_factor: Option<f64>,
    pub ba_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub partition: Partition,
    pub people: Vec<PersonResult>,
    pub report: EvalReport,
}

/// Groups detections by person.
pub fn match_detections(
    poses: &[Pose2D],
    cameras: &[CameraView],
    descriptors: Option<&BTreeMap<DetectionKey, AppearanceDescriptor>>,
    params: &PipelineParams,
) -> Result<Partition, PipelineError> {
    let a = build_affinity_matrix(poses, cameras, descriptors, &params.affinity)?;
    Ok(greedy_match(poses, &a, &params.greedy)?)
}

/// Triangulates every group of two or more detections, in group order.
pub fn reconstruct_all(
    partition: &Partition,
    scene: &ObservedScene<'_>,
    ransac: &RansacParams,
) -> Result<Vec<(PoseGroup, Skeleton3D)>, PipelineError> {
    let groups: Vec<&PoseGroup> = partition.groups.iter().filter(|g| g.is_reconstructable()).collect();
    groups
        .par_iter()
        .map(|g| Ok(((*g).clone(), reconstruct_group(g, scene, ransac)?)))
        .collect()
}

/// Bundle-adjusts and calibrates each skeleton. Skeletons with no valid
/// joint pass through unchanged.
pub fn refine_all(
    reconstructed: &[(PoseGroup, Skeleton3D)],
    scene: &ObservedScene<'_>,
    gmm: Option<&GmmPrior>,
    bones: &BoneTable,
    params: &BundleParams,
) -> Result<Vec<PersonResult>, PipelineError> {
    reconstructed
        .par_iter()
        .map(|(group, initial)| {
            let (refined, ba_iterations) = match bundle_adjust(initial, group, scene, gmm, params) {
                Ok(out) => (out.skeleton, out.iterations),
                Err(RefinementError::NothingToRefine) => (initial.clone(), 0),
                Err(e) => return Err(e.into()),
            };
            let scale_factor = match calibrate_scale(&refined, bones) {
                Ok(s) => Some(s),
                Err(RefinementError::NoBones) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(PersonResult {
                initial: initial.clone(),
                refined,
                scale_factor,
                ba_iterations,
            })
        })
        .collect()
}

/// Majority ground-truth label of a group; ties go to the smaller label.
pub fn majority_label(group: &PoseGroup, labels: &BTreeMap<DetectionKey, usize>) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for k in &group.members {
        if let Some(&l) = labels.get(k) {
            *counts.entry(l).or_default() += 1;
        }
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(l, _)| l)
}

/// Scores a finished run.
pub fn evaluate(
    partition: &Partition,
    people: &[(&PoseGroup, &Skeleton3D)],
    scene: &ObservedScene<'_>,
    c_var_tau: f64,
    ground_truth: Option<&GroundTruth>,
) -> Result<EvalReport, PipelineError> {
    let mut residuals = Vec::new();
    let mut outliers = 0;
    let mut spreads = Vec::new();
    for (group, skeleton) in people {
        residuals.extend(metrics::reprojection_residuals(skeleton, group, scene)?);
        outliers += metrics::outlier_count(skeleton, group, scene)?;
        let detections: Vec<&Pose2D> = group.members.iter().map(|k| scene.pose(k)).collect::<Result<_, _>>()?;
        match metrics::c_var(&detections, scene, c_var_tau) {
            Ok(v) => spreads.push(v),
            Err(MetricsError::NoAdmissiblePair | MetricsError::TooFewDetections(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };

    let (pa_mpjpe, clustering_f1) = match ground_truth {
        Some(gt) => {
            let pairs: Vec<(&Skeleton3D, &Skeleton3D)> = people
                .iter()
                .filter_map(|(g, s)| {
                    let label = majority_label(g, &gt.labels)?;
                    Some((*s, gt.skeletons.get(label)?))
                })
                .collect();
            (metrics::mean_pa_mpjpe(&pairs), Some(metrics::clustering_f1(partition, &gt.labels)?))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        mean_reprojection_px: mean(&residuals),
        mean_group_size: partition.mean_group_size(),
        outlier_count: outliers,
        c_var: mean(&spreads),
        pa_mpjpe,
        clustering_f1,
    })
}

/// Runs every stage on in-memory inputs.
pub fn run_pipeline(inputs: &PipelineInputs<'_>, params: &PipelineParams) -> Result<PipelineOutput, PipelineError> {
    if inputs.poses.is_empty() {
        return Err(PipelineError::NoDetections);
    }
    let scene = ObservedScene::new(inputs.poses, inputs.cameras)?;
    let partition = match_detections(inputs.poses, inputs.cameras, inputs.descriptors, params)?;
    log::info!(
        "matched {} detections into {} groups",
        inputs.poses.len(),
        partition.groups.len()
    );
    let reconstructed = reconstruct_all(&partition, &scene, &params.ransac)?;
    let people = refine_all(&reconstructed, &scene, inputs.gmm, inputs.bones, &params.bundle)?;
    let scored: Vec<(&PoseGroup, &Skeleton3D)> =
        reconstructed.iter().zip(&people).map(|((g, _), p)| (g, &p.refined)).collect();
    let report = evaluate(&partition, &scored, &scene, params.c_var_tau, inputs.ground_truth)?;
    Ok(PipelineOutput {
        partition,
        people,
        report,
    })
}
