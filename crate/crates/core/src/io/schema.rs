//! One document type per artifact, with conversions to and from the
//! in-memory types.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{check_version, read_json, to_json, write_text, IoError, FORMAT_VERSION};
use crate::affinity::{AppearanceDescriptor, DetectionKey, Pose2D};
use crate::geometry::{CameraView, Point3D};
use crate::matching::{Partition, PoseGroup};
use crate::metrics::EvalReport;
use crate::pipeline::GroundTruth;
use crate::reconstruction::{JointFailure, Skeleton3D};
use crate::refinement::{BoneTable, GmmPrior, PoseNormalization};
use crate::synth::GroundTruthPerson;

fn version() -> String {
    FORMAT_VERSION.to_string()
}

// poses2d.json

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosesDoc {
    version: String,
    detections: Vec<DetectionDoc>,
}

/// Joint positions are normalized image coordinates in `[0, 1]²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionDoc {
    frame_id: u32,
    pose_id: u32,
    joints: Vec<[f64; 2]>,
    confidence: Vec<f64>,
    visible: Vec<bool>,
}

pub fn poses_to_json(poses: &[Pose2D]) -> String {
    let mut sorted: Vec<&Pose2D> = poses.iter().collect();
    sorted.sort_by_key(|p| p.key());
    to_json(&PosesDoc {
        version: version(),
        detections: sorted
            .into_iter()
            .map(|p| DetectionDoc {
                frame_id: p.frame_id(),
                pose_id: p.pose_id(),
                joints: p.joints().to_vec(),
                confidence: p.joint_confidence().to_vec(),
                visible: p.visibility().to_vec(),
            })
            .collect(),
    })
}

/// All detections must share a joint count and have unique keys.
pub fn read_poses(path: &Path) -> Result<Vec<Pose2D>, IoError> {
    let doc: PosesDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    let mut keys = BTreeSet::new();
    let mut out = Vec::with_capacity(doc.detections.len());
    for (i, d) in doc.detections.into_iter().enumerate() {
        let pose = Pose2D::new(d.frame_id, d.pose_id, d.joints, d.confidence, d.visible)
            .map_err(|e| IoError::invalid(path, format!("detections[{i}]: {e}")))?;
        if !keys.insert(pose.key()) {
            return Err(IoError::invalid(path, format!("detections[{i}]: duplicate {}", pose.key())));
        }
        if let Some(first) = out.first().map(Pose2D::num_joints) {
            if pose.num_joints() != first {
                return Err(IoError::invalid(
                    path,
                    format!("detections[{i}]: {} joints, expected {first}", pose.num_joints()),
                ));
            }
        }
        out.push(pose);
    }
    Ok(out)
}

pub fn write_poses(path: &Path, poses: &[Pose2D]) -> Result<(), IoError> {
    write_text(path, &poses_to_json(poses))
}

// cameras.json

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CamerasDoc {
    version: String,
    cameras: Vec<CameraDoc>,
}

/// World-to-camera rotation (row-major) and translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    frame_id: u32,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

pub fn cameras_to_json(cameras: &[CameraView]) -> String {
    let mut sorted: Vec<&CameraView> = cameras.iter().collect();
    sorted.sort_by_key(|c| c.frame_id());
    to_json(&CamerasDoc {
        version: version(),
        cameras: sorted
            .into_iter()
            .map(|c| {
                let r = c.rotation();
                let t = c.translation();
                CameraDoc {
                    frame_id: c.frame_id(),
                    width: c.image_size()[0],
                    height: c.image_size()[1],
                    fx: c.focal()[0],
                    fy: c.focal()[1],
                    cx: c.principal_point()[0],
                    cy: c.principal_point()[1],
                    rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
                    translation: [t.x, t.y, t.z],
                }
            })
            .collect(),
    })
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraView>, IoError> {
    let doc: CamerasDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    let mut frames = BTreeSet::new();
    doc.cameras
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            if !frames.insert(c.frame_id) {
                return Err(IoError::invalid(path, format!("cameras[{i}]: duplicate frame {}", c.frame_id)));
            }
            let r = Matrix3::from_fn(|a, b| c.rotation[a][b]);
            CameraView::new(
                c.frame_id,
                [c.fx, c.fy],
                [c.cx, c.cy],
                [c.width, c.height],
                r,
                Vector3::from(c.translation),
            )
            .map_err(|e| IoError::invalid(path, format!("cameras[{i}]: {e}")))
        })
        .collect()
}

pub fn write_cameras(path: &Path, cameras: &[CameraView]) -> Result<(), IoError> {
    write_text(path, &cameras_to_json(cameras))
}

// descriptors.json

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorsDoc {
    version: String,
    descriptors: Vec<DescriptorDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorDoc {
    frame_id: u32,
    pose_id: u32,
    vector: Vec<f64>,
}

pub fn descriptors_to_json(descriptors: &BTreeMap<DetectionKey, AppearanceDescriptor>) -> String {
    to_json(&DescriptorsDoc {
        version: version(),
        descriptors: descriptors
            .iter()
            .map(|(k, d)| DescriptorDoc {
                frame_id: k.frame_id,
                pose_id: k.pose_id,
                vector: d.as_slice().to_vec(),
            })
            .collect(),
    })
}

pub fn read_descriptors(path: &Path) -> Result<BTreeMap<DetectionKey, AppearanceDescriptor>, IoError> {
    let doc: DescriptorsDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (i, d) in doc.descriptors.into_iter().enumerate() {
        let key = DetectionKey::new(d.frame_id, d.pose_id);
        if *dim.get_or_insert(d.vector.len()) != d.vector.len() {
            return Err(IoError::invalid(path, format!("descriptors[{i}]: dimension mismatch")));
        }
        let desc = AppearanceDescriptor::new(d.vector).map_err(|e| IoError::invalid(path, format!("descriptors[{i}]: {e}")))?;
        if out.insert(key, desc).is_some() {
            return Err(IoError::invalid(path, format!("descriptors[{i}]: duplicate {key}")));
        }
    }
    Ok(out)
}

pub fn write_descriptors(path: &Path, descriptors: &BTreeMap<DetectionKey, AppearanceDescriptor>) -> Result<(), IoError> {
    write_text(path, &descriptors_to_json(descriptors))
}

// groups.json

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupsDoc {
    version: String,
    objective: f64,
    groups: Vec<PoseGroup>,
    unassigned: Vec<DetectionKey>,
}

pub fn groups_to_json(partition: &Partition) -> String {
    to_json(&GroupsDoc {
        version: version(),
        objective: partition.objective,
        groups: partition.groups.clone(),
        unassigned: partition.unassigned.clone(),
    })
}

pub fn read_groups(path: &Path) -> Result<Partition, IoError> {
    let doc: GroupsDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    for (i, g) in doc.groups.iter().enumerate() {
        if g.members.len() != g.member_scores.len() {
            return Err(IoError::invalid(path, format!("groups[{i}]: members and member_scores differ in length")));
        }
    }
    Ok(Partition {
        groups: doc.groups,
        unassigned: doc.unassigned,
        objective: doc.objective,
    })
}

pub fn write_groups(path: &Path, partition: &Partition) -> Result<(), IoError> {
    write_text(path, &groups_to_json(partition))
}

// skeletons.json

/// A skeleton as stored, with its optional metric scale factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonRecord {
    pub skeleton: Skeleton3D,
    pub scale_factor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonsDoc {
    version: String,
    skeletons: Vec<SkeletonDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    person_id: usize,
    joints: Vec<Option<[f64; 3]>>,
    valid: Vec<bool>,
    reasons: Vec<Option<JointFailure>>,
    joint_stats: Vec<Option<JointStatsDoc>>,
    mean_reprojection_px: f64,
    total_2d_joints_used: usize,
    scale_factor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointStatsDoc {
    residual_px: f64,
    parallax_rad: f64,
    inlier_views: Vec<u32>,
}

pub fn skeletons_to_json(records: &[SkeletonRecord]) -> String {
    to_json(&SkeletonsDoc {
        version: version(),
        skeletons: records
            .iter()
            .map(|r| {
                let s = &r.skeleton;
                SkeletonDoc {
                    person_id: s.person_id,
                    joints: s.joints.iter().map(|j| j.as_ref().map(|p| p.position.into())).collect(),
                    valid: s.joint_valid(),
                    reasons: s.failures.clone(),
                    joint_stats: s
                        .joints
                        .iter()
                        .map(|j| {
                            j.as_ref().map(|p| JointStatsDoc {
                                residual_px: p.residual,
                                parallax_rad: p.parallax,
                                inlier_views: p.inlier_views.iter().copied().collect(),
                            })
                        })
                        .collect(),
                    mean_reprojection_px: s.mean_reprojection_px,
                    total_2d_joints_used: s.total_2d_joints_used,
                    scale_factor: r.scale_factor,
                }
            })
            .collect(),
    })
}

pub fn read_skeletons(path: &Path) -> Result<Vec<SkeletonRecord>, IoError> {
    let doc: SkeletonsDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    doc.skeletons
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let c = d.joints.len();
            if d.valid.len() != c || d.reasons.len() != c || d.joint_stats.len() != c {
                return Err(IoError::invalid(path, format!("skeletons[{i}]: per-joint arrays differ in length")));
            }
            let mut joints = Vec::with_capacity(c);
            for (j, ((pos, valid), stats)) in d.joints.into_iter().zip(&d.valid).zip(d.joint_stats).enumerate() {
                match (pos, *valid, stats) {
                    (Some(p), true, Some(st)) => joints.push(Some(Point3D {
                        position: Vector3::from(p),
                        residual: st.residual_px,
                        inlier_views: st.inlier_views.into_iter().collect(),
                        parallax: st.parallax_rad,
                    })),
                    (None, false, None) => joints.push(None),
                    _ => {
                        return Err(IoError::invalid(
                            path,
                            format!("skeletons[{i}]: joint {j} position, validity and stats disagree"),
                        ))
                    }
                }
            }
            Ok(SkeletonRecord {
                skeleton: Skeleton3D {
                    person_id: d.person_id,
                    joints,
                    failures: d.reasons,
                    mean_reprojection_px: d.mean_reprojection_px,
                    total_2d_joints_used: d.total_2d_joints_used,
                },
                scale_factor: d.scale_factor,
            })
        })
        .collect()
}

pub fn write_skeletons(path: &Path, records: &[SkeletonRecord]) -> Result<(), IoError> {
    write_text(path, &skeletons_to_json(records))
}

// gmm.json

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmDoc {
    version: String,
    #[serde(rename = "L")]
    components: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    normalization: NormalizationDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizationDoc {
    root_joints: Vec<usize>,
    scale_edges: Vec<(usize, usize)>,
}

pub fn gmm_to_json(gmm: &GmmPrior) -> String {
    let c = gmm.components();
    to_json(&GmmDoc {
        version: version(),
        components: c.len(),
        weights: c.iter().map(|c| c.weight()).collect(),
        means: c.iter().map(|c| c.mean().as_slice().to_vec()).collect(),
        covariances: c
            .iter()
            .map(|c| c.covariance().row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect(),
        normalization: NormalizationDoc {
            root_joints: gmm.normalization().root_joints.clone(),
            scale_edges: gmm.normalization().scale_edges.clone(),
        },
    })
}

pub fn read_gmm(path: &Path) -> Result<GmmPrior, IoError> {
    let doc: GmmDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    if doc.components != doc.weights.len() {
        return Err(IoError::invalid(path, format!("L = {} but {} weights", doc.components, doc.weights.len())));
    }
    let covariances = doc
        .covariances
        .iter()
        .enumerate()
        .map(|(l, rows)| {
            let d = rows.len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(IoError::invalid(path, format!("covariances[{l}] is not square")));
            }
            Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
        })
        .collect::<Result<Vec<_>, _>>()?;
    GmmPrior::new(
        doc.weights,
        doc.means.into_iter().map(DVector::from_vec).collect(),
        covariances,
        PoseNormalization {
            root_joints: doc.normalization.root_joints,
            scale_edges: doc.normalization.scale_edges,
        },
    )
    .map_err(|e| IoError::invalid(path, e))
}

pub fn write_gmm(path: &Path, gmm: &GmmPrior) -> Result<(), IoError> {
    write_text(path, &gmm_to_json(gmm))
}

// bones.json

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BonesDoc {
    version: String,
    edges: Vec<(usize, usize)>,
    mean_lengths: Vec<f64>,
}

pub fn bones_to_json(bones: &BoneTable) -> String {
    to_json(&BonesDoc {
        version: version(),
        edges: bones.edges().to_vec(),
        mean_lengths: bones.mean_lengths().to_vec(),
    })
}

pub fn read_bones(path: &Path) -> Result<BoneTable, IoError> {
    let doc: BonesDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    BoneTable::new(doc.edges, doc.mean_lengths).map_err(|e| IoError::invalid(path, e))
}

pub fn write_bones(path: &Path, bones: &BoneTable) -> Result<(), IoError> {
    write_text(path, &bones_to_json(bones))
}

// eval_report.json

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalDoc {
    version: String,
    c_var_units: String,
    #[serde(flatten)]
    report: EvalReport,
}

pub const C_VAR_UNITS: &str = "squared scene units";

pub fn eval_report_to_json(report: &EvalReport) -> String {
    to_json(&EvalDoc {
        version: version(),
        c_var_units: C_VAR_UNITS.into(),
        report: report.clone(),
    })
}

pub fn read_eval_report(path: &Path) -> Result<EvalReport, IoError> {
    let doc: EvalDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    Ok(doc.report)
}

pub fn write_eval_report(path: &Path, report: &EvalReport) -> Result<(), IoError> {
    write_text(path, &eval_report_to_json(report))
}

// ground_truth.json

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthDoc {
    version: String,
    labels: Vec<LabelDoc>,
    people: Vec<PersonDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelDoc {
    frame_id: u32,
    pose_id: u32,
    person_id: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonDoc {
    person_id: usize,
    joints: Vec<[f64; 3]>,
    descriptor: Vec<f64>,
}

pub fn ground_truth_to_json(people: &[GroundTruthPerson], labels: &BTreeMap<DetectionKey, usize>) -> String {
    to_json(&GroundTruthDoc {
        version: version(),
        labels: labels
            .iter()
            .map(|(k, &p)| LabelDoc {
                frame_id: k.frame_id,
                pose_id: k.pose_id,
                person_id: p,
            })
            .collect(),
        people: people
            .iter()
            .map(|p| PersonDoc {
                person_id: p.person_id,
                joints: p.joints.iter().map(|j| (*j).into()).collect(),
                descriptor: p.descriptor.clone(),
            })
            .collect(),
    })
}

/// People must be listed in person-id order starting at zero.
pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, IoError> {
    let doc: GroundTruthDoc = read_json(path)?;
    check_version(path, &doc.version)?;
    let mut skeletons = Vec::with_capacity(doc.people.len());
    for (i, p) in doc.people.into_iter().enumerate() {
        if p.person_id != i {
            return Err(IoError::invalid(path, format!("people[{i}] has person_id {}", p.person_id)));
        }
        let person = GroundTruthPerson {
            person_id: p.person_id,
            joints: p.joints.into_iter().map(Vector3::from).collect(),
            descriptor: p.descriptor,
        };
        skeletons.push(person.to_skeleton());
    }
    let mut labels = BTreeMap::new();
    for (i, l) in doc.labels.into_iter().enumerate() {
        if l.person_id >= skeletons.len() {
            return Err(IoError::invalid(path, format!("labels[{i}]: unknown person {}", l.person_id)));
        }
        if labels.insert(DetectionKey::new(l.frame_id, l.pose_id), l.person_id).is_some() {
            return Err(IoError::invalid(path, format!("labels[{i}]: duplicate detection")));
        }
    }
    Ok(GroundTruth { labels, skeletons })
}

pub fn write_ground_truth(
    path: &Path,
    people: &[GroundTruthPerson],
    labels: &BTreeMap<DetectionKey, usize>,
) -> Result<(), IoError> {
    write_text(path, &ground_truth_to_json(people, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_observations, sample_scene, SceneSpec, Trajectory};

    fn small_scene() -> (crate::synth::GroundTruthScene, crate::synth::RenderedObservations) {
        let spec = SceneSpec {
            num_people: 2,
            trajectory: Trajectory { num_frames: 4, ..Trajectory::default() },
            seed: 5,
            ..SceneSpec::default()
        };
        let scene = sample_scene(&spec).unwrap();
        let obs = render_observations(&scene, &spec).unwrap();
        (scene, obs)
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (scene, obs) = small_scene();

        let p = dir.path().join("poses2d.json");
        write_poses(&p, &obs.poses).unwrap();
        let mut sorted = obs.poses.clone();
        sorted.sort_by_key(|p| p.key());
        assert_eq!(read_poses(&p).unwrap(), sorted);

        let c = dir.path().join("cameras.json");
        write_cameras(&c, &scene.cameras).unwrap();
        assert_eq!(read_cameras(&c).unwrap(), scene.cameras);

        let d = dir.path().join("descriptors.json");
        write_descriptors(&d, &obs.descriptors).unwrap();
        assert_eq!(read_descriptors(&d).unwrap(), obs.descriptors);

        let g = dir.path().join("ground_truth.json");
        write_ground_truth(&g, &scene.people, &obs.labels).unwrap();
        let gt = read_ground_truth(&g).unwrap();
        assert_eq!(gt.labels, obs.labels);
        assert_eq!(gt.skeletons[1].positions()[3], Some(scene.people[1].joints[3]));

        let b = dir.path().join("bones.json");
        write_bones(&b, &BoneTable::default()).unwrap();
        assert_eq!(read_bones(&b).unwrap(), BoneTable::default());
    }

    #[test]
    fn version_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses2d.json");
        std::fs::write(&p, r#"{"version": "mvm/0", "detections": []}"#).unwrap();
        assert!(matches!(read_poses(&p), Err(IoError::Invalid { .. })));
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cameras.json");
        std::fs::write(&p, "{\n  \"version\": \"mvm/1\",\n  \"cameras\": [ oops ]\n}\n").unwrap();
        match read_cameras(&p) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bones.json");
        std::fs::write(&p, r#"{"version": "mvm/1", "edges": [[0, 1]], "mean_lengths": [1.0], "extra": 1}"#).unwrap();
        assert!(matches!(read_bones(&p), Err(IoError::Parse { .. })));
    }
}
