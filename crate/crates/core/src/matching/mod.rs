//! Partitioning detections into per-person groups.
//!
//! The quantity all matchers are judged by is the within-group weighted
//! affinity
//!
//! ```text
//! Σ_k Σ_{u ∈ G_k} Σ_{v ∈ G_k, v ≠ u} w_u · w_v · A(u, v)
//! ```
//!
//! subject to every group holding at most one detection per frame.
//! [`greedy_match`] approximates its maximum, [`exhaustive_match`] finds it
//! exactly on small instances, and [`hungarian_chain_match`] is the
//! frame-to-frame tracking baseline.

mod exhaustive;
mod greedy;
mod hungarian;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{AffinityMatrix, DetectionKey, Pose2D};

pub use exhaustive::{exhaustive_match, MAX_EXHAUSTIVE_DETECTIONS};
pub use greedy::{greedy_match, GreedyParams};
pub use hungarian::{hungarian_chain_match, linear_assignment};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MatchingError {
    #[error("detection {0} is not indexed by the affinity matrix")]
    UnknownDetection(DetectionKey),
    #[error("detection {0} has no pose")]
    MissingPose(DetectionKey),
    #[error("detection {0} appears more than once in the partition")]
    DuplicateMember(DetectionKey),
    #[error("detection {0} is not covered by the partition")]
    Uncovered(DetectionKey),
    #[error("group {person_id} holds two detections from frame {frame_id}")]
    FrameConflict { person_id: usize, frame_id: u32 },
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("{got} detections exceed the exhaustive-search limit of {limit}")]
    InstanceTooLarge { got: usize, limit: usize },
}

/// Detections attributed to one person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGroup {
    pub person_id: usize,
    pub members: Vec<DetectionKey>,
    /// Weighted affinity of each member to the members that preceded it.
    pub member_scores: Vec<f64>,
}

impl PoseGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Groups of fewer than two detections cannot be triangulated.
    pub fn is_reconstructable(&self) -> bool {
        self.members.len() >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub groups: Vec<PoseGroup>,
    pub unassigned: Vec<DetectionKey>,
    pub objective: f64,
}

impl Partition {
    pub fn empty() -> Self {
        Self {
            groups: Vec::new(),
            unassigned: Vec::new(),
            objective: 0.0,
        }
    }

    /// Each detection's group index; unassigned detections are absent.
    pub fn labels(&self) -> BTreeMap<DetectionKey, usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, group)| group.members.iter().map(move |k| (*k, g)))
            .collect()
    }

    pub fn mean_group_size(&self) -> f64 {
        if self.groups.is_empty() {
            0.0
        } else {
            self.groups.iter().map(PoseGroup::len).sum::<usize>() as f64 / self.groups.len() as f64
        }
    }

    /// Checks coverage, uniqueness, and the one-detection-per-frame rule
    /// against the full detection set.
    pub fn validate(&self, detections: &[DetectionKey]) -> Result<(), MatchingError> {
        let mut seen = BTreeSet::new();
        for group in &self.groups {
            if group.members.is_empty() {
                return Err(MatchingError::EmptyGroup(group.person_id));
            }
            let mut frames = BTreeSet::new();
            for k in &group.members {
                if !seen.insert(*k) {
                    return Err(MatchingError::DuplicateMember(*k));
                }
                if !frames.insert(k.frame_id) {
                    return Err(MatchingError::FrameConflict {
                        person_id: group.person_id,
                        frame_id: k.frame_id,
                    });
                }
            }
        }
        for k in &self.unassigned {
            if !seen.insert(*k) {
                return Err(MatchingError::DuplicateMember(*k));
            }
        }
        let all: BTreeSet<DetectionKey> = detections.iter().copied().collect();
        if let Some(k) = seen.difference(&all).next() {
            return Err(MatchingError::UnknownDetection(*k));
        }
        if let Some(k) = all.difference(&seen).next() {
            return Err(MatchingError::Uncovered(*k));
        }
        Ok(())
    }
}

/// Pose-level confidence for every row of `a`.
pub(crate) fn row_weights(poses: &[Pose2D], a: &AffinityMatrix) -> Result<Vec<f64>, MatchingError> {
    let by_key: BTreeMap<DetectionKey, f64> = poses.iter().map(|p| (p.key(), p.confidence())).collect();
    a.keys()
        .iter()
        .map(|k| by_key.get(k).copied().ok_or(MatchingError::MissingPose(*k)))
        .collect()
}

fn group_objective(rows: &[usize], weights: &[f64], a: &AffinityMatrix) -> f64 {
    let mut total = 0.0;
    for &u in rows {
        for &v in rows {
            if u != v {
                total += weights[u] * weights[v] * a.get(u, v);
            }
        }
    }
    total
}

/// Within-group weighted affinity, each unordered pair counted twice.
pub fn objective_value(partition: &Partition, a: &AffinityMatrix, poses: &[Pose2D]) -> Result<f64, MatchingError> {
    let weights = row_weights(poses, a)?;
    let mut total = 0.0;
    for group in &partition.groups {
        let rows: Vec<usize> = group
            .members
            .iter()
            .map(|k| a.index_of(k).ok_or(MatchingError::UnknownDetection(*k)))
            .collect::<Result<_, _>>()?;
        total += group_objective(&rows, &weights, a);
    }
    Ok(total)
}
