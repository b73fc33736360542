use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{row_weights, MatchingError, Partition, PoseGroup};
use crate::affinity::{AffinityMatrix, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyParams {
    /// Minimum mean weighted affinity between a candidate and the current
    /// group members for the candidate to join.
    pub tau: f64,
    /// Detections below this confidence never seed a group.
    pub seed_min_confidence: f64,
}

impl Default for GreedyParams {
    fn default() -> Self {
        Self {
            tau: 0.05,
            seed_min_confidence: 0.3,
        }
    }
}

/// Greedy group growing.
///
/// Each round seeds a group with the most confident unvisited detection and
/// repeatedly adds the unvisited detection from an unused frame whose summed
/// weighted affinity to the group is largest. Growth stops once that sum,
/// divided by the current group size, falls below `tau`. Rounds continue
/// until no unvisited detection reaches `seed_min_confidence`; whatever is
/// left is reported as unassigned.
///
/// Ties go to the smaller `(frame_id, pose_id)`, so the result does not
/// depend on the order of `poses`.
pub fn greedy_match(poses: &[Pose2D], a: &AffinityMatrix, params: &GreedyParams) -> Result<Partition, MatchingError> {
    let n = a.len();
    let weights = row_weights(poses, a)?;
    let mut visited = vec![false; n];
    let mut groups = Vec::new();
    let mut objective = 0.0;

    loop {
        // Rows are in ascending key order, so the first maximum wins ties.
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if weights[b] >= weights[i] => Some(b),
                _ => Some(i),
            });
        let Some(seed) = seed.filter(|&s| weights[s] >= params.seed_min_confidence) else {
            break;
        };
        visited[seed] = true;
        let mut rows = vec![seed];
        let mut scores = vec![0.0];
        let mut frames = BTreeSet::from([a.keys()[seed].frame_id]);
        let mut support: Vec<f64> = (0..n).map(|j| weights[j] * weights[seed] * a.get(j, seed)).collect();

        loop {
            let candidate = (0..n)
                .filter(|&j| !visited[j] && !frames.contains(&a.keys()[j].frame_id))
                .fold(None, |best: Option<usize>, j| match best {
                    Some(b) if support[b] >= support[j] => Some(b),
                    _ => Some(j),
                });
            let Some(c) = candidate else { break };
            let mean = support[c] / rows.len() as f64;
            if !(support[c] > 0.0) || mean < params.tau {
                break;
            }
            visited[c] = true;
            frames.insert(a.keys()[c].frame_id);
            objective += 2.0 * support[c];
            rows.push(c);
            scores.push(support[c]);
            for (j, s) in support.iter_mut().enumerate() {
                *s += weights[j] * weights[c] * a.get(j, c);
            }
        }

        groups.push(PoseGroup {
            person_id: groups.len(),
            members: rows.iter().map(|&r| a.keys()[r]).collect(),
            member_scores: scores,
        });
    }

    let unassigned = (0..n).filter(|&i| !visited[i]).map(|i| a.keys()[i]).collect();
    Ok(Partition {
        groups,
        unassigned,
        objective,
    })
}
