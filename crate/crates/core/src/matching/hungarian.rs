use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{group_objective, row_weights, MatchingError, Partition, PoseGroup};
use crate::affinity::{AffinityMatrix, Pose2D};

/// Minimum-cost assignment of rows to columns (Kuhn-Munkres with row/column
/// potentials, O(n²m)). Every row is assigned when `rows ≤ cols`; otherwise
/// every column is, and the surplus rows get `None`.
pub fn linear_assignment(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let by_col = linear_assignment(&cost.transpose());
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }

    // 1-based arrays; column 0 is a virtual start node.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut col_owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if col_owner[j] != 0 {
            out[col_owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Sequential tracking baseline: detections of consecutive frames are
/// linked by an optimal assignment with cost `1 − A`, and links are chained
/// into tracks. Zero-affinity links are refused, and a detection left
/// without a link starts a new track. A track interrupted for one frame
/// cannot resume.
pub fn hungarian_chain_match(poses: &[Pose2D], a: &AffinityMatrix) -> Result<Partition, MatchingError> {
    let weights = row_weights(poses, a)?;
    let mut frames: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (row, k) in a.keys().iter().enumerate() {
        frames.entry(k.frame_id).or_default().push(row);
    }

    let mut tracks: Vec<Vec<usize>> = Vec::new();
    let mut scores: Vec<Vec<f64>> = Vec::new();
    let mut track_of = vec![usize::MAX; a.len()];
    let mut previous: Option<&Vec<usize>> = None;
    for rows in frames.values() {
        let links: Vec<Option<usize>> = match previous {
            Some(prev) => {
                let cost = DMatrix::from_fn(prev.len(), rows.len(), |i, j| 1.0 - a.get(prev[i], rows[j]));
                let assignment = linear_assignment(&cost);
                let mut links = vec![None; rows.len()];
                for (i, j) in assignment.into_iter().enumerate() {
                    if let Some(j) = j {
                        if a.get(prev[i], rows[j]) > 0.0 {
                            links[j] = Some(prev[i]);
                        }
                    }
                }
                links
            }
            None => vec![None; rows.len()],
        };
        for (&row, link) in rows.iter().zip(links) {
            match link {
                Some(prev_row) => {
                    let t = track_of[prev_row];
                    tracks[t].push(row);
                    scores[t].push(weights[prev_row] * weights[row] * a.get(prev_row, row));
                    track_of[row] = t;
                }
                None => {
                    track_of[row] = tracks.len();
                    tracks.push(vec![row]);
                    scores.push(vec![0.0]);
                }
            }
        }
        previous = Some(rows);
    }

    let objective = tracks.iter().map(|t| group_objective(t, &weights, a)).sum();
    let groups = tracks
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(person_id, (rows, member_scores))| PoseGroup {
            person_id,
            members: rows.iter().map(|&r| a.keys()[r]).collect(),
            member_scores,
        })
        .collect();
    Ok(Partition {
        groups,
        unassigned: Vec::new(),
        objective,
    })
}
