use super::{row_weights, MatchingError, Partition, PoseGroup};
use crate::affinity::{AffinityMatrix, Pose2D};

/// Bell(10) = 115 975 partitions; beyond this the search gets slow fast.
pub const MAX_EXHAUSTIVE_DETECTIONS: usize = 10;

struct Search<'a> {
    a: &'a AffinityMatrix,
    weights: Vec<f64>,
    labels: Vec<usize>,
    best_labels: Vec<usize>,
    best: f64,
}

impl Search<'_> {
    /// Depth-first walk over restricted growth strings in lexicographic
    /// order. Equal objectives replace the incumbent, so the lexicographically
    /// last optimum wins: among ties it keeps zero-affinity detections apart.
    fn visit(&mut self, row: usize, groups: usize, value: f64) {
        let n = self.labels.len();
        if row == n {
            if value >= self.best {
                self.best = value;
                self.best_labels.clone_from(&self.labels);
            }
            return;
        }
        for g in 0..=groups {
            let mut gain = 0.0;
            let mut conflict = false;
            for prev in 0..row {
                if self.labels[prev] == g {
                    if self.a.same_frame(prev, row) {
                        conflict = true;
                        break;
                    }
                    gain += self.weights[prev] * self.weights[row] * self.a.get(prev, row);
                }
            }
            if conflict {
                continue;
            }
            self.labels[row] = g;
            self.visit(row + 1, groups.max(g + 1), value + 2.0 * gain);
        }
    }
}

/// Exact maximizer of the within-group weighted affinity by enumerating every
/// frame-consistent set partition.
pub fn exhaustive_match(poses: &[Pose2D], a: &AffinityMatrix) -> Result<Partition, MatchingError> {
    let n = a.len();
    if n > MAX_EXHAUSTIVE_DETECTIONS {
        return Err(MatchingError::InstanceTooLarge {
            got: n,
            limit: MAX_EXHAUSTIVE_DETECTIONS,
        });
    }
    if n == 0 {
        return Ok(Partition::empty());
    }
    let mut search = Search {
        a,
        weights: row_weights(poses, a)?,
        labels: vec![0; n],
        best_labels: Vec::new(),
        best: f64::NEG_INFINITY,
    };
    search.visit(0, 0, 0.0);

    let group_count = search.best_labels.iter().max().map_or(0, |m| m + 1);
    let mut groups: Vec<PoseGroup> = (0..group_count)
        .map(|g| PoseGroup {
            person_id: g,
            members: Vec::new(),
            member_scores: Vec::new(),
        })
        .collect();
    for (row, &g) in search.best_labels.iter().enumerate() {
        let group = &mut groups[g];
        let score = group
            .members
            .iter()
            .map(|k| {
                let prev = a.index_of(k).expect("member indexed by matrix");
                search.weights[prev] * search.weights[row] * a.get(prev, row)
            })
            .sum();
        group.members.push(a.keys()[row]);
        group.member_scores.push(score);
    }
    Ok(Partition {
        groups,
        unassigned: Vec::new(),
        objective: search.best,
    })
}
