//! Gaussian-mixture pose prior over normalized skeletons.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RefinementError;
use crate::skeleton;

/// Floor on covariance eigenvalues after regularization.
pub const MIN_COVARIANCE_EIGENVALUE: f64 = 1e-6;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Maps a world-frame skeleton to a placement- and size-free frame: the
/// midpoint of `root_joints` moves to the origin and the mean length of
/// `scale_edges` becomes 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseNormalization {
    pub root_joints: Vec<usize>,
    pub scale_edges: Vec<(usize, usize)>,
}

impl Default for PoseNormalization {
    fn default() -> Self {
        Self {
            root_joints: vec![skeleton::LEFT_HIP, skeleton::RIGHT_HIP],
            scale_edges: skeleton::bone_edges(),
        }
    }
}

impl PoseNormalization {
    pub fn validate(&self, num_joints: usize) -> Result<(), RefinementError> {
        let bad = |m: String| Err(RefinementError::InvalidPrior(m));
        if self.root_joints.is_empty() || self.scale_edges.is_empty() {
            return bad("normalization needs root joints and scale edges".into());
        }
        if let Some(j) = self.root_joints.iter().find(|&&j| j >= num_joints) {
            return bad(format!("root joint {j} out of range"));
        }
        if let Some(e) = self.scale_edges.iter().find(|(a, b)| *a >= num_joints || *b >= num_joints || a == b) {
            return bad(format!("scale edge {e:?} is invalid"));
        }
        Ok(())
    }

    fn is_root(&self, joint: usize) -> bool {
        self.root_joints.contains(&joint)
    }

    /// Root and scale from whichever joints are known. Needs every root
    /// joint and at least one scale edge.
    pub fn root_and_scale(&self, joints: &[Option<Vector3<f64>>]) -> Result<(Vector3<f64>, f64), RefinementError> {
        let mut root = Vector3::zeros();
        for &j in &self.root_joints {
            root += joints
                .get(j)
                .copied()
                .flatten()
                .ok_or_else(|| RefinementError::Normalization(format!("root joint {j} is unknown")))?;
        }
        root /= self.root_joints.len() as f64;
        let lengths: Vec<f64> = self
            .scale_edges
            .iter()
            .filter_map(|&(a, b)| match (joints.get(a).copied().flatten(), joints.get(b).copied().flatten()) {
                (Some(pa), Some(pb)) => Some((pa - pb).norm()),
                _ => None,
            })
            .collect();
        if lengths.is_empty() {
            return Err(RefinementError::Normalization("no scale edge is known".into()));
        }
        let scale = lengths.iter().sum::<f64>() / lengths.len() as f64;
        if !(scale > 1e-12) {
            return Err(RefinementError::Normalization(format!("scale {scale} is degenerate")));
        }
        Ok((root, scale))
    }

    /// Flattened normalized pose `[x₀ y₀ z₀ x₁ …]`.
    pub fn normalize(&self, joints: &[Vector3<f64>]) -> Result<DVector<f64>, RefinementError> {
        let known: Vec<Option<Vector3<f64>>> = joints.iter().copied().map(Some).collect();
        let (root, scale) = self.root_and_scale(&known)?;
        Ok(flatten(joints.iter().map(|p| (p - root) / scale)))
    }

    /// Jacobian of [`normalize`](Self::normalize) with respect to the
    /// flattened joints, `3C × 3C`.
    pub fn jacobian(&self, joints: &[Vector3<f64>]) -> Result<DMatrix<f64>, RefinementError> {
        let c = joints.len();
        let known: Vec<Option<Vector3<f64>>> = joints.iter().copied().map(Some).collect();
        let (root, scale) = self.root_and_scale(&known)?;
        let inv_root = 1.0 / self.root_joints.len() as f64;

        // ∂s/∂X_k, one 3-vector per joint.
        let mut ds = vec![Vector3::zeros(); c];
        let edges = self.scale_edges.len() as f64;
        for &(a, b) in &self.scale_edges {
            let d = joints[a] - joints[b];
            let len = d.norm();
            if len > 0.0 {
                ds[a] += d / (len * edges);
                ds[b] -= d / (len * edges);
            }
        }

        let mut jac = DMatrix::zeros(3 * c, 3 * c);
        for (row, x) in joints.iter().enumerate() {
            let y = (x - root) / scale;
            for col in 0..c {
                let mut diag = if row == col { 1.0 } else { 0.0 };
                if self.is_root(col) {
                    diag -= inv_root;
                }
                let outer = y * ds[col].transpose() / scale;
                for i in 0..3 {
                    for j in 0..3 {
                        let identity = if i == j { diag / scale } else { 0.0 };
                        jac[(3 * row + i, 3 * col + j)] = identity - outer[(i, j)];
                    }
                }
            }
        }
        Ok(jac)
    }
}

pub(crate) fn flatten<I: IntoIterator<Item = Vector3<f64>>>(points: I) -> DVector<f64> {
    let v: Vec<f64> = points.into_iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    DVector::from_vec(v)
}

#[cfg(test)]
pub(crate) fn unflatten(v: &DVector<f64>) -> Vec<Vector3<f64>> {
    v.as_slice().chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

#[derive(Debug, Clone)]
pub struct GmmComponent {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `log w − ½(d log 2π + log |Σ|)`.
    log_scale: f64,
}

impl GmmComponent {
    fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, RefinementError> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(RefinementError::InvalidPrior(format!(
                "covariance is {:?}, mean has length {d}",
                covariance.shape()
            )));
        }
        let chol = Cholesky::new(covariance.clone())
            .ok_or_else(|| RefinementError::InvalidPrior("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            weight,
            log_scale: weight.ln() - 0.5 * (d as f64 * LOG_2PI + log_det),
            mean,
            covariance,
            chol,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `log(w · N(y | μ, Σ))`.
    fn weighted_log_density(&self, y: &DVector<f64>) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&(y - &self.mean))
            .expect("Cholesky factor has a positive diagonal");
        self.log_scale - 0.5 * z.norm_squared()
    }

    fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// A mixture of Gaussians over normalized flattened poses.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    components: Vec<GmmComponent>,
    normalization: PoseNormalization,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmPrior {
    /// Weights must lie in `(0, 1]` and sum to 1 within 1e-9; covariances
    /// must be symmetric positive definite.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        normalization: PoseNormalization,
    ) -> Result<Self, RefinementError> {
        let bad = |m: String| Err(RefinementError::InvalidPrior(m));
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len() {
            return bad("weights, means and covariances must be non-empty and equally long".into());
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return bad(format!("weight {w} is outside (0, 1]"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}"));
        }
        let dim = means[0].len();
        if dim == 0 || !dim.is_multiple_of(3) || means.iter().any(|m| m.len() != dim) {
            return bad("means must share a non-zero length divisible by 3".into());
        }
        normalization.validate(dim / 3)?;
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covariances)
            .map(|((w, m), s)| {
                let asym = (&s - s.transpose()).amax();
                if asym > 1e-9 * s.amax().max(1.0) {
                    return Err(RefinementError::InvalidPrior(format!("covariance is not symmetric (off by {asym})")));
                }
                GmmComponent::new(w, m, s)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            components,
            normalization,
        })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn normalization(&self) -> &PoseNormalization {
        &self.normalization
    }

    /// Length of the flattened pose vector.
    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn num_joints(&self) -> usize {
        self.dim() / 3
    }

    fn weighted_log_densities(&self, y: &DVector<f64>) -> Vec<f64> {
        self.components.iter().map(|c| c.weighted_log_density(y)).collect()
    }

    /// `log Σ_l w_l N(y | μ_l, Σ_l)` of a normalized pose.
    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        log_sum_exp(&self.weighted_log_densities(y))
    }

    /// Posterior probability of each component given `y`.
    pub fn responsibilities(&self, y: &DVector<f64>) -> Vec<f64> {
        let logs = self.weighted_log_densities(y);
        let total = log_sum_exp(&logs);
        logs.iter().map(|l| (l - total).exp()).collect()
    }

    /// Energy `−log p(y)` of a normalized pose, its gradient, and the
    /// responsibility-weighted precision `Σ_l r_l Σ_l⁻¹` used as a
    /// curvature estimate.
    pub fn energy_terms(&self, y: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let logs = self.weighted_log_densities(y);
        let total = log_sum_exp(&logs);
        let d = y.len();
        let mut grad = DVector::zeros(d);
        let mut curvature = DMatrix::zeros(d, d);
        for (c, l) in self.components.iter().zip(&logs) {
            let r = (l - total).exp();
            if r < 1e-300 {
                continue;
            }
            let precision = c.precision();
            grad += r * (&precision * (y - &c.mean));
            curvature += r * precision;
        }
        (-total, grad, curvature)
    }

    /// Fills unknown joints with their conditional mean under the component
    /// most responsible for the known ones. Known joints are returned
    /// unchanged.
    pub fn impute(&self, joints: &[Option<Vector3<f64>>]) -> Result<Vec<Vector3<f64>>, RefinementError> {
        if joints.len() != self.num_joints() {
            return Err(RefinementError::InvalidPrior(format!(
                "prior covers {} joints, skeleton has {}",
                self.num_joints(),
                joints.len()
            )));
        }
        if joints.iter().all(Option::is_some) {
            return Ok(joints.iter().map(|j| j.unwrap()).collect());
        }
        let (root, scale) = self.normalization.root_and_scale(joints)?;
        let known: Vec<usize> = (0..joints.len())
            .filter(|&c| joints[c].is_some())
            .flat_map(|c| [3 * c, 3 * c + 1, 3 * c + 2])
            .collect();
        let unknown: Vec<usize> = (0..joints.len())
            .filter(|&c| joints[c].is_none())
            .flat_map(|c| [3 * c, 3 * c + 1, 3 * c + 2])
            .collect();
        let y_known = DVector::from_iterator(
            known.len(),
            joints.iter().flatten().flat_map(|p| {
                let q = (p - root) / scale;
                [q.x, q.y, q.z]
            }),
        );

        let sub = |m: &DMatrix<f64>, rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
        };
        let pick = |v: &DVector<f64>, idx: &[usize]| DVector::from_fn(idx.len(), |i, _| v[idx[i]]);

        // Marginal responsibilities over the known coordinates.
        let mut best: Option<(f64, usize, Cholesky<f64, Dyn>)> = None;
        for (l, c) in self.components.iter().enumerate() {
            let s_kk = sub(&c.covariance, &known, &known);
            let chol = Cholesky::new(s_kk)
                .ok_or_else(|| RefinementError::InvalidPrior("marginal covariance is not positive definite".into()))?;
            let diff = &y_known - pick(&c.mean, &known);
            let z = chol.l_dirty().solve_lower_triangular(&diff).expect("positive diagonal");
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let score = c.weight.ln() - 0.5 * (log_det + z.norm_squared());
            if best.as_ref().is_none_or(|(s, ..)| score > *s) {
                best = Some((score, l, chol));
            }
        }
        let (_, l, chol) = best.expect("at least one component");
        let c = &self.components[l];
        let diff = &y_known - pick(&c.mean, &known);
        let cond = pick(&c.mean, &unknown) + sub(&c.covariance, &unknown, &known) * chol.solve(&diff);

        let mut out = Vec::with_capacity(joints.len());
        let mut next = 0;
        for j in joints {
            match j {
                Some(p) => out.push(*p),
                None => {
                    let q = Vector3::new(cond[next], cond[next + 1], cond[next + 2]);
                    out.push(root + scale * q);
                    next += 3;
                }
            }
        }
        Ok(out)
    }
}

/// `E_P(X) = −log Σ_l w_l N(n(X) | μ_l, Σ_l)`, with `n` the prior's
/// normalization.
pub fn pose_prior_energy(joints: &[Vector3<f64>], gmm: &GmmPrior) -> Result<f64, RefinementError> {
    if joints.len() != gmm.num_joints() {
        return Err(RefinementError::InvalidPrior(format!(
            "prior covers {} joints, pose has {}",
            gmm.num_joints(),
            joints.len()
        )));
    }
    let y = gmm.normalization.normalize(joints)?;
    Ok(-gmm.log_density(&y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFitParams {
    pub components: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// EM stops once the objective improves by less than this fraction.
    pub tolerance: f64,
    pub normalization: PoseNormalization,
}

impl Default for GmmFitParams {
    fn default() -> Self {
        Self {
            components: 8,
            seed: 0,
            max_iterations: 100,
            tolerance: 1e-8,
            normalization: PoseNormalization::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub prior: GmmPrior,
    /// Objective after initialization and after every EM iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

pub fn fit_gmm(corpus: &[Vec<Vector3<f64>>], components: usize, seed: u64) -> Result<GmmFit, RefinementError> {
    fit_gmm_with(
        corpus,
        &GmmFitParams {
            components,
            seed,
            ..GmmFitParams::default()
        },
    )
}

/// Expectation-maximization from a k-means++ start.
///
/// Covariances carry the penalty `−(α/2) tr(Σ_l⁻¹)` with `α = 1e-6 · N`,
/// whose maximizer is `Σ_l = (S_l + α I) / N_l`, so every eigenvalue stays
/// at or above [`MIN_COVARIANCE_EIGENVALUE`]. The traced objective is the
/// log-likelihood plus this penalty and never decreases.
pub fn fit_gmm_with(corpus: &[Vec<Vector3<f64>>], params: &GmmFitParams) -> Result<GmmFit, RefinementError> {
    let l = params.components;
    if l == 0 {
        return Err(RefinementError::InvalidPrior("at least one component is needed".into()));
    }
    let required = 10 * l;
    if corpus.len() < required {
        return Err(RefinementError::CorpusTooSmall {
            got: corpus.len(),
            required,
        });
    }
    let num_joints = corpus[0].len();
    if corpus.iter().any(|p| p.len() != num_joints) {
        return Err(RefinementError::DegenerateCorpus("poses differ in joint count".into()));
    }
    params.normalization.validate(num_joints)?;
    let data: Vec<DVector<f64>> = corpus
        .iter()
        .map(|p| params.normalization.normalize(p))
        .collect::<Result<_, _>>()?;
    let n = data.len();
    let d = data[0].len();
    let alpha = MIN_COVARIANCE_EIGENVALUE * n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let labels = kmeans_plus_plus(&data, l, &mut rng)?;

    // Hard initial responsibilities from the clustering.
    let mut resp = DMatrix::zeros(n, l);
    for (i, &k) in labels.iter().enumerate() {
        resp[(i, k)] = 1.0;
    }
    let mut prior = m_step(&data, &resp, alpha, &params.normalization)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let objective = e_step(&prior, &data, &mut resp, alpha);
        if !objective.is_finite() {
            return Err(RefinementError::DegenerateCorpus("objective is not finite".into()));
        }
        let done = trace
            .last()
            .is_some_and(|prev: &f64| (objective - prev).abs() <= params.tolerance * prev.abs().max(1.0));
        trace.push(objective);
        if done || iterations >= params.max_iterations {
            break;
        }
        prior = m_step(&data, &resp, alpha, &params.normalization)?;
        iterations += 1;
    }
    debug_assert_eq!(d, prior.dim());
    Ok(GmmFit {
        prior,
        objective_trace: trace,
        iterations,
    })
}

/// Fills `resp` and returns the penalized log-likelihood of `prior`.
fn e_step(prior: &GmmPrior, data: &[DVector<f64>], resp: &mut DMatrix<f64>, alpha: f64) -> f64 {
    let mut ll = 0.0;
    for (i, y) in data.iter().enumerate() {
        let logs = prior.weighted_log_densities(y);
        let total = log_sum_exp(&logs);
        ll += total;
        for (k, lk) in logs.iter().enumerate() {
            resp[(i, k)] = (lk - total).exp();
        }
    }
    let penalty: f64 = prior.components.iter().map(|c| c.precision().trace()).sum();
    ll - 0.5 * alpha * penalty
}

fn m_step(
    data: &[DVector<f64>],
    resp: &DMatrix<f64>,
    alpha: f64,
    normalization: &PoseNormalization,
) -> Result<GmmPrior, RefinementError> {
    let (n, l) = resp.shape();
    let d = data[0].len();
    let mut weights = Vec::with_capacity(l);
    let mut means = Vec::with_capacity(l);
    let mut covariances = Vec::with_capacity(l);
    for k in 0..l {
        let nk: f64 = resp.column(k).sum();
        if !(nk > 1e-10) {
            return Err(RefinementError::DegenerateCorpus(format!("component {k} lost all support")));
        }
        let mut mean = DVector::zeros(d);
        for (i, y) in data.iter().enumerate() {
            mean.axpy(resp[(i, k)], y, 1.0);
        }
        mean /= nk;
        let mut scatter = DMatrix::zeros(d, d);
        for (i, y) in data.iter().enumerate() {
            let r = resp[(i, k)];
            if r > 0.0 {
                let diff = y - &mean;
                scatter.ger(r, &diff, &diff, 1.0);
            }
        }
        for j in 0..d {
            scatter[(j, j)] += alpha;
        }
        scatter /= nk;
        // Exact symmetry keeps the prior constructor's check trivial.
        let cov = (&scatter + scatter.transpose()) * 0.5;
        weights.push(nk / n as f64);
        means.push(mean);
        covariances.push(cov);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GmmPrior::new(weights, means, covariances, normalization.clone())
}

/// k-means++ seeding followed by Lloyd iterations; returns a cluster label
/// per sample.
fn kmeans_plus_plus(data: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, RefinementError> {
    let n = data.len();
    let mut centers: Vec<DVector<f64>> = vec![data[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = data.iter().map(|y| (y - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        if !(total > 0.0) {
            return Err(RefinementError::DegenerateCorpus(format!(
                "fewer than {k} distinct normalized poses"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in dist.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        centers.push(data[pick].clone());
        for (i, y) in data.iter().enumerate() {
            dist[i] = dist[i].min((y - &centers[centers.len() - 1]).norm_squared());
        }
    }

    let mut labels = vec![0; n];
    for _ in 0..20 {
        let mut changed = false;
        for (i, y) in data.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| (y - &centers[a]).norm_squared().total_cmp(&(y - &centers[b]).norm_squared()))
                .expect("k > 0");
            changed |= labels[i] != best;
            labels[i] = best;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = data.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(y, _)| y).collect();
            if !members.is_empty() {
                *center = members.iter().fold(DVector::zeros(center.len()), |acc, y| acc + *y) / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    // An empty cluster would leave its component without support.
    for c in 0..k {
        if !labels.contains(&c) {
            return Err(RefinementError::DegenerateCorpus(format!("cluster {c} is empty")));
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sample_pose_corpus;

    fn identity_prior(mean: DVector<f64>) -> GmmPrior {
        let d = mean.len();
        GmmPrior::new(vec![1.0], vec![mean], vec![DMatrix::identity(d, d)], PoseNormalization::default()).unwrap()
    }

    fn normalized_template() -> Vec<Vector3<f64>> {
        let n = PoseNormalization::default();
        unflatten(&n.normalize(&skeleton::template_pose()).unwrap())
    }

    #[test]
    fn energy_at_the_mean_is_the_log_normalizer() {
        let x = normalized_template();
        let prior = identity_prior(flatten(x.iter().copied()));
        let e = pose_prior_energy(&x, &prior).unwrap();
        assert!((e - 51.0 / 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-10);
    }

    #[test]
    fn unit_offset_adds_one_half() {
        let x = normalized_template();
        let prior = identity_prior(flatten(x.iter().copied()));
        let mut moved = x.clone();
        // The nose touches neither the root nor any scale edge.
        moved[skeleton::NOSE].x += 1.0;
        let delta = pose_prior_energy(&moved, &prior).unwrap() - pose_prior_energy(&x, &prior).unwrap();
        assert!((delta - 0.5).abs() < 1e-10);
    }

    #[test]
    fn symmetric_mixture_is_reflection_symmetric() {
        let x = normalized_template();
        let mid = flatten(x.iter().copied());
        let mut offset = DVector::zeros(51);
        offset[0] = 0.3;
        let prior = GmmPrior::new(
            vec![0.5, 0.5],
            vec![&mid + &offset, &mid - &offset],
            vec![DMatrix::identity(51, 51), DMatrix::identity(51, 51)],
            PoseNormalization::default(),
        )
        .unwrap();
        let mut probe = DVector::zeros(51);
        probe[0] = 0.17;
        probe[4] = -0.05;
        let a = prior.log_density(&(&mid + &probe));
        let b = prior.log_density(&(&mid - &probe));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_idempotent() {
        let n = PoseNormalization::default();
        let pose: Vec<Vector3<f64>> = skeleton::template_pose().iter().map(|p| p * 3.0 + Vector3::new(1.0, 2.0, -4.0)).collect();
        let once = n.normalize(&pose).unwrap();
        let twice = n.normalize(&unflatten(&once)).unwrap();
        assert!((once - twice).amax() < 1e-12);
    }

    #[test]
    fn normalization_jacobian_matches_differences() {
        let n = PoseNormalization::default();
        let mut pose = skeleton::template_pose();
        pose[3].z += 0.07;
        pose[9].x -= 0.1;
        let jac = n.jacobian(&pose).unwrap();
        let h = 1e-6;
        for col in [0, 16, 33, 35, 37, 50] {
            let (c, i) = (col / 3, col % 3);
            let mut plus = pose.clone();
            let mut minus = pose.clone();
            plus[c][i] += h;
            minus[c][i] -= h;
            let fd = (n.normalize(&plus).unwrap() - n.normalize(&minus).unwrap()) / (2.0 * h);
            assert!((fd - jac.column(col)).amax() < 1e-6, "column {col}");
        }
    }

    #[test]
    fn rejects_bad_priors() {
        let mean = DVector::zeros(51);
        let n = PoseNormalization::default();
        let not_pd = DMatrix::from_diagonal_element(51, 51, -1.0);
        assert!(GmmPrior::new(vec![1.0], vec![mean.clone()], vec![not_pd], n.clone()).is_err());
        let eye = DMatrix::identity(51, 51);
        assert!(GmmPrior::new(vec![0.6], vec![mean], vec![eye], n).is_err());
    }

    #[test]
    fn single_component_recovers_sample_mean() {
        let corpus = sample_pose_corpus(200, 0.05, 4);
        let fit = fit_gmm(&corpus, 1, 0).unwrap();
        let n = PoseNormalization::default();
        let mean = corpus.iter().map(|p| n.normalize(p).unwrap()).fold(DVector::zeros(51), |a, y| a + y) / 200.0;
        assert!((fit.prior.components()[0].mean() - mean).amax() < 1e-9);
    }

    #[test]
    fn em_objective_is_monotone_and_covariances_are_floored() {
        let corpus = sample_pose_corpus(200, 0.05, 9);
        let fit = fit_gmm(&corpus, 4, 1).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        for c in fit.prior.components() {
            let min_eig = c.covariance().clone().symmetric_eigenvalues().min();
            assert!(min_eig >= MIN_COVARIANCE_EIGENVALUE * (1.0 - 1e-6), "{min_eig}");
        }
        let again = fit_gmm(&corpus, 4, 1).unwrap();
        assert_eq!(fit.objective_trace, again.objective_trace);
    }

    #[test]
    fn degenerate_corpora_are_rejected() {
        let corpus = vec![skeleton::template_pose(); 40];
        assert!(matches!(fit_gmm(&corpus, 2, 0), Err(RefinementError::DegenerateCorpus(_))));
        assert!(matches!(
            fit_gmm(&corpus[..15], 2, 0),
            Err(RefinementError::CorpusTooSmall { got: 15, required: 20 })
        ));
    }

    #[test]
    fn imputation_keeps_known_joints_and_fills_the_rest() {
        let corpus = sample_pose_corpus(200, 0.03, 2);
        let fit = fit_gmm(&corpus, 2, 0).unwrap();
        let truth = &corpus[0];
        let mut partial: Vec<Option<Vector3<f64>>> = truth.iter().copied().map(Some).collect();
        partial[9] = None;
        partial[0] = None;
        let filled = fit.prior.impute(&partial).unwrap();
        for c in 0..17 {
            if let Some(p) = partial[c] {
                assert_eq!(filled[c], p);
            }
        }
        assert!((filled[9] - truth[9]).norm() < 0.3);
        assert!((filled[0] - truth[0]).norm() < 0.3);
    }
}
