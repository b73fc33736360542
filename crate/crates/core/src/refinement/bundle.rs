use nalgebra::{DMatrix, DVector, Vector3};

use super::energy::{gather, huber, huber_weight, JointObservation};
use super::gmm::{flatten, GmmPrior};
use super::RefinementError;
use crate::geometry::project_with_jacobian;
use crate::matching::PoseGroup;
use crate::reconstruction::Skeleton3D;
use crate::scene::ObservedScene;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleParams {
    /// Weight of the pose prior.
    pub lambda: f64,
    pub robust_delta_px: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the energy by less than this
    /// fraction.
    pub relative_tolerance: f64,
}

impl Default for BundleParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            robust_delta_px: 10.0,
            max_iterations: 200,
            relative_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BundleOutcome {
    pub skeleton: Skeleton3D,
    /// Energy before the first step and after every accepted step.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the pose prior contributed.
    pub prior_used: bool,
}

/// The refinement energy of one skeleton as a function of its valid joint
/// positions, flattened in joint order. Invalid joints stay out of the
/// reprojection term; when a prior is active they are imputed once and held
/// fixed.
pub struct BundleProblem<'a> {
    observations: Vec<JointObservation<'a>>,
    free: Vec<usize>,
    full: Vec<Vector3<f64>>,
    prior: Option<&'a GmmPrior>,
    lambda: f64,
    delta: f64,
}

impl<'a> BundleProblem<'a> {
    pub fn new(
        skeleton: &Skeleton3D,
        group: &PoseGroup,
        scene: &ObservedScene<'a>,
        gmm: Option<&'a GmmPrior>,
        params: &BundleParams,
    ) -> Result<Self, RefinementError> {
        if !(params.lambda.is_finite() && params.lambda >= 0.0) {
            return Err(RefinementError::InvalidLambda(params.lambda));
        }
        let positions = skeleton.positions();
        let free: Vec<usize> = (0..positions.len()).filter(|&c| positions[c].is_some()).collect();
        if free.is_empty() {
            return Err(RefinementError::NothingToRefine);
        }
        let observations = gather(&skeleton.joint_valid(), group, scene)?;

        let mut prior = None;
        let mut full: Vec<Vector3<f64>> = positions.iter().map(|p| p.unwrap_or_else(Vector3::zeros)).collect();
        if let Some(gmm) = gmm.filter(|_| params.lambda > 0.0) {
            match gmm.impute(&positions) {
                Ok(filled) => {
                    full = filled;
                    prior = Some(gmm);
                }
                Err(RefinementError::Normalization(reason)) => {
                    log::debug!("person {}: pose prior skipped, {reason}", skeleton.person_id);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Self {
            observations,
            free,
            full,
            prior,
            lambda: params.lambda,
            delta: params.robust_delta_px,
        })
    }

    pub fn prior_active(&self) -> bool {
        self.prior.is_some()
    }

    /// Indices of the joints being optimized.
    pub fn free_joints(&self) -> &[usize] {
        &self.free
    }

    pub fn parameters(&self) -> DVector<f64> {
        flatten(self.free.iter().map(|&c| self.full[c]))
    }

    fn joints_at(&self, p: &DVector<f64>) -> Vec<Vector3<f64>> {
        let mut joints = self.full.clone();
        for (i, &c) in self.free.iter().enumerate() {
            joints[c] = Vector3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
        }
        joints
    }

    /// Energy, gradient and Gauss-Newton curvature, or `None` where the
    /// energy is infinite.
    fn terms(&self, p: &DVector<f64>, derivatives: bool) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = p.len();
        let mut slot = vec![usize::MAX; self.full.len()];
        for (i, &c) in self.free.iter().enumerate() {
            slot[c] = i;
        }
        let joints = self.joints_at(p);
        let mut energy = 0.0;
        let (mut grad, mut hess) = if derivatives {
            (DVector::zeros(n), DMatrix::zeros(n, n))
        } else {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        };

        for o in &self.observations {
            let (proj, jac) = project_with_jacobian(&joints[o.joint], o.camera).ok()?;
            let e = proj - o.pixel;
            let r = e.norm();
            energy += o.weight * huber(r, self.delta);
            if derivatives {
                let w = o.weight * huber_weight(r, self.delta);
                let k = 3 * slot[o.joint];
                grad.fixed_rows_mut::<3>(k).axpy(w, &(jac.transpose() * e), 1.0);
                let block = jac.transpose() * jac * w;
                let mut view = hess.fixed_view_mut::<3, 3>(k, k);
                view += block;
            }
        }

        if let Some(gmm) = self.prior {
            let norm = gmm.normalization();
            let y = norm.normalize(&joints).ok()?;
            let (e_p, g_y, curvature) = gmm.energy_terms(&y);
            energy += self.lambda * e_p;
            if derivatives {
                let jac = norm.jacobian(&joints).ok()?;
                let cols: Vec<usize> = self.free.iter().flat_map(|&c| [3 * c, 3 * c + 1, 3 * c + 2]).collect();
                let jf = jac.select_columns(&cols);
                grad += self.lambda * (jf.transpose() * g_y);
                hess += self.lambda * (jf.transpose() * curvature * &jf);
            }
        }
        energy.is_finite().then_some((energy, grad, hess))
    }

    /// `E_R + λ E_P` at `p`; `+∞` where undefined.
    pub fn energy(&self, p: &DVector<f64>) -> f64 {
        self.terms(p, false).map_or(f64::INFINITY, |t| t.0)
    }

    /// Analytic gradient at `p`, if the energy is finite there.
    pub fn gradient(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
        self.terms(p, true).map(|t| t.1)
    }
}

/// Damped Gauss-Newton minimization of `Σ E_R + λ E_P` over the valid
/// joints. A step is kept only if it lowers the energy; otherwise the
/// damping grows and the step is retried.
pub fn bundle_adjust(
    x0: &Skeleton3D,
    group: &PoseGroup,
    scene: &ObservedScene<'_>,
    gmm: Option<&GmmPrior>,
    params: &BundleParams,
) -> Result<BundleOutcome, RefinementError> {
    let problem = BundleProblem::new(x0, group, scene, gmm, params)?;
    let mut p = problem.parameters();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    if let Some((mut energy, mut grad, mut hess)) = problem.terms(&p, true) {
        trace.push(energy);
        let mut damping = 1e-3;
        while iterations < params.max_iterations {
            iterations += 1;
            if energy == 0.0 || grad.amax() == 0.0 {
                converged = true;
                break;
            }
            let scale = hess.diagonal().amax().max(1e-12);
            let mut accepted = false;
            while damping < 1e16 {
                let mut a = hess.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += damping * (hess[(i, i)] + 1e-9 * scale);
                }
                let Some(step) = a.cholesky().map(|c| c.solve(&grad)) else {
                    damping *= 10.0;
                    continue;
                };
                let candidate = &p - step;
                match problem.terms(&candidate, true) {
                    Some((e, g, h)) if e < energy => {
                        let relative = (energy - e) / energy.abs().max(1e-300);
                        p = candidate;
                        (energy, grad, hess) = (e, g, h);
                        trace.push(energy);
                        damping = (damping / 10.0).max(1e-12);
                        accepted = true;
                        converged = relative < params.relative_tolerance;
                        break;
                    }
                    _ => damping *= 10.0,
                }
            }
            if !accepted {
                converged = true;
            }
            if converged {
                break;
            }
        }
    } else {
        trace.push(f64::INFINITY);
    }

    let mut skeleton = x0.clone();
    let joints = problem.joints_at(&p);
    for &c in &problem.free {
        if let Some(point) = skeleton.joints[c].as_mut() {
            point.position = joints[c];
        }
    }
    update_residuals(&mut skeleton, group, scene)?;
    Ok(BundleOutcome {
        skeleton,
        energy_trace: trace,
        iterations,
        converged,
        prior_used: problem.prior_active(),
    })
}

/// Recomputes each valid joint's mean reprojection distance over its inlier
/// views.
fn update_residuals(skeleton: &mut Skeleton3D, group: &PoseGroup, scene: &ObservedScene<'_>) -> Result<(), RefinementError> {
    for (c, joint) in skeleton.joints.iter_mut().enumerate() {
        let Some(point) = joint.as_mut() else { continue };
        let (mut sum, mut count) = (0.0, 0usize);
        for key in group.members.iter().filter(|k| point.inlier_views.contains(&k.frame_id)) {
            let pose = scene.pose(key)?;
            if pose.is_visible(c) {
                let cam = scene.camera(key.frame_id)?;
                if let Ok((proj, _)) = project_with_jacobian(&point.position, cam) {
                    sum += (proj - pose.pixel(c, cam)).norm();
                    count += 1;
                }
            }
        }
        if count > 0 {
            point.residual = sum / count as f64;
        }
    }
    skeleton.refresh_summary();
    Ok(())
}
