use std::collections::BTreeSet;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{project, CameraView, GeometryError};

/// One 2D sighting of a point: the camera, the pixel, and a weight in `[0,1]`
/// scaling its rows in the linear system.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub camera: &'a CameraView,
    pub pixel: Vector2<f64>,
    pub weight: f64,
}

impl<'a> Observation<'a> {
    pub fn new(camera: &'a CameraView, pixel: Vector2<f64>, weight: f64) -> Self {
        Self { camera, pixel, weight }
    }

    pub fn frame_id(&self) -> u32 {
        self.camera.frame_id()
    }

    /// Pixel distance between `point`'s projection and this observation.
    pub fn reprojection_distance(&self, point: &Vector3<f64>) -> Result<f64, GeometryError> {
        Ok((project(point, self.camera)? - self.pixel).norm())
    }
}

/// A triangulated point with its quality statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Point3D {
    pub position: Vector3<f64>,
    /// Mean reprojection distance over `inlier_views`, in pixels.
    pub residual: f64,
    pub inlier_views: BTreeSet<u32>,
    /// Largest angle between any two observed viewing rays, in radians.
    pub parallax: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub min_parallax_rad: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_threshold_px: 10.0,
            min_inliers: 2,
            min_parallax_rad: 1.0_f64.to_radians(),
            seed: 0,
        }
    }
}

/// Largest pairwise angle between the observed viewing rays.
pub fn max_parallax(observations: &[Observation<'_>]) -> f64 {
    let bearings: Vec<_> = observations
        .iter()
        .map(|o| o.camera.bearing(&o.pixel))
        .collect();
    let mut best = 0.0_f64;
    for (i, a) in bearings.iter().enumerate() {
        for b in &bearings[i + 1..] {
            // atan2 of cross/dot stays accurate near 0 and π.
            let angle = a.cross(b).norm().atan2(a.dot(b));
            best = best.max(angle);
        }
    }
    best
}

/// Similarity transform moving the points' centroid to the origin with mean
/// distance √2.
fn hartley_transform(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let centroid = points.clone().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let scale = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(
        scale,
        0.0,
        -scale * centroid.x,
        0.0,
        scale,
        -scale * centroid.y,
        0.0,
        0.0,
        1.0,
    )
}

fn check_views(observations: &[Observation<'_>]) -> Result<(), GeometryError> {
    for o in observations {
        if !(0.0..=1.0).contains(&o.weight) {
            return Err(GeometryError::InvalidWeight {
                frame_id: o.frame_id(),
                weight: o.weight,
            });
        }
    }
    let frames: BTreeSet<u32> = observations
        .iter()
        .filter(|o| o.weight > 0.0)
        .map(|o| o.frame_id())
        .collect();
    if frames.len() < 2 {
        return Err(GeometryError::InsufficientViews { got: frames.len() });
    }
    Ok(())
}

/// Solves the weighted homogeneous DLT system without parallax or residual
/// bookkeeping.
fn solve_dlt(observations: &[Observation<'_>]) -> Result<Vector3<f64>, GeometryError> {
    let t = hartley_transform(observations.iter().map(|o| o.pixel));
    let mut a = DMatrix::<f64>::zeros(2 * observations.len(), 4);
    for (i, o) in observations.iter().enumerate() {
        let mut p = t * o.camera.projection_matrix();
        p /= p.norm();
        let x = t * Vector3::new(o.pixel.x, o.pixel.y, 1.0);
        let r0 = (p.row(2) * x.x - p.row(0)) * o.weight;
        let r1 = (p.row(2) * x.y - p.row(1)) * o.weight;
        a.row_mut(2 * i).copy_from(&r0);
        a.row_mut(2 * i + 1).copy_from(&r1);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::SolverFailed)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(GeometryError::SolverFailed)?;
    let h: Vector4<f64> = v_t.row(min_idx).transpose().fixed_rows::<4>(0).into();
    if !(h.w.abs() > 1e-14 * h.norm()) {
        return Err(GeometryError::PointAtInfinity);
    }
    Ok(h.xyz() / h.w)
}

fn mean_residual(point: &Vector3<f64>, observations: &[Observation<'_>]) -> Result<f64, GeometryError> {
    let mut total = 0.0;
    for o in observations {
        total += o.reprojection_distance(point)?;
    }
    Ok(total / observations.len() as f64)
}

/// Linear triangulation of one point from two or more weighted views.
///
/// Pixels are Hartley-normalized before the system is built; rows of each
/// view are scaled by its weight. Fails when the observed rays span less
/// than `min_parallax_rad`.
pub fn triangulate_dlt(
    observations: &[Observation<'_>],
    min_parallax_rad: f64,
) -> Result<Point3D, GeometryError> {
    check_views(observations)?;
    let parallax = max_parallax(observations);
    if parallax < min_parallax_rad || parallax == 0.0 {
        return Err(GeometryError::LowParallax {
            parallax,
            min: min_parallax_rad,
        });
    }
    let position = solve_dlt(observations)?;
    let residual = mean_residual(&position, observations)?;
    Ok(Point3D {
        position,
        residual,
        inlier_views: observations.iter().map(|o| o.frame_id()).collect(),
        parallax,
    })
}

struct Hypothesis {
    inliers: Vec<usize>,
    error_sum: f64,
}

impl Hypothesis {
    fn beats(&self, other: &Option<Hypothesis>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.inliers.len() > o.inliers.len()
                    || (self.inliers.len() == o.inliers.len() && self.error_sum < o.error_sum)
            }
        }
    }
}

/// RANSAC wrapper around [`triangulate_dlt`].
///
/// Hypotheses come from pairs of observations in distinct frames; when the
/// number of such pairs does not exceed `params.iterations` every pair is
/// tried, otherwise pairs are drawn from a ChaCha stream seeded with
/// `params.seed`. The best consensus set (most inliers, then smallest summed
/// error) is refit with DLT.
pub fn ransac_triangulate(
    observations: &[Observation<'_>],
    params: &RansacParams,
) -> Result<Point3D, GeometryError> {
    check_views(observations)?;
    let pairs: Vec<(usize, usize)> = (0..observations.len())
        .flat_map(|i| (i + 1..observations.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            observations[i].frame_id() != observations[j].frame_id()
                && observations[i].weight > 0.0
                && observations[j].weight > 0.0
        })
        .collect();

    let candidates: Vec<(usize, usize)> = if pairs.len() <= params.iterations {
        pairs
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        (0..params.iterations)
            .map(|_| pairs[rng.random_range(0..pairs.len())])
            .collect()
    };

    let mut best: Option<Hypothesis> = None;
    let mut saw_low_parallax = false;
    let mut any_hypothesis = false;
    for (i, j) in candidates {
        let sample = [observations[i], observations[j]];
        let point = match triangulate_dlt(&sample, params.min_parallax_rad) {
            Ok(p) => p.position,
            Err(GeometryError::LowParallax { .. }) => {
                saw_low_parallax = true;
                continue;
            }
            Err(_) => continue,
        };
        any_hypothesis = true;
        let mut inliers = Vec::new();
        let mut error_sum = 0.0;
        for (k, o) in observations.iter().enumerate() {
            if let Ok(d) = o.reprojection_distance(&point) {
                if d <= params.inlier_threshold_px {
                    inliers.push(k);
                    error_sum += d;
                }
            }
        }
        let hyp = Hypothesis { inliers, error_sum };
        if hyp.beats(&best) {
            best = Some(hyp);
        }
    }

    if !any_hypothesis && saw_low_parallax {
        return Err(GeometryError::LowParallax {
            parallax: max_parallax(observations),
            min: params.min_parallax_rad,
        });
    }
    let required = params.min_inliers.max(2);
    let best = match best {
        Some(h) if h.inliers.len() >= required => h,
        other => {
            return Err(GeometryError::NoConsensus {
                best: other.map_or(0, |h| h.inliers.len()),
                required,
            })
        }
    };
    let consensus: Vec<Observation<'_>> = best.inliers.iter().map(|&k| observations[k]).collect();
    triangulate_dlt(&consensus, params.min_parallax_rad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand_distr::{Distribution, Normal};

    fn arc_cameras(n: usize, arc_deg: f64, radius: f64) -> Vec<CameraView> {
        (0..n)
            .map(|i| {
                let theta = if n > 1 {
                    (-arc_deg / 2.0 + arc_deg * i as f64 / (n - 1) as f64).to_radians()
                } else {
                    0.0
                };
                let center = Vector3::new(radius * theta.sin(), 0.0, -radius * theta.cos());
                CameraView::look_at(
                    i as u32,
                    [1000.0, 1000.0],
                    [640.0, 360.0],
                    [1280, 720],
                    center,
                    Vector3::zeros(),
                    Vector3::y(),
                )
                .unwrap()
            })
            .collect()
    }

    fn exact_obs<'a>(cams: &'a [CameraView], x: &Vector3<f64>) -> Vec<Observation<'a>> {
        cams.iter()
            .map(|c| Observation::new(c, project(x, c).unwrap(), 1.0))
            .collect()
    }

    #[test]
    fn two_view_exact_recovery() {
        let u = CameraView::new(0, [800.0, 800.0], [320.0, 240.0], [640, 480], Matrix3::identity(), Vector3::zeros())
            .unwrap();
        let v = CameraView::new(
            1,
            [800.0, 800.0],
            [320.0, 240.0],
            [640, 480],
            Matrix3::identity(),
            Vector3::new(-1.0, 0.0, 0.0),
        )
        .unwrap();
        let cams = [u, v];
        let x = Vector3::new(0.3, -0.2, 5.0);
        let p = triangulate_dlt(&exact_obs(&cams, &x), 1e-3).unwrap();
        assert!((p.position - x).norm() / x.norm() < 1e-6);
        assert!(p.residual < 1e-6);
        assert_eq!(p.inlier_views.len(), 2);
    }

    #[test]
    fn rejects_single_view_and_bad_weights() {
        let cams = arc_cameras(2, 20.0, 5.0);
        let obs = exact_obs(&cams, &Vector3::zeros());
        assert!(matches!(
            triangulate_dlt(&obs[..1], 0.0),
            Err(GeometryError::InsufficientViews { got: 1 })
        ));
        let mut bad = obs.clone();
        bad[0].weight = 1.5;
        assert!(matches!(triangulate_dlt(&bad, 0.0), Err(GeometryError::InvalidWeight { .. })));
    }

    #[test]
    fn identical_rays_have_low_parallax() {
        let u = CameraView::new(0, [800.0, 800.0], [320.0, 240.0], [640, 480], Matrix3::identity(), Vector3::zeros())
            .unwrap();
        // Second camera sits on the first camera's ray to the point.
        let v = CameraView::new(
            1,
            [800.0, 800.0],
            [320.0, 240.0],
            [640, 480],
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, -1.0),
        )
        .unwrap();
        let cams = [u, v];
        let obs = exact_obs(&cams, &Vector3::new(0.0, 0.0, 5.0));
        assert!(matches!(
            triangulate_dlt(&obs, 1f64.to_radians()),
            Err(GeometryError::LowParallax { .. })
        ));
    }

    #[test]
    fn round_trip_reprojects_observations() {
        let cams = arc_cameras(6, 40.0, 6.0);
        let x = Vector3::new(0.4, 0.9, -0.3);
        let obs = exact_obs(&cams, &x);
        let p = triangulate_dlt(&obs, 1e-3).unwrap();
        for o in &obs {
            assert!(o.reprojection_distance(&p.position).unwrap() < 1e-6);
        }
    }

    #[test]
    fn invariant_to_common_rigid_motion() {
        let cams = arc_cameras(5, 30.0, 6.0);
        let x = Vector3::new(0.4, 0.9, -0.3);
        let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let shift = Vector3::new(10.0, -3.0, 2.0);
        // World points move by x' = Rx + s, so camera extrinsics become
        // R_c Rᵀ and t_c - R_c Rᵀ s.
        let moved: Vec<CameraView> = cams
            .iter()
            .map(|c| {
                let r = c.rotation() * rot.matrix().transpose();
                let t = c.translation() - r * shift;
                CameraView::new(c.frame_id(), c.focal(), c.principal_point(), c.image_size(), r, t).unwrap()
            })
            .collect();
        let x_moved = rot * x + shift;
        let a = triangulate_dlt(&exact_obs(&cams, &x), 1e-3).unwrap();
        let b = triangulate_dlt(&exact_obs(&moved, &x_moved), 1e-3).unwrap();
        assert!(((rot * a.position + shift) - b.position).norm() / x_moved.norm() < 1e-6);
    }

    #[test]
    fn ransac_excludes_gross_outliers() {
        let cams = arc_cameras(10, 40.0, 6.0);
        let x = Vector3::new(0.1, 0.5, 0.2);
        let mut obs = exact_obs(&cams, &x);
        obs[2].pixel += Vector2::new(50.0, 0.0);
        obs[7].pixel += Vector2::new(-30.0, 40.0);
        let p = ransac_triangulate(&obs, &RansacParams::default()).unwrap();
        assert!(!p.inlier_views.contains(&2) && !p.inlier_views.contains(&7));
        assert_eq!(p.inlier_views.len(), 8);
        let clean: Vec<_> = obs.iter().enumerate().filter(|(k, _)| *k != 2 && *k != 7).map(|(_, o)| *o).collect();
        let oracle = triangulate_dlt(&clean, 1e-3).unwrap();
        assert!((p.position - oracle.position).norm() / x.norm() < 1e-6);
        assert!((p.position - x).norm() / x.norm() < 1e-6);
    }

    #[test]
    fn ransac_on_clean_input_equals_full_dlt() {
        let cams = arc_cameras(30, 40.0, 6.0);
        let x = Vector3::new(-0.3, 1.2, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let obs: Vec<_> = exact_obs(&cams, &x)
            .into_iter()
            .map(|mut o| {
                o.pixel += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                o
            })
            .collect();
        let params = RansacParams { seed: 4, ..RansacParams::default() };
        let r = ransac_triangulate(&obs, &params).unwrap();
        let full = triangulate_dlt(&obs, params.min_parallax_rad).unwrap();
        assert_eq!(r.inlier_views.len(), 30);
        assert!((r.position - full.position).norm() <= 1e-9);
    }

    #[test]
    fn ransac_is_reproducible_for_a_seed() {
        let cams = arc_cameras(40, 40.0, 6.0);
        let x = Vector3::new(0.0, 1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<_> = exact_obs(&cams, &x)
            .into_iter()
            .map(|mut o| {
                if rng.random_bool(0.3) {
                    o.pixel += Vector2::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
                }
                o
            })
            .collect();
        let params = RansacParams { iterations: 50, seed: 17, ..RansacParams::default() };
        let a = ransac_triangulate(&obs, &params).unwrap();
        let b = ransac_triangulate(&obs, &params).unwrap();
        assert_eq!(a.position.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.position.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.inlier_views, b.inlier_views);
    }

    #[test]
    fn inconsistent_views_have_no_consensus() {
        let cams = arc_cameras(10, 40.0, 6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs: Vec<_> = cams
            .iter()
            .map(|c| Observation::new(c, Vector2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0)), 1.0))
            .collect();
        let params = RansacParams { min_inliers: 3, ..RansacParams::default() };
        // Brute-force oracle: no pair hypothesis reaches three inliers.
        for i in 0..obs.len() {
            for j in i + 1..obs.len() {
                if let Ok(p) = triangulate_dlt(&[obs[i], obs[j]], params.min_parallax_rad) {
                    let count = obs
                        .iter()
                        .filter(|o| o.reprojection_distance(&p.position).is_ok_and(|d| d <= params.inlier_threshold_px))
                        .count();
                    assert!(count < 3);
                }
            }
        }
        assert!(matches!(ransac_triangulate(&obs, &params), Err(GeometryError::NoConsensus { .. })));
    }
}
