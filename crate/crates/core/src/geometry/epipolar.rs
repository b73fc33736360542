use nalgebra::{Matrix3, Vector2, Vector3};

use super::{CameraView, GeometryError};

/// Camera centers closer than this are treated as coincident.
pub const MIN_BASELINE: f64 = 1e-9;

/// An image line `a·x + b·y + c = 0` in pixel coordinates with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D {
    a: f64,
    b: f64,
    c: f64,
}

impl Line2D {
    /// Normalizes arbitrary homogeneous line coefficients.
    pub fn from_homogeneous(l: &Vector3<f64>) -> Result<Self, GeometryError> {
        let n = l.x.hypot(l.y);
        if !(n > f64::MIN_POSITIVE) || !n.is_finite() {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(Self {
            a: l.x / n,
            b: l.y / n,
            c: l.z / n,
        })
    }

    pub fn coefficients(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    /// Signed distance; the sign tells which side of the line `p` is on.
    pub fn signed_distance(&self, p: &Vector2<f64>) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    pub fn distance(&self, p: &Vector2<f64>) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Unit normal `(a, b)`.
    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(self.a, self.b)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix mapping pixels of `cam_u` to epipolar lines in `cam_v`,
/// so that `p_vᵀ F p_u = 0` for corresponding points. Built analytically from
/// the calibrated cameras and scaled to unit Frobenius norm.
pub fn fundamental_matrix(cam_u: &CameraView, cam_v: &CameraView) -> Result<Matrix3<f64>, GeometryError> {
    let baseline = (cam_u.center() - cam_v.center()).norm();
    if !(baseline > MIN_BASELINE) {
        return Err(GeometryError::DegenerateBaseline {
            frame_u: cam_u.frame_id(),
            frame_v: cam_v.frame_id(),
        });
    }
    let r_rel = cam_v.rotation() * cam_u.rotation().transpose();
    let t_rel = cam_v.translation() - r_rel * cam_u.translation();
    let essential = skew(&t_rel) * r_rel;
    let f = cam_v.inverse_intrinsics().transpose() * essential * cam_u.inverse_intrinsics();
    Ok(f / f.norm())
}

/// Epipolar line `F·(x, y, 1)` in the second view of `F`.
pub fn epipolar_line(f: &Matrix3<f64>, point: &Vector2<f64>) -> Result<Line2D, GeometryError> {
    Line2D::from_homogeneous(&(f * Vector3::new(point.x, point.y, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(frame_id: u32, center: Vector3<f64>, target: Vector3<f64>) -> CameraView {
        CameraView::look_at(frame_id, [900.0, 880.0], [640.0, 360.0], [1280, 720], center, target, Vector3::y())
            .unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn bilinear_residual(f: &Matrix3<f64>, pu: &Vector2<f64>, pv: &Vector2<f64>) -> f64 {
        (Vector3::new(pv.x, pv.y, 1.0).transpose() * f * Vector3::new(pu.x, pu.y, 1.0))[0].abs()
    }

    #[test]
    fn pure_translation_satisfies_bilinear_constraint() {
        let target = Vector3::new(0.0, 0.0, 5.0);
        let u = cam(0, Vector3::new(0.0, 0.0, 0.0), target);
        let v = CameraView::new(
            1,
            u.focal(),
            u.principal_point(),
            u.image_size(),
            *u.rotation(),
            u.translation() - u.rotation() * Vector3::new(0.7, 0.0, 0.0),
        )
        .unwrap();
        let f = fundamental_matrix(&u, &v).unwrap();
        assert!((f.norm() - 1.0).abs() < 1e-12);
        let max = random_points(50, 1)
            .iter()
            .map(|x| {
                let x = x + target;
                bilinear_residual(&f, &project(&x, &u).unwrap(), &project(&x, &v).unwrap())
            })
            .fold(0.0, f64::max);
        assert!(max < 1e-6, "max residual {max}");
    }

    #[test]
    fn coincident_centers_are_degenerate() {
        let u = cam(3, Vector3::new(1.0, 1.0, -4.0), Vector3::zeros());
        let err = fundamental_matrix(&u, &u.clone()).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateBaseline { frame_u: 3, frame_v: 3 }));
    }

    #[test]
    fn reversed_pair_is_transpose_up_to_scale() {
        let u = cam(0, Vector3::new(-2.0, 1.0, -5.0), Vector3::zeros());
        let v = cam(1, Vector3::new(2.5, 1.3, -4.0), Vector3::new(0.1, 0.0, 0.0));
        let fuv = fundamental_matrix(&u, &v).unwrap();
        let fvu = fundamental_matrix(&v, &u).unwrap();
        let diff = (fuv - fvu.transpose()).norm().min((fuv + fvu.transpose()).norm());
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn corresponding_points_lie_on_epipolar_lines() {
        let u = cam(0, Vector3::new(-2.0, 1.0, -5.0), Vector3::zeros());
        let v = cam(1, Vector3::new(2.5, 1.3, -4.0), Vector3::new(0.1, 0.0, 0.0));
        let f = fundamental_matrix(&u, &v).unwrap();
        for x in random_points(30, 2) {
            let line = epipolar_line(&f, &project(&x, &u).unwrap()).unwrap();
            let [a, b, _] = line.coefficients();
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
            assert!(line.distance(&project(&x, &v).unwrap()) < 1e-6);
        }
    }

    #[test]
    fn perpendicular_shift_gives_exact_distance() {
        let u = cam(0, Vector3::new(-2.0, 1.0, -5.0), Vector3::zeros());
        let v = cam(1, Vector3::new(2.5, 1.3, -4.0), Vector3::new(0.1, 0.0, 0.0));
        let f = fundamental_matrix(&u, &v).unwrap();
        let x = Vector3::new(0.2, -0.3, 0.4);
        let line = epipolar_line(&f, &project(&x, &u).unwrap()).unwrap();
        let pv = project(&x, &v).unwrap();
        for delta in [0.5, 3.0, 17.25] {
            let shifted = pv + line.normal() * delta;
            assert!((line.distance(&shifted) - delta).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_line_is_rejected() {
        assert!(matches!(
            epipolar_line(&Matrix3::zeros(), &Vector2::new(1.0, 2.0)),
            Err(GeometryError::DegenerateLine)
        ));
    }
}
