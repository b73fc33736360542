use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};

use super::GeometryError;

/// Minimum camera-frame depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-9;

const ROTATION_TOLERANCE: f64 = 1e-9;

/// A calibrated pinhole view of the scene at one frame.
///
/// The rigid transform maps world coordinates into the camera frame
/// (`x_cam = R * x_world + t`), with the camera looking down its +z axis,
/// x to the right and y down in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    frame_id: u32,
    focal: [f64; 2],
    principal_point: [f64; 2],
    image_size: [u32; 2],
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraView {
    pub fn new(
        frame_id: u32,
        focal: [f64; 2],
        principal_point: [f64; 2],
        image_size: [u32; 2],
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(focal[0] > 0.0 && focal[1] > 0.0) {
            return Err(GeometryError::InvalidCamera {
                frame_id,
                reason: format!("focal lengths must be positive, got {focal:?}"),
            });
        }
        if image_size[0] == 0 || image_size[1] == 0 {
            return Err(GeometryError::InvalidCamera {
                frame_id,
                reason: format!("image size must be positive, got {image_size:?}"),
            });
        }
        if !principal_point.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::InvalidCamera {
                frame_id,
                reason: "non-finite principal point or translation".into(),
            });
        }
        let orth_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(orth_err <= ROTATION_TOLERANCE) || !((det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(GeometryError::InvalidCamera {
                frame_id,
                reason: format!(
                    "rotation is not a proper orthonormal matrix (orthogonality error {orth_err:e}, det {det})"
                ),
            });
        }
        Ok(Self {
            frame_id,
            focal,
            principal_point,
            image_size,
            rotation,
            translation,
        })
    }

    /// Builds a camera at `center` looking at `target`, with `up` giving the
    /// world's vertical direction.
    pub fn look_at(
        frame_id: u32,
        focal: [f64; 2],
        principal_point: [f64; 2],
        image_size: [u32; 2],
        center: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera {
                frame_id,
                reason: "look-at target coincides with the camera center".into(),
            })?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera {
                frame_id,
                reason: "viewing direction is parallel to the up vector".into(),
            })?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * center);
        Self::new(frame_id, focal, principal_point, image_size, rotation, translation)
    }

    pub fn frame_id(&self) -> u32 {
        self.frame_id
    }

    pub fn focal(&self) -> [f64; 2] {
        self.focal
    }

    pub fn principal_point(&self) -> [f64; 2] {
        self.principal_point
    }

    pub fn image_size(&self) -> [u32; 2] {
        self.image_size
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal[0],
            0.0,
            self.principal_point[0],
            0.0,
            self.focal[1],
            self.principal_point[1],
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn inverse_intrinsics(&self) -> Matrix3<f64> {
        let [fx, fy] = self.focal;
        let [cx, cy] = self.principal_point;
        Matrix3::new(
            1.0 / fx,
            0.0,
            -cx / fx,
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Unit viewing direction of the optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// The 3×4 projection matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        self.intrinsics() * rt
    }

    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// World-frame unit direction of the ray through `pixel`.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let ray_cam = self.inverse_intrinsics() * Vector3::new(pixel.x, pixel.y, 1.0);
        (self.rotation.transpose() * ray_cam).normalize()
    }

    /// Converts normalized `[0,1]²` image coordinates to pixels.
    pub fn to_pixels(&self, normalized: [f64; 2]) -> Vector2<f64> {
        Vector2::new(
            normalized[0] * self.image_size[0] as f64,
            normalized[1] * self.image_size[1] as f64,
        )
    }

    /// Converts pixels to normalized `[0,1]²` image coordinates.
    pub fn to_normalized(&self, pixel: &Vector2<f64>) -> [f64; 2] {
        [
            pixel.x / self.image_size[0] as f64,
            pixel.y / self.image_size[1] as f64,
        ]
    }

    pub fn contains_pixel(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= self.image_size[0] as f64
            && pixel.y <= self.image_size[1] as f64
    }
}

/// Projects a world point to pixel coordinates.
pub fn project(point: &Vector3<f64>, cam: &CameraView) -> Result<Vector2<f64>, GeometryError> {
    let p = cam.to_camera_frame(point);
    if !(p.z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera {
            frame_id: cam.frame_id,
            depth: p.z,
        });
    }
    Ok(Vector2::new(
        cam.focal[0] * p.x / p.z + cam.principal_point[0],
        cam.focal[1] * p.y / p.z + cam.principal_point[1],
    ))
}

/// Jacobian of [`project`] with respect to the world point, evaluated at
/// `point`. Returns the projection alongside its 2×3 derivative.
pub fn project_with_jacobian(
    point: &Vector3<f64>,
    cam: &CameraView,
) -> Result<(Vector2<f64>, nalgebra::Matrix2x3<f64>), GeometryError> {
    let p = cam.to_camera_frame(point);
    if !(p.z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera {
            frame_id: cam.frame_id,
            depth: p.z,
        });
    }
    let [fx, fy] = cam.focal;
    let inv_z = 1.0 / p.z;
    let uv = Vector2::new(
        fx * p.x * inv_z + cam.principal_point[0],
        fy * p.y * inv_z + cam.principal_point[1],
    );
    let d_cam = nalgebra::Matrix2x3::new(
        fx * inv_z,
        0.0,
        -fx * p.x * inv_z * inv_z,
        0.0,
        fy * inv_z,
        -fy * p.y * inv_z * inv_z,
    );
    Ok((uv, d_cam * cam.rotation))
}
