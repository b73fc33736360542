//! COLMAP text-model import and export (`cameras.txt`, `images.txt`).
//!
//! Only undistorted pinhole models are accepted. Each image becomes one
//! [`CameraView`] whose frame id is the COLMAP image id.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use super::{read_text, write_text, IoError};
use crate::geometry::CameraView;

struct Intrinsics {
    width: u32,
    height: u32,
    focal: [f64; 2],
    principal: [f64; 2],
}

/// Rotation of the quaternion `(w, x, y, z)` after scaling it to unit norm.
pub fn quaternion_to_rotation(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
        .to_rotation_matrix()
        .into_inner()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T, IoError> {
    field.parse().map_err(|_| IoError::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        message: format!("cannot parse {what} from `{field}`"),
    })
}

fn parse_cameras(path: &Path, text: &str) -> Result<BTreeMap<u32, Intrinsics>, IoError> {
    let mut out = BTreeMap::new();
    for (line, l) in content_lines(text).filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < 4 {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line,
                column: 1,
                message: "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]".into(),
            });
        }
        let id: u32 = parse_field(path, line, f[0], "camera id")?;
        let width = parse_field(path, line, f[2], "width")?;
        let height = parse_field(path, line, f[3], "height")?;
        let params: Vec<f64> = f[4..]
            .iter()
            .map(|p| parse_field(path, line, p, "camera parameter"))
            .collect::<Result<_, _>>()?;
        let (focal, principal) = match (f[1], params.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => ([*fx, *fy], [*cx, *cy]),
            ("SIMPLE_PINHOLE", [f, cx, cy]) => ([*f, *f], [*cx, *cy]),
            ("PINHOLE" | "SIMPLE_PINHOLE", _) => {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line,
                    column: 1,
                    message: format!("{} takes {} parameters, got {}", f[1], if f[1] == "PINHOLE" { 4 } else { 3 }, params.len()),
                })
            }
            (model, _) => {
                return Err(IoError::UnsupportedModel {
                    path: path.to_path_buf(),
                    line,
                    model: model.to_string(),
                })
            }
        };
        out.insert(
            id,
            Intrinsics {
                width,
                height,
                focal,
                principal,
            },
        );
    }
    Ok(out)
}

/// Parses COLMAP text exports already in memory. The paths only label
/// errors.
pub fn parse_colmap(
    cameras_path: &Path,
    cameras_txt: &str,
    images_path: &Path,
    images_txt: &str,
) -> Result<Vec<CameraView>, IoError> {
    let intrinsics = parse_cameras(cameras_path, cameras_txt)?;
    let mut views = Vec::new();
    // Image records alternate with (possibly empty) point lines.
    let lines: Vec<(usize, &str)> = content_lines(images_txt).collect();
    let mut i = 0;
    while i < lines.len() {
        let (line, l) = lines[i];
        if l.is_empty() {
            i += 1;
            continue;
        }
        i += 2;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < 9 {
            return Err(IoError::Parse {
                path: images_path.to_path_buf(),
                line,
                column: 1,
                message: "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME".into(),
            });
        }
        let id: u32 = parse_field(images_path, line, f[0], "image id")?;
        let q: Vec<f64> = f[1..5]
            .iter()
            .map(|v| parse_field(images_path, line, v, "quaternion"))
            .collect::<Result<_, _>>()?;
        let t: Vec<f64> = f[5..8]
            .iter()
            .map(|v| parse_field(images_path, line, v, "translation"))
            .collect::<Result<_, _>>()?;
        let camera_id: u32 = parse_field(images_path, line, f[8], "camera id")?;
        let cam = intrinsics
            .get(&camera_id)
            .ok_or_else(|| IoError::invalid(images_path, format!("line {line}: unknown camera {camera_id}")))?;
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(IoError::invalid(images_path, format!("line {line}: zero quaternion")));
        }
        if (norm - 1.0).abs() > 1e-3 {
            log::warn!("{}:{line}: quaternion norm {norm}, normalizing", images_path.display());
        }
        let rotation = quaternion_to_rotation(q[0], q[1], q[2], q[3]);
        let view = CameraView::new(
            id,
            cam.focal,
            cam.principal,
            [cam.width, cam.height],
            rotation,
            Vector3::new(t[0], t[1], t[2]),
        )
        .map_err(|e| IoError::invalid(images_path, format!("line {line}: {e}")))?;
        views.push(view);
    }
    views.sort_by_key(CameraView::frame_id);
    for w in views.windows(2) {
        if w[0].frame_id() == w[1].frame_id() {
            return Err(IoError::invalid(images_path, format!("duplicate image id {}", w[0].frame_id())));
        }
    }
    Ok(views)
}

pub fn import_colmap(cameras_txt: &Path, images_txt: &Path) -> Result<Vec<CameraView>, IoError> {
    let cams = read_text(cameras_txt)?;
    let images = read_text(images_txt)?;
    parse_colmap(cameras_txt, &cams, images_txt, &images)
}

/// Writes one PINHOLE camera and one image per view, both keyed by frame
/// id, into `dir`.
pub fn export_colmap(cameras: &[CameraView], dir: &Path) -> Result<(), IoError> {
    let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let mut images = String::from(
        "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    for c in cameras {
        let [w, h] = c.image_size();
        let [fx, fy] = c.focal();
        let [cx, cy] = c.principal_point();
        writeln!(cams, "{} PINHOLE {w} {h} {fx} {fy} {cx} {cy}", c.frame_id()).expect("string write");
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*c.rotation()));
        let t = c.translation();
        writeln!(
            images,
            "{id} {} {} {} {} {} {} {} {id} frame_{id:06}.jpg\n",
            q.w,
            q.i,
            q.j,
            q.k,
            t.x,
            t.y,
            t.z,
            id = c.frame_id()
        )
        .expect("string write");
    }
    write_text(&dir.join("cameras.txt"), &cams)?;
    write_text(&dir.join("images.txt"), &images)
}
