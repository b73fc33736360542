//! The 17-keypoint body layout used throughout the crate.
//!
//! Joint order follows the MSCOCO keypoint convention. Links include the
//! face and the ear-to-shoulder connections the pose detector uses; only
//! [`LinkKind::Bone`] links describe rigid body segments.

use nalgebra::Vector3;

pub const NUM_JOINTS: usize = 17;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

pub const NOSE: usize = 0;
pub const LEFT_SHOULDER: usize = 5;
pub const RIGHT_SHOULDER: usize = 6;
pub const LEFT_HIP: usize = 11;
pub const RIGHT_HIP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// A rigid segment with a meaningful length.
    Bone,
    /// Connections between facial keypoints.
    Face,
    /// A connection with no anatomical counterpart, e.g. ear to shoulder.
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub kind: LinkKind,
}

const fn link(a: usize, b: usize, kind: LinkKind) -> Link {
    Link { a, b, kind }
}

pub const LINKS: [Link; 19] = [
    link(15, 13, LinkKind::Bone),
    link(13, 11, LinkKind::Bone),
    link(16, 14, LinkKind::Bone),
    link(14, 12, LinkKind::Bone),
    link(11, 12, LinkKind::Bone),
    link(5, 11, LinkKind::Bone),
    link(6, 12, LinkKind::Bone),
    link(5, 6, LinkKind::Bone),
    link(5, 7, LinkKind::Bone),
    link(6, 8, LinkKind::Bone),
    link(7, 9, LinkKind::Bone),
    link(8, 10, LinkKind::Bone),
    link(1, 2, LinkKind::Face),
    link(0, 1, LinkKind::Face),
    link(0, 2, LinkKind::Face),
    link(1, 3, LinkKind::Face),
    link(2, 4, LinkKind::Face),
    link(3, 5, LinkKind::Virtual),
    link(4, 6, LinkKind::Virtual),
];

/// Endpoints of every [`LinkKind::Bone`] link.
pub fn bone_edges() -> Vec<(usize, usize)> {
    LINKS
        .iter()
        .filter(|l| l.kind == LinkKind::Bone)
        .map(|l| (l.a, l.b))
        .collect()
}

/// A neutral standing pose in meters, y up, feet near `y = 0`, facing −z.
pub fn template_pose() -> Vec<Vector3<f64>> {
    const T: [[f64; 3]; NUM_JOINTS] = [
        [0.0, 1.60, -0.08],
        [-0.035, 1.64, -0.06],
        [0.035, 1.64, -0.06],
        [-0.075, 1.62, 0.0],
        [0.075, 1.62, 0.0],
        [-0.19, 1.42, 0.0],
        [0.19, 1.42, 0.0],
        [-0.22, 1.13, 0.02],
        [0.22, 1.13, 0.02],
        [-0.24, 0.87, -0.02],
        [0.24, 0.87, -0.02],
        [-0.11, 0.93, 0.0],
        [0.11, 0.93, 0.0],
        [-0.11, 0.50, -0.01],
        [0.11, 0.50, -0.01],
        [-0.11, 0.08, 0.02],
        [0.11, 0.08, 0.02],
    ];
    T.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect()
}
