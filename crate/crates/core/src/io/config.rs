//! TOML run configuration.
//!
//! ```toml
//! seed = 0
//! gamma = 0.2                # px⁻¹
//! tau = 0.05
//! seed_min_confidence = 0.3
//! lambda = 1.0
//! robust_delta_px = 10.0
//! min_common_joints = 4
//! affinity_mode = "combined" # or "geometric", "appearance"
//! c_var_tau = 0.5
//!
//! [ransac]
//! iterations = 100
//! inlier_threshold_px = 10.0
//! min_inliers = 2
//! min_parallax_deg = 1.0
//!
//! [paths]                    # relative to this file
//! poses = "poses2d.json"
//! cameras = "cameras.json"
//! descriptors = "descriptors.json"
//! out = "out"
//! ```
//!
//! Every key is optional. Missing keys take the defaults shown.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, IoError};
use crate::affinity::{AffinityMode, AffinityParams};
use crate::geometry::RansacParams;
use crate::matching::GreedyParams;
use crate::pipeline::PipelineParams;
use crate::refinement::BundleParams;
use crate::synth::SceneSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub min_parallax_deg: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        let r = RansacParams::default();
        Self {
            iterations: r.iterations,
            inlier_threshold_px: r.inlier_threshold_px,
            min_inliers: r.min_inliers,
            min_parallax_deg: r.min_parallax_rad.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub poses: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    pub descriptors: Option<PathBuf>,
    pub gmm: Option<PathBuf>,
    pub bones: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub skeletons: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl PathsConfig {
    fn each_mut(&mut self) -> [&mut Option<PathBuf>; 9] {
        [
            &mut self.poses,
            &mut self.cameras,
            &mut self.descriptors,
            &mut self.gmm,
            &mut self.bones,
            &mut self.groups,
            &mut self.skeletons,
            &mut self.ground_truth,
            &mut self.out,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub gamma: f64,
    pub tau: f64,
    pub seed_min_confidence: f64,
    pub lambda: f64,
    pub robust_delta_px: f64,
    pub min_common_joints: usize,
    pub affinity_mode: AffinityMode,
    pub c_var_tau: f64,
    pub ransac: RansacConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let p = PipelineParams::default();
        Self {
            seed: p.ransac.seed,
            gamma: p.affinity.gamma,
            tau: p.greedy.tau,
            seed_min_confidence: p.greedy.seed_min_confidence,
            lambda: p.bundle.lambda,
            robust_delta_px: p.bundle.robust_delta_px,
            min_common_joints: p.affinity.min_common_joints,
            affinity_mode: p.affinity.mode,
            c_var_tau: p.c_var_tau,
            ransac: RansacConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn toml_line(text: &str, err: &toml::de::Error) -> (usize, usize) {
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            (line, column)
        }
        None => (1, 1),
    }
}

impl PipelineConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, path: &Path, base: &Path) -> Result<Self, IoError> {
        let mut cfg: Self = parse_toml(text, path)?;
        cfg.resolve_paths(base);
        cfg.validate().map_err(|m| IoError::invalid(path, m))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, path, base)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.paths.each_mut().into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let checks: [(bool, &str); 9] = [
            (self.gamma > 0.0 && self.gamma.is_finite(), "gamma must be positive"),
            (self.tau >= 0.0 && self.tau.is_finite(), "tau must be non-negative"),
            ((0.0..=1.0).contains(&self.seed_min_confidence), "seed_min_confidence must lie in [0, 1]"),
            (self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be non-negative"),
            (self.robust_delta_px > 0.0 && self.robust_delta_px.is_finite(), "robust_delta_px must be positive"),
            ((0.0..=1.0).contains(&self.c_var_tau), "c_var_tau must lie in [0, 1]"),
            (self.ransac.iterations > 0, "ransac.iterations must be positive"),
            (
                self.ransac.inlier_threshold_px > 0.0 && self.ransac.min_inliers >= 2,
                "ransac.inlier_threshold_px must be positive and ransac.min_inliers at least 2",
            ),
            (
                self.ransac.min_parallax_deg >= 0.0 && self.ransac.min_parallax_deg < 180.0,
                "ransac.min_parallax_deg must lie in [0, 180)",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }

    pub fn params(&self) -> PipelineParams {
        PipelineParams {
            affinity: AffinityParams {
                gamma: self.gamma,
                min_common_joints: self.min_common_joints,
                mode: self.affinity_mode,
            },
            greedy: GreedyParams {
                tau: self.tau,
                seed_min_confidence: self.seed_min_confidence,
            },
            ransac: RansacParams {
                iterations: self.ransac.iterations,
                inlier_threshold_px: self.ransac.inlier_threshold_px,
                min_inliers: self.ransac.min_inliers,
                min_parallax_rad: self.ransac.min_parallax_deg.to_radians(),
                seed: self.seed,
            },
            bundle: BundleParams {
                lambda: self.lambda,
                robust_delta_px: self.robust_delta_px,
                ..BundleParams::default()
            },
            c_var_tau: self.c_var_tau,
        }
    }

    /// The configuration as TOML, every default spelled out. The output
    /// path is written as `"."` so the file, placed in the output
    /// directory, reruns into that same directory.
    pub fn to_resolved_toml(&self) -> String {
        let mut cfg = self.clone();
        cfg.paths.out = cfg.paths.out.as_ref().map(|_| PathBuf::from("."));
        toml::to_string(&cfg).expect("configuration serializes")
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, IoError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = toml_line(text, &e);
        IoError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

/// Reads a synthetic scene description. Missing keys take
/// [`SceneSpec::default`] values.
pub fn load_scene_spec(path: &Path) -> Result<SceneSpec, IoError> {
    let spec: SceneSpec = parse_toml(&read_text(path)?, path)?;
    spec.validate().map_err(|e| IoError::invalid(path, e))?;
    Ok(spec)
}

pub fn scene_spec_to_toml(spec: &SceneSpec) -> String {
    toml::to_string(spec).expect("scene spec serializes")
}
