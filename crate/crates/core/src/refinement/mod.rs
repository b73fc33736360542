//! Joint refinement of a skeleton against its observations and a learned
//! pose prior, plus recovery of the metric scale.
//!
//! The refined energy is
//!
//! ```text
//! E(X) = Σ_u E_R(X, x_u) + λ · E_P(X)
//! ```
//!
//! where `E_R` is a confidence-weighted Huber reprojection energy in squared
//! pixels and `E_P` is the negative log-density of a Gaussian mixture over
//! normalized poses.

mod bundle;
mod energy;
mod gmm;
mod scale;

use thiserror::Error;

use crate::scene::SceneError;

pub use bundle::{bundle_adjust, BundleOutcome, BundleParams, BundleProblem};
pub use energy::{huber, reprojection_energy};
pub use gmm::{
    fit_gmm, fit_gmm_with, pose_prior_energy, GmmComponent, GmmFit, GmmFitParams, GmmPrior, PoseNormalization,
    MIN_COVARIANCE_EIGENVALUE,
};
pub use scale::{calibrate_scale, calibrate_scale_positions, BoneTable};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RefinementError {
    #[error("skeleton has no valid joint to refine")]
    NothingToRefine,
    #[error("no bone has both endpoints valid")]
    NoBones,
    #[error("invalid pose prior: {0}")]
    InvalidPrior(String),
    #[error("invalid bone table: {0}")]
    InvalidBoneTable(String),
    #[error("pose corpus of {got} samples is too small; {required} needed")]
    CorpusTooSmall { got: usize, required: usize },
    #[error("degenerate pose corpus: {0}")]
    DegenerateCorpus(String),
    #[error("pose cannot be normalized: {0}")]
    Normalization(String),
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Scene(#[from] SceneError),
}
