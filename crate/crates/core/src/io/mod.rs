//! File formats, COLMAP import and run configuration.
//!
//! Every JSON artifact is an object carrying `"version": "mvm/1"`. Inputs
//! are parsed and validated in full before any computation, and parse
//! errors name the file and line.

mod colmap;
mod config;
mod schema;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use colmap::{export_colmap, import_colmap, parse_colmap, quaternion_to_rotation};
pub use config::{load_scene_spec, scene_spec_to_toml, PathsConfig, PipelineConfig, RansacConfig};
pub use schema::*;

/// Schema tag written to and required in every JSON artifact.
pub const FORMAT_VERSION: &str = "mvm/1";

#[derive(Debug, Clone, PartialEq)]
pub enum IoError {
    Read { path: PathBuf, message: String },
    Write { path: PathBuf, message: String },
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    Invalid { path: PathBuf, message: String },
    UnsupportedModel { path: PathBuf, line: usize, model: String },
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Read { path, message } => write!(f, "{}: cannot read: {message}", path.display()),
            Self::Write { path, message } => write!(f, "{}: cannot write: {message}", path.display()),
            Self::Parse {
                path,
                line,
                column,
                message,
            } => write!(f, "{}:{line}:{column}: {message}", path.display()),
            Self::Invalid { path, message } => write!(f, "{}: {message}", path.display()),
            Self::UnsupportedModel { path, line, model } => {
                write!(f, "{}:{line}: unsupported camera model `{model}`", path.display())
            }
        }
    }
}

impl std::error::Error for IoError {}

impl IoError {
    pub(crate) fn invalid(path: &Path, message: impl fmt::Display) -> Self {
        Self::Invalid {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let fail = |e: std::io::Error| IoError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    std::fs::write(path, text).map_err(fail)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Pretty-printed with a trailing newline.
pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub(crate) fn check_version(path: &Path, version: &str) -> Result<(), IoError> {
    if version == FORMAT_VERSION {
        Ok(())
    } else {
        Err(IoError::invalid(
            path,
            format!("unsupported version `{version}`, expected `{FORMAT_VERSION}`"),
        ))
    }
}
