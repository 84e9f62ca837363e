//! File formats: KITTI point clouds and calibration, line-oriented detection
//! records, a KITTI label import shim for ground truth, and report output.
//!
//! A frame bundle is a directory with one file per frame id in each of
//! `velodyne/` (`.bin`), `calib/` (`.txt`), `detections/` (`.txt`) and,
//! optionally, `label/` (ground-truth records) or `label_2/` (KITTI labels).

mod bundle;
mod calib;
mod cloud;
mod kitti;
mod records;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::ModelError;

pub use bundle::{list_frames, FrameBundle};
pub use calib::{format_calibration, parse_calibration, read_calibration, write_calibration};
pub use cloud::{encode_point_cloud, parse_point_cloud, read_point_cloud, write_point_cloud};
pub use kitti::{parse_kitti_labels, read_kitti_labels};
pub use records::{
    format_detections, format_fused, format_ground_truth, parse_records, read_records, write_detections,
    write_fused, write_ground_truth, DetectionSet, FrameRecords, FusedRecord, Records, SCHEMA_HEADER,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: length {len} is not a multiple of 16 bytes")]
    TruncatedFile { path: PathBuf, len: usize },
    #[error("{path}: non-finite value at byte offset {offset}")]
    NonFiniteValue { path: PathBuf, offset: usize },
    #[error("{path}: missing key `{key}`")]
    MissingKey { path: PathBuf, key: String },
    #[error("{path}: `{key}` has {got} values, expected {expected}")]
    BadDimension { path: PathBuf, key: String, expected: usize, got: usize },
    #[error("{path}: `{key}` has invalid value `{value}`")]
    BadValue { path: PathBuf, key: String, value: String },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: ModelError },
    #[error("{path}: record {record}: {reason}")]
    SchemaViolation { path: PathBuf, record: usize, reason: String },
    #[error("`{0}` contains whitespace and cannot be written as a record field")]
    Unwritable(String),
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            Self::Io { path, .. }
            | Self::TruncatedFile { path, .. }
            | Self::NonFiniteValue { path, .. }
            | Self::MissingKey { path, .. }
            | Self::BadDimension { path, .. }
            | Self::BadValue { path, .. }
            | Self::Invalid { path, .. }
            | Self::SchemaViolation { path, .. } => Some(path),
            Self::Unwritable(_) => None,
        }
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| IoError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// JSON when the extension is `.json`, the text table otherwise.
pub fn write_report(report: &crate::eval::EvalReport, path: &Path) -> Result<(), IoError> {
    let body = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => report.to_json() + "\n",
        _ => report.to_table(),
    };
    write_file(path, body.as_bytes())
}
