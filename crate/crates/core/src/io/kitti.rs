//! Ground-truth import from KITTI `label_2` files.
//!
//! Each line is `type truncated occluded alpha x1 y1 x2 y2 h w l x y z ry`
//! in rectified camera coordinates, with `(x, y, z)` the bottom-face center.
//! Boxes are moved into the LiDAR frame with the inverse of the calibration's
//! LiDAR-to-camera transform. Types not in the label set (DontCare, Misc, ...)
//! are skipped. Difficulty follows the KITTI rules on box height, occlusion
//! and truncation; boxes meeting none of them carry no tag.

use std::fs;
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use super::IoError;
use crate::eval::{GroundTruthFrame, GtBox};
use crate::model::{Box3D, CalibrationSet, LabelSet};

pub fn read_kitti_labels(
    path: &Path,
    frame_id: &str,
    calib: &CalibrationSet,
    labels: &LabelSet,
) -> Result<GroundTruthFrame, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_kitti_labels(&text, path, frame_id, calib, labels)
}

fn difficulty(height_px: f64, occluded: f64, truncated: f64) -> Option<&'static str> {
    if height_px >= 40.0 && occluded <= 0.0 && truncated <= 0.15 {
        Some("easy")
    } else if height_px >= 25.0 && occluded <= 1.0 && truncated <= 0.3 {
        Some("moderate")
    } else if height_px >= 25.0 && occluded <= 2.0 && truncated <= 0.5 {
        Some("hard")
    } else {
        None
    }
}

pub fn parse_kitti_labels(
    text: &str,
    path: &Path,
    frame_id: &str,
    calib: &CalibrationSet,
    labels: &LabelSet,
) -> Result<GroundTruthFrame, IoError> {
    let inv = calib.lidar_to_cam.try_inverse().ok_or_else(|| IoError::BadValue {
        path: path.to_path_buf(),
        key: "Tr_velo_to_cam".into(),
        value: "singular".into(),
    })?;
    let mut boxes = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let f: Vec<&str> = raw.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let err = |reason: String| IoError::SchemaViolation { path: path.to_path_buf(), record: k + 1, reason };
        if f.len() != 15 && f.len() != 16 {
            return Err(err(format!("{} fields, expected 15 or 16", f.len())));
        }
        let Some(label) = labels.by_name(f[0]) else {
            log::debug!("{}: record {}: skipping type {}", path.display(), k + 1, f[0]);
            continue;
        };
        let mut v = [0.0; 14];
        for (j, t) in f[1..15].iter().enumerate() {
            v[j] = t.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| err(format!("field {} `{t}` is not a finite number", j + 2)))?;
        }
        let [trunc, occ, _alpha, _x1, y1, _x2, y2, h, w, l, x, y, z, ry] = v;
        let bottom = inv * Vector4::new(x, y, z, 1.0);
        let center = Vector3::new(bottom.x, bottom.y, bottom.z + h / 2.0);
        let heading = inv * Vector4::new(ry.cos(), 0.0, -ry.sin(), 0.0);
        let yaw = heading.y.atan2(heading.x);
        let box3d = Box3D::new(center.into(), l, h, w, yaw).map_err(|e| err(e.to_string()))?;
        boxes.push(GtBox { box3d, class: label.id, difficulty: difficulty(y2 - y1, occ, trunc).map(str::to_string) });
    }
    Ok(GroundTruthFrame { frame_id: frame_id.to_string(), boxes })
}
