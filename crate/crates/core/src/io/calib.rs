//! KITTI calibration text.
//!
//! Required keys: `P<i>` (3×4, row-major, at least one), `R0_rect` (3×3) and
//! `Tr_velo_to_cam` (3×4). The LiDAR-to-camera transform is
//! `hom(R0_rect) · hom(Tr_velo_to_cam)`. Optional extension keys:
//!
//! - `image_size: <w> <h>` for every camera (default 1242 375);
//! - `cameras: <i> <j> ...` selects and orders the `P<i>` used as views;
//! - `stereo: <l> <r>` (in `P` numbering) or `stereo: none`. Without it,
//!   `P2`/`P3` form a stereo pair when both are selected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3};

use super::IoError;
use crate::model::{CalibrationSet, CameraModel, StereoPair};

const DEFAULT_IMAGE: (u32, u32) = (1242, 375);

pub fn read_calibration(path: &Path) -> Result<CalibrationSet, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_calibration(&text, path)
}

fn numbers(path: &Path, key: &str, raw: &str) -> Result<Vec<f64>, IoError> {
    raw.split_whitespace()
        .map(|t| {
            t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| IoError::BadValue {
                path: path.to_path_buf(),
                key: key.to_string(),
                value: t.to_string(),
            })
        })
        .collect()
}

fn with_len(path: &Path, key: &str, v: Vec<f64>, n: usize) -> Result<Vec<f64>, IoError> {
    if v.len() != n {
        return Err(IoError::BadDimension { path: path.to_path_buf(), key: key.to_string(), expected: n, got: v.len() });
    }
    Ok(v)
}

pub fn parse_calibration(text: &str, path: &Path) -> Result<CalibrationSet, IoError> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once(':').ok_or_else(|| IoError::BadValue {
            path: path.to_path_buf(),
            key: "<line>".into(),
            value: line.to_string(),
        })?;
        entries.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| entries.get(k).ok_or_else(|| IoError::MissingKey { path: path.to_path_buf(), key: k.into() });
    let matrix = |k: &str, n: usize| -> Result<Vec<f64>, IoError> { with_len(path, k, numbers(path, k, get(k)?)?, n) };

    let r0 = Matrix3::from_row_slice(&matrix("R0_rect", 9)?);
    let tr = Matrix3x4::from_row_slice(&matrix("Tr_velo_to_cam", 12)?);
    let mut r0h = Matrix4::identity();
    r0h.fixed_view_mut::<3, 3>(0, 0).copy_from(&r0);
    let mut trh = Matrix4::identity();
    trh.fixed_view_mut::<3, 4>(0, 0).copy_from(&tr);
    let t = r0h * trh;

    let mut available: BTreeMap<usize, Matrix3x4<f64>> = BTreeMap::new();
    for k in entries.keys() {
        if let Some(i) = k.strip_prefix('P').and_then(|s| s.parse::<usize>().ok()) {
            available.insert(i, Matrix3x4::from_row_slice(&matrix(k, 12)?));
        }
    }
    if available.is_empty() {
        return Err(IoError::MissingKey { path: path.to_path_buf(), key: "P0".into() });
    }
    let selected: Vec<usize> = match entries.get("cameras") {
        Some(raw) => {
            let ids = numbers(path, "cameras", raw)?;
            let mut out = Vec::new();
            for v in ids {
                let i = v as usize;
                if v.fract() != 0.0 || v < 0.0 || !available.contains_key(&i) {
                    return Err(IoError::MissingKey { path: path.to_path_buf(), key: format!("P{v}") });
                }
                out.push(i);
            }
            out
        }
        None => available.keys().copied().collect(),
    };
    let (w, h) = match entries.get("image_size") {
        Some(raw) => {
            let v = with_len(path, "image_size", numbers(path, "image_size", raw)?, 2)?;
            if !(v[0] >= 1.0 && v[1] >= 1.0) {
                return Err(IoError::BadValue { path: path.to_path_buf(), key: "image_size".into(), value: raw.clone() });
            }
            (v[0] as u32, v[1] as u32)
        }
        None => DEFAULT_IMAGE,
    };

    let invalid = |e: crate::model::ModelError| IoError::Invalid { path: path.to_path_buf(), source: e };
    let cameras = selected
        .iter()
        .map(|i| CameraModel::new(available[i], w, h, None).map_err(invalid))
        .collect::<Result<Vec<_>, _>>()?;

    let pair_ids: Option<(usize, usize)> = match entries.get("stereo").map(String::as_str) {
        Some("none") => None,
        Some(raw) => {
            let v = with_len(path, "stereo", numbers(path, "stereo", raw)?, 2)?;
            Some((v[0] as usize, v[1] as usize))
        }
        None => Some((2, 3)),
    };
    let mut stereo_pairs = Vec::new();
    if let Some((l, r)) = pair_ids {
        let pos = |i: usize| selected.iter().position(|&s| s == i);
        match (pos(l), pos(r)) {
            (Some(li), Some(ri)) => {
                let (pl, pr) = (&available[&l], &available[&r]);
                let b = (pl[(0, 3)] - pr[(0, 3)]) / pl[(0, 0)];
                stereo_pairs.push(StereoPair {
                    left: li,
                    right: ri,
                    rotation: Matrix3::identity(),
                    translation: Vector3::new(b, 0.0, 0.0),
                });
            }
            _ if entries.contains_key("stereo") => {
                return Err(IoError::MissingKey { path: path.to_path_buf(), key: format!("P{l}/P{r} for stereo") });
            }
            _ => {}
        }
    }
    CalibrationSet::new(t, cameras, stereo_pairs).map_err(invalid)
}

fn row(out: &mut String, key: &str, vals: impl IntoIterator<Item = f64>) {
    let _ = write!(out, "{key}:");
    for v in vals {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

/// Writes `P0..P<n-1>` for the cameras in order, `R0_rect = I` and `T` as
/// `Tr_velo_to_cam`, plus the extension keys. All cameras must share one
/// image size. Values use the shortest exact decimal form.
pub fn format_calibration(calib: &CalibrationSet) -> String {
    let mut s = String::new();
    for (i, c) in calib.cameras.iter().enumerate() {
        row(&mut s, &format!("P{i}"), c.projection.transpose().iter().copied());
    }
    row(&mut s, "R0_rect", Matrix3::<f64>::identity().iter().copied());
    row(&mut s, "Tr_velo_to_cam", calib.lidar_to_cam.fixed_view::<3, 4>(0, 0).transpose().iter().copied());
    let c0 = &calib.cameras[0];
    let _ = writeln!(s, "image_size: {} {}", c0.width, c0.height);
    match calib.stereo_pairs.first() {
        Some(p) => {
            let _ = writeln!(s, "stereo: {} {}", p.left, p.right);
        }
        None => s.push_str("stereo: none\n"),
    }
    s
}

pub fn write_calibration(path: &Path, calib: &CalibrationSet) -> Result<(), IoError> {
    super::write_file(path, format_calibration(calib).as_bytes())
}
