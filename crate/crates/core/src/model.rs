//! Domain types shared by every stage of the pipeline.
//!
//! The working frame is the LiDAR frame: x forward, y left, z up. Box yaw is a
//! rotation about +z, stored in `[0, 2π)`. Image boxes are in pixels.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{record}: field `{field}` is not finite")]
    NonFiniteField { record: String, field: &'static str },
    #[error("{record}: score {score} outside [0, 1]")]
    ScoreOutOfRange { record: String, score: f64 },
    #[error("calibration has no cameras")]
    EmptyCalibration,
    #[error("{record}: {reason}")]
    InvalidValue { record: String, reason: String },
    #[error("frame has {got} 2D detection lists but calibration has {expected} cameras")]
    ViewCountMismatch { expected: usize, got: usize },
    #[error("unknown class {0}")]
    UnknownClass(String),
}

fn check_finite(record: &str, field: &'static str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFiniteField { record: record.to_string(), field })
    }
}

fn invalid(record: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidValue { record: record.into(), reason: reason.into() }
}

/// Wraps an angle into `[0, 2π)`.
///
/// The closed upper bound 2π is identified with 0.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub reflectance: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, reflectance: f64) -> Result<Self, ModelError> {
        let p = Self { x, y, z, reflectance };
        p.check("point")?;
        Ok(p)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    fn check(&self, record: &str) -> Result<(), ModelError> {
        check_finite(record, "x", self.x)?;
        check_finite(record, "y", self.y)?;
        check_finite(record, "z", self.z)?;
        check_finite(record, "reflectance", self.reflectance)?;
        if !(0.0..=1.0).contains(&self.reflectance) {
            return Err(invalid(record, format!("reflectance {} outside [0, 1]", self.reflectance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub frame_id: String,
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(frame_id: impl Into<String>, points: Vec<Point>) -> Self {
        Self { frame_id: frame_id.into(), points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Oriented 3D box: center, dimensions (length along heading, height, width)
/// and yaw about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    center: Vector3<f64>,
    l: f64,
    h: f64,
    w: f64,
    yaw: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], l: f64, h: f64, w: f64, yaw: f64) -> Result<Self, ModelError> {
        let rec = "box3d";
        for (field, v) in [("x", center[0]), ("y", center[1]), ("z", center[2])] {
            check_finite(rec, field, v)?;
        }
        for (field, v) in [("l", l), ("h", h), ("w", w), ("yaw", yaw)] {
            check_finite(rec, field, v)?;
        }
        if l <= 0.0 || h <= 0.0 || w <= 0.0 {
            return Err(invalid(rec, format!("non-positive dimensions ({l}, {h}, {w})")));
        }
        Ok(Self { center: Vector3::from(center), l, h, w, yaw: normalize_angle(yaw) })
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn length(&self) -> f64 {
        self.l
    }

    pub fn height(&self) -> f64 {
        self.h
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    /// `(l, h, w)`
    pub fn dims(&self) -> [f64; 3] {
        [self.l, self.h, self.w]
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn volume(&self) -> f64 {
        self.l * self.h * self.w
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.center.z - self.h / 2.0, self.center.z + self.h / 2.0)
    }

    pub fn translated(&self, d: Vector3<f64>) -> Self {
        Self { center: self.center + d, ..*self }
    }

    pub fn with_yaw(&self, yaw: f64) -> Self {
        Self { yaw: normalize_angle(yaw), ..*self }
    }

    pub fn with_center(&self, c: Vector3<f64>) -> Self {
        Self { center: c, ..*self }
    }
}

/// Axis-aligned image box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, ModelError> {
        let rec = "box2d";
        check_finite(rec, "x_min", x_min)?;
        check_finite(rec, "y_min", y_min)?;
        check_finite(rec, "x_max", x_max)?;
        check_finite(rec, "y_max", y_max)?;
        if x_min >= x_max || y_min >= y_max {
            return Err(invalid(
                rec,
                format!("degenerate extent ({x_min}, {y_min}, {x_max}, {y_max})"),
            ));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Closed containment test.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x_min && u <= self.x_max && v >= self.y_min && v <= self.y_max
    }

    pub fn top_left(&self) -> (f64, f64) {
        (self.x_min, self.y_min)
    }

    pub fn bottom_right(&self) -> (f64, f64) {
        (self.x_max, self.y_max)
    }

    /// Intersection with `[0, width] × [0, height]`; `None` when empty.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<Self> {
        Box2D::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(width),
            self.y_max.min(height),
        )
        .ok()
    }
}

/// Binary instance mask on the integer pixel grid covering a box.
///
/// Pixel `(i, j)` spans `[x0 + i, x0 + i + 1) × [y0 + j, y0 + j + 1)`. The
/// raster is run-length encoded in row-major order, alternating runs of
/// unset and set pixels, starting with an (possibly empty) unset run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    x0: i64,
    y0: i64,
    width: u32,
    height: u32,
    runs: Vec<u32>,
    bits: Vec<bool>,
}

impl Mask {
    /// Raster grid covering `b`.
    pub fn grid_for(b: &Box2D) -> (i64, i64, u32, u32) {
        let x0 = b.x_min().floor() as i64;
        let y0 = b.y_min().floor() as i64;
        let w = (b.x_max().ceil() as i64 - x0).max(1) as u32;
        let h = (b.y_max().ceil() as i64 - y0).max(1) as u32;
        (x0, y0, w, h)
    }

    /// Rasterizes `inside(px_center_u, px_center_v)` over the grid of `b`.
    /// Only pixels whose centers lie inside `b` may be set.
    pub fn from_fn(b: &Box2D, inside: impl Fn(f64, f64) -> bool) -> Self {
        let (x0, y0, w, h) = Self::grid_for(b);
        let mut bits = Vec::with_capacity(w as usize * h as usize);
        for j in 0..h {
            for i in 0..w {
                let u = x0 as f64 + i as f64 + 0.5;
                let v = y0 as f64 + j as f64 + 0.5;
                bits.push(b.contains(u, v) && inside(u, v));
            }
        }
        let runs = encode_runs(&bits);
        Self { x0, y0, width: w, height: h, runs, bits }
    }

    pub fn from_runs(x0: i64, y0: i64, width: u32, height: u32, runs: Vec<u32>) -> Result<Self, ModelError> {
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != width as u64 * height as u64 {
            return Err(invalid(
                "mask",
                format!("runs cover {total} pixels, raster has {}", width as u64 * height as u64),
            ));
        }
        let mut bits = Vec::with_capacity(total as usize);
        for (k, &r) in runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(k % 2 == 1, r as usize));
        }
        Ok(Self { x0, y0, width, height, runs, bits })
    }

    pub fn origin(&self) -> (i64, i64) {
        (self.x0, self.y0)
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        let i = u.floor() as i64 - self.x0;
        let j = v.floor() as i64 - self.y0;
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            return false;
        }
        self.bits[j as usize * self.width as usize + i as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Every set pixel center lies inside `b`.
    pub fn within(&self, b: &Box2D) -> bool {
        self.bits.iter().enumerate().filter(|(_, s)| **s).all(|(k, _)| {
            let i = (k % self.width as usize) as f64;
            let j = (k / self.width as usize) as f64;
            b.contains(self.x0 as f64 + i + 0.5, self.y0 as f64 + j + 0.5)
        })
    }
}

fn encode_runs(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub u16);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection3D {
    pub box3d: Box3D,
    pub score: f64,
    pub class: ClassId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub box2d: Box2D,
    pub score: f64,
    pub class: ClassId,
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub projection: Matrix3x4<f64>,
    pub width: u32,
    pub height: u32,
    pub intrinsics: Option<Matrix3<f64>>,
}

impl CameraModel {
    pub fn new(
        projection: Matrix3x4<f64>,
        width: u32,
        height: u32,
        intrinsics: Option<Matrix3<f64>>,
    ) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(invalid("camera", "zero image size"));
        }
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteField { record: "camera".into(), field: "P" });
        }
        let sv = projection.singular_values();
        let max = sv.max();
        if max <= 0.0 || sv.min() < 1e-12 * max {
            return Err(invalid("camera", "projection matrix is rank deficient"));
        }
        Ok(Self { projection, width, height, intrinsics })
    }

    /// Intrinsics, falling back to the left 3×3 block of P (exact for
    /// rectified KITTI-style projections).
    pub fn intrinsics_or_projection(&self) -> Matrix3<f64> {
        self.intrinsics.unwrap_or_else(|| self.projection.fixed_view::<3, 3>(0, 0).into_owned())
    }
}

/// Relative pose of a stereo pair: `X_left = R · X_right + t` in camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoPair {
    pub left: usize,
    pub right: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub lidar_to_cam: Matrix4<f64>,
    pub cameras: Vec<CameraModel>,
    pub stereo_pairs: Vec<StereoPair>,
}

impl CalibrationSet {
    pub fn new(
        lidar_to_cam: Matrix4<f64>,
        cameras: Vec<CameraModel>,
        stereo_pairs: Vec<StereoPair>,
    ) -> Result<Self, ModelError> {
        let c = Self { lidar_to_cam, cameras, stereo_pairs };
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.cameras.is_empty() {
            return Err(ModelError::EmptyCalibration);
        }
        if self.lidar_to_cam.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteField { record: "calibration".into(), field: "T" });
        }
        if self.lidar_to_cam.determinant().abs() < 1e-12 {
            return Err(invalid("calibration", "lidar-to-camera transform is singular"));
        }
        for (k, p) in self.stereo_pairs.iter().enumerate() {
            let rec = format!("stereo pair {k}");
            if p.left >= self.cameras.len() || p.right >= self.cameras.len() || p.left == p.right {
                return Err(invalid(rec, "camera index out of range"));
            }
            let r = &p.rotation;
            let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
            if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
                return Err(invalid(rec, "rotation is not a proper orthonormal matrix"));
            }
        }
        Ok(())
    }
}

/// One entry of the label set Λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: ClassId,
    pub name: String,
    /// `(l, h, w)` in meters.
    pub dim_prior: [f64; 3],
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<ClassLabel>,
}

impl LabelSet {
    pub fn new(labels: Vec<ClassLabel>) -> Result<Self, ModelError> {
        if labels.is_empty() {
            return Err(invalid("labels", "empty label set"));
        }
        let sum: f64 = labels.iter().map(|l| l.prior).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("labels", format!("class priors sum to {sum}, expected 1")));
        }
        for (k, l) in labels.iter().enumerate() {
            if l.id.0 as usize != k {
                return Err(invalid(&l.name, "label ids must be 0..n in order"));
            }
            if l.dim_prior.iter().any(|d| !(*d > 0.0)) {
                return Err(invalid(&l.name, "dimension prior must be positive"));
            }
            if !(l.prior > 0.0 && l.prior < 1.0) && labels.len() > 1 {
                return Err(invalid(&l.name, "class prior must lie in (0, 1)"));
            }
        }
        Ok(Self { labels })
    }

    /// Labels with a uniform prior.
    pub fn uniform(entries: &[(&str, [f64; 3])]) -> Result<Self, ModelError> {
        let p = 1.0 / entries.len() as f64;
        Self::new(
            entries
                .iter()
                .enumerate()
                .map(|(k, (name, dims))| ClassLabel {
                    id: ClassId(k as u16),
                    name: name.to_string(),
                    dim_prior: *dims,
                    prior: p,
                })
                .collect(),
        )
    }

    /// Car / Pedestrian / Cyclist with typical KITTI mean dimensions.
    pub fn kitti() -> Self {
        Self::uniform(&[
            ("Car", [3.9, 1.56, 1.6]),
            ("Pedestrian", [0.8, 1.73, 0.6]),
            ("Cyclist", [1.76, 1.73, 0.6]),
        ])
        .expect("static label set is valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassLabel> {
        self.labels.iter()
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassLabel> {
        self.labels.get(id.0 as usize)
    }

    pub fn contains(&self, id: ClassId) -> bool {
        (id.0 as usize) < self.labels.len()
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassLabel> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn name(&self, id: ClassId) -> &str {
        self.get(id).map(|l| l.name.as_str()).unwrap_or("?")
    }

    pub fn prior(&self, id: ClassId) -> f64 {
        self.get(id).map(|l| l.prior).unwrap_or(1.0 / self.labels.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub cloud: PointCloud,
    pub calib: CalibrationSet,
    pub dets3d: Vec<Detection3D>,
    pub dets2d_per_view: Vec<Vec<Detection2D>>,
}

impl FrameInput {
    pub fn frame_id(&self) -> &str {
        &self.cloud.frame_id
    }
}

fn check_score(record: &str, score: f64) -> Result<(), ModelError> {
    check_finite(record, "score", score)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(ModelError::ScoreOutOfRange { record: record.to_string(), score });
    }
    Ok(())
}

/// Checks every frame invariant, drops detections below the configured score
/// floors and normalizes yaw.
pub fn validate_frame(frame: FrameInput, config: &PipelineConfig, labels: &LabelSet) -> Result<FrameInput, ModelError> {
    let FrameInput { cloud, calib, dets3d, dets2d_per_view } = frame;
    for (k, p) in cloud.points.iter().enumerate() {
        p.check(&format!("point {k}"))?;
    }
    calib.check()?;
    if dets2d_per_view.len() != calib.cameras.len() {
        return Err(ModelError::ViewCountMismatch { expected: calib.cameras.len(), got: dets2d_per_view.len() });
    }

    let mut kept3d = Vec::with_capacity(dets3d.len());
    for (k, d) in dets3d.into_iter().enumerate() {
        let rec = format!("3D detection {k}");
        check_score(&rec, d.score)?;
        if !labels.contains(d.class) {
            return Err(ModelError::UnknownClass(format!("{} ({rec})", d.class)));
        }
        if d.score >= config.min_score_3d {
            let b = d.box3d.with_yaw(d.box3d.yaw());
            kept3d.push(Detection3D { box3d: b, ..d });
        }
    }

    let mut kept2d = Vec::with_capacity(dets2d_per_view.len());
    for (v, dets) in dets2d_per_view.into_iter().enumerate() {
        let mut view = Vec::with_capacity(dets.len());
        for (k, d) in dets.into_iter().enumerate() {
            let rec = format!("2D detection {k} (view {v})");
            check_score(&rec, d.score)?;
            if !labels.contains(d.class) {
                return Err(ModelError::UnknownClass(format!("{} ({rec})", d.class)));
            }
            if let Some(m) = &d.mask {
                if !m.within(&d.box2d) {
                    return Err(invalid(rec, "mask extends beyond its box"));
                }
            }
            if d.score >= config.min_score_2d {
                view.push(d);
            }
        }
        kept2d.push(view);
    }

    Ok(FrameInput { cloud, calib, dets3d: kept3d, dets2d_per_view: kept2d })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calib() -> CalibrationSet {
        let p = Matrix3x4::new(700.0, 0.0, 600.0, 0.0, 0.0, 700.0, 180.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        CalibrationSet::new(
            Matrix4::identity(),
            vec![CameraModel::new(p, 1242, 375, None).unwrap()],
            vec![],
        )
        .unwrap()
    }

    fn det3d(yaw: f64, score: f64) -> Detection3D {
        Detection3D { box3d: Box3D::new([10.0, 0.0, 0.0], 4.0, 1.5, 1.8, yaw).unwrap(), score, class: ClassId(0) }
    }

    fn frame(dets3d: Vec<Detection3D>) -> FrameInput {
        FrameInput { cloud: PointCloud::default(), calib: calib(), dets3d, dets2d_per_view: vec![vec![]] }
    }

    #[test]
    fn yaw_is_normalized() {
        let f = validate_frame(frame(vec![det3d(7.0, 0.5)]), &PipelineConfig::default(), &LabelSet::kitti()).unwrap();
        assert!((f.dets3d[0].box3d.yaw() - (7.0 - TAU)).abs() < 1e-12);
        assert!((f.dets3d[0].box3d.yaw() - 0.7168).abs() < 1e-4);
        assert_eq!(normalize_angle(-1e-18), 0.0);
        assert_eq!(normalize_angle(TAU), 0.0);
    }

    #[test]
    fn score_out_of_range_is_rejected() {
        let err = validate_frame(frame(vec![det3d(0.0, 1.3)]), &PipelineConfig::default(), &LabelSet::kitti())
            .unwrap_err();
        assert!(matches!(err, ModelError::ScoreOutOfRange { ref record, .. } if record.contains("3D detection 0")));
    }

    #[test]
    fn low_scores_are_filtered() {
        let cfg = PipelineConfig { min_score_3d: 0.05, ..PipelineConfig::default() };
        let f = validate_frame(frame(vec![det3d(0.0, 0.02), det3d(0.0, 0.3)]), &cfg, &LabelSet::kitti()).unwrap();
        assert_eq!(f.dets3d.len(), 1);
        assert_eq!(f.dets3d[0].score, 0.3);
    }

    #[test]
    fn validation_is_idempotent() {
        let cfg = PipelineConfig::default();
        let labels = LabelSet::kitti();
        let once = validate_frame(frame(vec![det3d(7.0, 0.5), det3d(-2.0, 0.01)]), &cfg, &labels).unwrap();
        let twice = validate_frame(once.clone(), &cfg, &labels).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn non_finite_and_empty_calibration() {
        assert!(matches!(
            Box3D::new([f64::NAN, 0.0, 0.0], 1.0, 1.0, 1.0, 0.0),
            Err(ModelError::NonFiniteField { field: "x", .. })
        ));
        assert!(Box3D::new([0.0; 3], 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(matches!(
            CalibrationSet::new(Matrix4::identity(), vec![], vec![]),
            Err(ModelError::EmptyCalibration)
        ));
        let mut f = frame(vec![]);
        f.cloud.points.push(Point { x: 0.0, y: f64::INFINITY, z: 0.0, reflectance: 0.1 });
        let err = validate_frame(f, &PipelineConfig::default(), &LabelSet::kitti()).unwrap_err();
        assert_eq!(err, ModelError::NonFiniteField { record: "point 0".into(), field: "y" });
    }

    #[test]
    fn view_count_must_match_cameras() {
        let mut f = frame(vec![]);
        f.dets2d_per_view.push(vec![]);
        assert!(matches!(
            validate_frame(f, &PipelineConfig::default(), &LabelSet::kitti()),
            Err(ModelError::ViewCountMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn label_priors_sum_to_one() {
        let l = LabelSet::kitti();
        let s: f64 = l.iter().map(|c| c.prior).sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(LabelSet::new(vec![ClassLabel {
            id: ClassId(0),
            name: "a".into(),
            dim_prior: [1.0; 3],
            prior: 0.5
        }])
        .is_err());
    }

    #[test]
    fn mask_rle_roundtrip_and_lookup() {
        let b = Box2D::new(10.2, 5.0, 20.0, 12.5).unwrap();
        let (cx, cy) = b.center();
        let m = Mask::from_fn(&b, |u, v| ((u - cx) / 5.0).powi(2) + ((v - cy) / 3.0).powi(2) <= 1.0);
        assert!(m.within(&b));
        assert!(m.contains(cx, cy));
        assert!(!m.contains(10.3, 5.1));
        let (x0, y0) = m.origin();
        let (w, h) = m.size();
        let back = Mask::from_runs(x0, y0, w, h, m.runs().to_vec()).unwrap();
        assert_eq!(back, m);
        assert!(Mask::from_runs(0, 0, 2, 2, vec![1, 1]).is_err());
    }

    #[test]
    fn stereo_rotation_must_be_proper() {
        let c = calib();
        let bad = StereoPair { left: 0, right: 0, rotation: Matrix3::identity(), translation: Vector3::x() };
        assert!(CalibrationSet::new(c.lidar_to_cam, c.cameras.clone(), vec![bad]).is_err());
    }
}
