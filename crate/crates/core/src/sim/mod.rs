//! Synthetic scenes and corrupted detector outputs.
//!
//! Every random draw comes from a generator keyed by `(seed, stream, entity)`,
//! so adding an object leaves the randomness of all others untouched.

mod detector;
mod scene;

pub use detector::{corrupt_2d, corrupt_3d, SimDetection2D, SimDetection3D};
pub use scene::{generate_scene, rig_calibration, sample_object_points, Scene};

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::GroundTruthFrame;
use crate::model::{ClassId, FrameInput, LabelSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("could not place object {object} after {attempts} attempts")]
    PlacementFailure { object: usize, attempts: usize },
    #[error("invalid simulator spec: {0}")]
    InvalidSpec(String),
}

/// Finalizer of SplitMix64, used to fold keys into one seed.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one `(seed, stream, entity)` key.
pub fn keyed_rng(seed: u64, stream: u64, entity: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(mix(mix(mix(seed) ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ entity))
}

pub(crate) mod streams {
    pub const PLACEMENT: u64 = 1;
    pub const SURFACE: u64 = 2;
    pub const GROUND: u64 = 3;
    pub const CLUTTER: u64 = 4;
    pub const DET3D: u64 = 10;
    pub const DET3D_FP: u64 = 11;
    pub const DET2D: u64 = 20;
    pub const DET2D_FP: u64 = 21;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraRig {
    Mono,
    Stereo { baseline: f64 },
    /// `cameras` views evenly spaced in azimuth.
    Multi { cameras: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Inclusive object count range.
    pub objects: (usize, usize),
    /// Relative class frequencies, indexed by class id.
    pub class_mix: Vec<f64>,
    /// Mean `(l, h, w)` per class.
    pub class_dims: Vec<[f64; 3]>,
    /// Relative standard deviation of object dimensions.
    pub dim_sigma: f64,
    /// Horizontal range of object centers (m).
    pub range: (f64, f64),
    /// Surface points per m² at 1 m; falls off with 1/range².
    pub density: f64,
    pub ground_points: usize,
    pub clutter_points: usize,
    /// Sensor height above the ground plane (m).
    pub sensor_height: f64,
    pub rig: CameraRig,
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::for_labels(&LabelSet::kitti())
    }
}

impl SceneSpec {
    pub fn for_labels(labels: &LabelSet) -> Self {
        Self {
            objects: (4, 12),
            class_mix: labels.iter().map(|l| l.prior).collect(),
            class_dims: labels.iter().map(|l| l.dim_prior).collect(),
            dim_sigma: 0.05,
            range: (5.0, 40.0),
            density: 20_000.0,
            ground_points: 4000,
            clutter_points: 600,
            sensor_height: 1.73,
            rig: CameraRig::Mono,
            max_attempts: 200,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.into()));
        if self.objects.0 > self.objects.1 {
            return bad("object range is empty");
        }
        if self.class_mix.is_empty() || self.class_mix.len() != self.class_dims.len() {
            return bad("class_mix and class_dims must be non-empty and of equal length");
        }
        if self.class_mix.iter().any(|w| !(*w >= 0.0)) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return bad("class weights must be non-negative with a positive sum");
        }
        if self.class_dims.iter().flatten().any(|d| !(*d > 0.0)) {
            return bad("class dims must be positive");
        }
        if !(self.range.0 > 0.0 && self.range.0 < self.range.1) {
            return bad("range must satisfy 0 < min < max");
        }
        if !(self.density >= 0.0) || !(self.dim_sigma >= 0.0) || !(self.sensor_height > 0.0) {
            return bad("density, dim_sigma must be >= 0 and sensor_height > 0");
        }
        match self.rig {
            CameraRig::Stereo { baseline } if !(baseline > 0.0) => bad("stereo baseline must be positive"),
            CameraRig::Multi { cameras: 0 } => bad("multi rig needs at least one camera"),
            _ => Ok(()),
        }
    }
}

/// Clamped normal score distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub mean: f64,
    pub sigma: f64,
}

impl ScoreModel {
    pub const TP: Self = Self { mean: 0.85, sigma: 0.1 };
    pub const FP: Self = Self { mean: 0.4, sigma: 0.15 };

    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        let s = self.mean + self.sigma * normal(rng);
        s.clamp(0.01, 0.99)
    }
}

pub(crate) fn normal(rng: &mut impl rand::Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Row-stochastic class confusion: `rows[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    /// Keeps the true class with probability `1 − p`, otherwise picks one of
    /// the other classes uniformly.
    pub fn uniform(classes: usize, p: f64) -> Self {
        let off = if classes > 1 { p / (classes - 1) as f64 } else { 0.0 };
        let rows = (0..classes)
            .map(|i| (0..classes).map(|j| if i == j { 1.0 - if classes > 1 { p } else { 0.0 } } else { off }).collect())
            .collect();
        Self { rows }
    }

    fn validate(&self) -> Result<(), SimError> {
        let n = self.rows.len();
        for r in &self.rows {
            if r.len() != n || r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidSpec("confusion rows must be square, non-negative and sum to 1".into()));
            }
        }
        Ok(())
    }

    pub fn apply(&self, class: ClassId, rng: &mut impl rand::Rng) -> ClassId {
        let Some(row) = self.rows.get(class.0 as usize) else { return class };
        let mut u: f64 = rng.random();
        for (j, p) in row.iter().enumerate() {
            if u < *p {
                return ClassId(j as u16);
            }
            u -= p;
        }
        class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Noise3D {
    pub fn_rate: f64,
    /// Spurious boxes per GT object (count is rounded).
    pub fp_rate: f64,
    pub center_sigma: f64,
    /// Relative.
    pub dim_sigma: f64,
    pub yaw_sigma: f64,
    /// Copies emitted per detected object.
    pub duplicates: usize,
    /// Extra center jitter of each copy (m); yaw jitter is a tenth of it in rad.
    pub dup_jitter: f64,
    pub tp_score: ScoreModel,
    pub fp_score: ScoreModel,
    pub confusion: Option<ConfusionMatrix>,
}

impl Default for Noise3D {
    fn default() -> Self {
        Self {
            fn_rate: 0.1,
            fp_rate: 0.1,
            center_sigma: 0.1,
            dim_sigma: 0.04,
            yaw_sigma: 0.05,
            duplicates: 1,
            dup_jitter: 0.2,
            tp_score: ScoreModel::TP,
            fp_score: ScoreModel::FP,
            confusion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Noise2D {
    pub fn_rate: f64,
    /// Spurious boxes per visible GT object in each view (count is rounded).
    pub fp_rate: f64,
    /// Corner jitter (px).
    pub corner_sigma: f64,
    pub tp_score: ScoreModel,
    pub fp_score: ScoreModel,
    pub confusion: Option<ConfusionMatrix>,
    /// Attach elliptical instance masks.
    pub masks: bool,
}

impl Default for Noise2D {
    fn default() -> Self {
        Self {
            fn_rate: 0.05,
            fp_rate: 0.05,
            corner_sigma: 2.0,
            tp_score: ScoreModel::TP,
            fp_score: ScoreModel::FP,
            confusion: None,
            masks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorNoiseSpec {
    pub det3d: Noise3D,
    pub det2d: Noise2D,
}

impl DetectorNoiseSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let rate = |v: f64, n: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SimError::InvalidSpec(format!("{n} must lie in [0, 1]")))
            }
        };
        let (a, b) = (&self.det3d, &self.det2d);
        rate(a.fn_rate, "det3d.fn_rate")?;
        rate(a.fp_rate, "det3d.fp_rate")?;
        rate(b.fn_rate, "det2d.fn_rate")?;
        rate(b.fp_rate, "det2d.fp_rate")?;
        let sigmas = [
            a.center_sigma,
            a.dim_sigma,
            a.yaw_sigma,
            a.dup_jitter,
            a.tp_score.sigma,
            a.fp_score.sigma,
            b.corner_sigma,
            b.tp_score.sigma,
            b.fp_score.sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(SimError::InvalidSpec("standard deviations must be >= 0".into()));
        }
        if a.duplicates == 0 {
            return Err(SimError::InvalidSpec("det3d.duplicates must be >= 1".into()));
        }
        for c in [&a.confusion, &b.confusion].into_iter().flatten() {
            c.validate()?;
        }
        Ok(())
    }
}

/// A scene with detector outputs and their links to ground truth.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub scene: Scene,
    pub dets3d: Vec<SimDetection3D>,
    pub dets2d: Vec<Vec<SimDetection2D>>,
}

impl SimFrame {
    pub fn gt(&self) -> &GroundTruthFrame {
        &self.scene.gt
    }

    pub fn to_input(&self) -> FrameInput {
        FrameInput {
            cloud: self.scene.cloud.clone(),
            calib: self.scene.calib.clone(),
            dets3d: self.dets3d.iter().map(|d| d.det.clone()).collect(),
            dets2d_per_view: self.dets2d.iter().map(|v| v.iter().map(|d| d.det.clone()).collect()).collect(),
        }
    }
}

/// Scene plus both corrupted detector outputs for one seed.
pub fn simulate_frame(spec: &SceneSpec, noise: &DetectorNoiseSpec, seed: u64) -> Result<SimFrame, SimError> {
    noise.validate()?;
    let scene = generate_scene(spec, seed)?;
    let dets3d = corrupt_3d(&scene.gt, spec, &noise.det3d, seed);
    let dets2d = corrupt_2d(&scene.gt, &scene.calib, &noise.det2d, spec.class_mix.len(), seed);
    Ok(SimFrame { scene, dets3d, dets2d })
}
