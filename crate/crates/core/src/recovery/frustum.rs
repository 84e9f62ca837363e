use nalgebra::Matrix3x4;

use super::RecoveryError;
use crate::config::{FrustumMode, PipelineConfig};
use crate::geometry::{project_point, projection_matrix, MIN_DEPTH};
use crate::model::{Box2D, CalibrationSet, Detection2D, Point, PointCloud};

/// Where a frustum proposal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrustumSource {
    Single { view: usize, det2d: usize },
    Stereo { left: (usize, usize), right: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumPoint {
    pub point: Point,
    /// Gaussian weight of the image-plane position, in `(0, 1]`.
    pub gaussian: f64,
    /// Whether the point falls inside the instance mask.
    pub mask_flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrustumProposal {
    pub source: FrustumSource,
    pub points: Vec<FrustumPoint>,
    /// Enlarged boxes used for selection, with their views.
    pub enlarged: Vec<(usize, Box2D)>,
}

impl FrustumProposal {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Scales width and height by `e` about the center, then clamps to the
/// image. A box entirely outside the image is returned unclamped.
pub fn enlarge_box2d(b: &Box2D, e: f64, image: (u32, u32)) -> Box2D {
    let (cx, cy) = b.center();
    let hw = b.width() * e / 2.0;
    let hh = b.height() * e / 2.0;
    let grown = Box2D::new(cx - hw, cy - hh, cx + hw, cy + hh).expect("scaled box keeps a positive extent");
    grown.clamp_to(image.0 as f64, image.1 as f64).unwrap_or(grown)
}

/// `exp(−(x−x0)²/(2w²) − (y−y0)²/(2h²))`.
pub fn gaussian_mask(pixel: (f64, f64), center: (f64, f64), size: (f64, f64)) -> f64 {
    let dx = pixel.0 - center.0;
    let dy = pixel.1 - center.1;
    (-(dx * dx) / (2.0 * size.0 * size.0) - (dy * dy) / (2.0 * size.1 * size.1)).exp()
}

/// Image coordinates and depth of every cloud point in one view, computed
/// once per frame and shared by all frustums of that view.
#[derive(Debug, Clone)]
pub struct ProjectedCloud {
    pub view: usize,
    pixels: Vec<(f64, f64, f64)>,
}

impl ProjectedCloud {
    pub fn new(cloud: &PointCloud, calib: &CalibrationSet, view: usize) -> Self {
        let pt: Matrix3x4<f64> = projection_matrix(calib, view);
        let pixels = cloud.points.iter().map(|p| project_point(&pt, &p.position())).collect();
        Self { view, pixels }
    }

    /// `(u, v)` of point `k` when it lies in front of the camera.
    #[inline]
    pub fn pixel(&self, k: usize) -> Option<(f64, f64)> {
        let (u, v, d) = self.pixels[k];
        (d > MIN_DEPTH).then_some((u, v))
    }
}

/// Per-point selection result for one 2D detection in one view.
struct ViewSelector<'a> {
    proj: &'a ProjectedCloud,
    enlarged: Box2D,
    det: &'a Detection2D,
    mode: FrustumMode,
}

impl<'a> ViewSelector<'a> {
    fn new(
        proj: &'a ProjectedCloud,
        calib: &CalibrationSet,
        det: &'a Detection2D,
        config: &PipelineConfig,
    ) -> Result<Self, RecoveryError> {
        if config.frustum_mode != FrustumMode::Bbox && det.mask.is_none() {
            return Err(RecoveryError::MissingMask);
        }
        let cam = &calib.cameras[proj.view];
        let enlarged = enlarge_box2d(&det.box2d, config.enlargement, (cam.width, cam.height));
        Ok(Self { proj, enlarged, det, mode: config.frustum_mode })
    }

    /// `(gaussian, mask_flag)` when point `k` belongs to this frustum.
    #[inline]
    fn select(&self, k: usize) -> Option<(f64, bool)> {
        let (u, v) = self.proj.pixel(k)?;
        if !self.enlarged.contains(u, v) {
            return None;
        }
        let in_mask = self.det.mask.as_ref().is_some_and(|m| m.contains(u, v));
        if self.mode == FrustumMode::Mask && !in_mask {
            return None;
        }
        let g = gaussian_mask((u, v), self.det.box2d.center(), (self.det.box2d.width(), self.det.box2d.height()));
        Some((g, in_mask))
    }
}

fn finish(
    source: FrustumSource,
    points: Vec<FrustumPoint>,
    enlarged: Vec<(usize, Box2D)>,
    p_min: usize,
) -> Result<FrustumProposal, RecoveryError> {
    if points.len() < p_min {
        return Err(RecoveryError::TooSparse { points: points.len(), p_min });
    }
    Ok(FrustumProposal { source, points, enlarged })
}

/// Points of `cloud` inside the frustum of one 2D detection.
pub fn extract_frustum(
    cloud: &PointCloud,
    calib: &CalibrationSet,
    view: usize,
    det2d: &Detection2D,
    det2d_index: usize,
    config: &PipelineConfig,
) -> Result<FrustumProposal, RecoveryError> {
    extract_frustum_projected(cloud, &ProjectedCloud::new(cloud, calib, view), calib, det2d, det2d_index, config)
}

pub fn extract_frustum_projected(
    cloud: &PointCloud,
    proj: &ProjectedCloud,
    calib: &CalibrationSet,
    det2d: &Detection2D,
    det2d_index: usize,
    config: &PipelineConfig,
) -> Result<FrustumProposal, RecoveryError> {
    let sel = ViewSelector::new(proj, calib, det2d, config)?;
    let points = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(k, p)| sel.select(k).map(|(g, m)| FrustumPoint { point: *p, gaussian: g, mask_flag: m }))
        .collect();
    finish(
        FrustumSource::Single { view: proj.view, det2d: det2d_index },
        points,
        vec![(proj.view, sel.enlarged)],
        config.p_min,
    )
}

/// Points inside both single-view frustums of a stereo pair; the Gaussian
/// weight is the product of the two and the mask flag requires both masks.
#[allow(clippy::too_many_arguments)]
pub fn intersect_frustums(
    cloud: &PointCloud,
    left_proj: &ProjectedCloud,
    right_proj: &ProjectedCloud,
    calib: &CalibrationSet,
    left: (&Detection2D, usize),
    right: (&Detection2D, usize),
    config: &PipelineConfig,
) -> Result<FrustumProposal, RecoveryError> {
    let ls = ViewSelector::new(left_proj, calib, left.0, config)?;
    let rs = ViewSelector::new(right_proj, calib, right.0, config)?;
    let points = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(k, p)| {
            let (gl, ml) = ls.select(k)?;
            let (gr, mr) = rs.select(k)?;
            Some(FrustumPoint { point: *p, gaussian: gl * gr, mask_flag: ml && mr })
        })
        .collect();
    finish(
        FrustumSource::Stereo { left: (left_proj.view, left.1), right: (right_proj.view, right.1) },
        points,
        vec![(left_proj.view, ls.enlarged), (right_proj.view, rs.enlarged)],
        config.p_min,
    )
}
