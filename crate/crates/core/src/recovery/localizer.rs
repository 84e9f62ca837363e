//! 3D localization of frustum proposals.
//!
//! [`Localizer`] is the seam where a learned frustum network would plug in.
//! [`GeometricLocalizer`] is a deterministic baseline built from point
//! statistics alone.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::Vector2;

use super::frustum::FrustumProposal;
use crate::config::{LocalizerParams, PipelineConfig};
use crate::model::{Box3D, ClassLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localized {
    pub box3d: Box3D,
    /// Localization confidence in `[0, 1]`.
    pub score: f64,
}

/// Turns a frustum proposal into a 3D box. Implementations must be
/// deterministic for a given proposal and return boxes with positive dims.
pub trait Localizer: Send + Sync {
    fn name(&self) -> &str;

    /// `None` when the proposal holds no object.
    fn localize(&self, proposal: &FrustumProposal, class: &ClassLabel) -> Option<Localized>;
}

/// Localizers by name; `geometric` is always present.
#[derive(Clone)]
pub struct LocalizerRegistry {
    entries: BTreeMap<String, Arc<dyn Localizer>>,
}

impl LocalizerRegistry {
    pub fn with_builtin(config: &PipelineConfig) -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register(Arc::new(GeometricLocalizer::new(config.localizer_params.clone(), config.p_min)));
        r
    }

    pub fn register(&mut self, localizer: Arc<dyn Localizer>) {
        self.entries.insert(localizer.name().to_string(), localizer);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Localizer>> {
        self.entries.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Baseline localizer:
///
/// 1. drop points within `ground_band` of the 5th height percentile;
/// 2. histogram the remaining points by horizontal range and keep the
///    contiguous run of occupied bins around the weighted mode (weights are
///    the Gaussian channel, boosted inside the mask);
/// 3. estimate yaw from the principal BEV axis, refined
///    to the orientation whose rectangle edges lie closest to the points;
/// 4. take extents along the yaw axes and blend them with the class prior;
///    an extent shorter than its prior is taken as truncated by
///    self-occlusion and replaced by the prior before blending. A box longer
///    than the observed points is anchored on the side facing the sensor.
///
/// The score is the fraction of proposal points that survive.
#[derive(Debug, Clone)]
pub struct GeometricLocalizer {
    params: LocalizerParams,
    p_min: usize,
}

impl GeometricLocalizer {
    pub fn new(params: LocalizerParams, p_min: usize) -> Self {
        Self { params, p_min: p_min.max(1) }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn principal_axis(xy: &[Vector2<f64>]) -> f64 {
    let n = xy.len() as f64;
    let mean = xy.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in xy {
        let d = p - mean;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    0.5 * (2.0 * sxy).atan2(sxx - syy)
}

/// `(min, max)` of the projections onto `(cos θ, sin θ)` and its normal.
fn extents(xy: &[Vector2<f64>], theta: f64) -> ([f64; 2], [f64; 2]) {
    let (s, c) = theta.sin_cos();
    let mut a = [f64::INFINITY, f64::NEG_INFINITY];
    let mut b = [f64::INFINITY, f64::NEG_INFINITY];
    for p in xy {
        let u = c * p.x + s * p.y;
        let v = -s * p.x + c * p.y;
        a = [a[0].min(u), a[1].max(u)];
        b = [b[0].min(v), b[1].max(v)];
    }
    (a, b)
}

/// Sum over points of the distance to the nearest edge of the enclosing
/// rectangle at orientation `theta`. Unlike the rectangle area, this is not
/// fooled by the diagonal of an L-shaped scan.
fn edge_cost(xy: &[Vector2<f64>], theta: f64) -> f64 {
    let (a, b) = extents(xy, theta);
    let (s, c) = theta.sin_cos();
    xy.iter()
        .map(|p| {
            let u = c * p.x + s * p.y;
            let v = -s * p.x + c * p.y;
            (u - a[0]).min(a[1] - u).min(v - b[0]).min(b[1] - v)
        })
        .sum()
}

/// Orientation (mod π/2) of the enclosing rectangle whose edges hug the
/// points best: a 1° scan over `[0, π/2)` from `start`, then two finer passes.
fn refine_yaw(xy: &[Vector2<f64>], start: f64) -> f64 {
    let mut best = start;
    let mut best_cost = edge_cost(xy, start);
    let mut step = 1f64.to_radians();
    let mut center = start;
    let mut span = 45isize;
    for _ in 0..3 {
        for k in -span..=span {
            let t = center + k as f64 * step;
            let cost = edge_cost(xy, t);
            if cost < best_cost - 1e-12 {
                best_cost = cost;
                best = t;
            }
        }
        center = best;
        step /= 10.0;
        span = 10;
    }
    best
}

/// Places an interval of length `d` on an axis where the points span
/// `[lo, hi]` and the sensor sits at `sensor`.
fn place(lo: f64, hi: f64, d: f64, sensor: f64) -> f64 {
    if hi - lo >= d {
        (lo + hi) / 2.0
    } else if sensor <= lo {
        lo + d / 2.0
    } else if sensor >= hi {
        hi - d / 2.0
    } else {
        (lo + hi) / 2.0
    }
}

impl Localizer for GeometricLocalizer {
    fn name(&self) -> &str {
        "geometric"
    }

    fn localize(&self, proposal: &FrustumProposal, class: &ClassLabel) -> Option<Localized> {
        let total = proposal.points.len();
        if total < self.p_min {
            return None;
        }
        let p = &self.params;

        let mut heights: Vec<f64> = proposal.points.iter().map(|q| q.point.z).collect();
        heights.sort_by(f64::total_cmp);
        let ground = percentile(&heights, 0.05);
        let above: Vec<_> = proposal.points.iter().filter(|q| q.point.z > ground + p.ground_band).collect();
        if above.len() < self.p_min {
            return None;
        }

        let range = |q: &&super::FrustumPoint| q.point.x.hypot(q.point.y);
        let r_min = above.iter().map(range).fold(f64::INFINITY, f64::min);
        let bin_of = |r: f64| ((r - r_min) / p.range_bin).floor() as usize;
        let nbins = bin_of(above.iter().map(range).fold(0.0, f64::max)) + 1;
        let mut weight = vec![0.0; nbins];
        let mut count = vec![0usize; nbins];
        for q in &above {
            let b = bin_of(range(q));
            weight[b] += q.gaussian * if q.mask_flag { p.mask_boost } else { 1.0 };
            count[b] += 1;
        }
        let mode = (0..nbins).fold(0, |m, b| if weight[b] > weight[m] { b } else { m });
        let mut lo = mode;
        while lo > 0 && count[lo - 1] > 0 {
            lo -= 1;
        }
        let mut hi = mode;
        while hi + 1 < nbins && count[hi + 1] > 0 {
            hi += 1;
        }
        let kept: Vec<_> = above.into_iter().filter(|q| (lo..=hi).contains(&bin_of(range(q)))).collect();
        if kept.len() < self.p_min {
            return None;
        }

        let xy: Vec<Vector2<f64>> = kept.iter().map(|q| Vector2::new(q.point.x, q.point.y)).collect();
        let theta = refine_yaw(&xy, principal_axis(&xy));

        let [pl, ph, pw] = class.dim_prior;
        // choose which rectangle axis carries the length: the better observed
        // (longer) extent should agree with its prior
        let (ea, eb) = extents(&xy, theta);
        let (da, db) = (ea[1] - ea[0], eb[1] - eb[0]);
        let cost = |along: f64, across: f64| {
            let (big, prior_big) = if along >= across { (along, pl) } else { (across, pw) };
            let over = (along - pl).max(0.0) / pl + (across - pw).max(0.0) / pw;
            (big - prior_big).abs() / prior_big + 2.0 * over
        };
        let yaw = if cost(da, db) <= cost(db, da) { theta } else { theta + FRAC_PI_2 };
        let (el, ew) = extents(&xy, yaw);

        let blend = |obs: f64, prior: f64| (1.0 - p.prior_blend) * obs.max(prior) + p.prior_blend * prior;
        let l = blend(el[1] - el[0], pl);
        let w = blend(ew[1] - ew[0], pw);
        let top = kept.iter().map(|q| q.point.z).fold(f64::NEG_INFINITY, f64::max);
        let h = blend(top - ground, ph).max(1e-3);

        let cu = place(el[0], el[1], l, 0.0);
        let cv = place(ew[0], ew[1], w, 0.0);
        let (s, c) = yaw.sin_cos();
        let center = [c * cu - s * cv, s * cu + c * cv, ground + h / 2.0];

        let box3d = Box3D::new(center, l.max(1e-3), h, w.max(1e-3), yaw.rem_euclid(2.0 * PI)).ok()?;
        Some(Localized { box3d, score: kept.len() as f64 / total as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassId, LabelSet, Point};
    use crate::recovery::{FrustumPoint, FrustumSource};

    fn proposal(points: Vec<[f64; 3]>) -> FrustumProposal {
        FrustumProposal {
            source: FrustumSource::Single { view: 0, det2d: 0 },
            points: points
                .into_iter()
                .map(|[x, y, z]| FrustumPoint { point: Point::new(x, y, z, 0.5).unwrap(), gaussian: 1.0, mask_flag: false })
                .collect(),
            enlarged: vec![],
        }
    }

    /// Points on a regular grid over all six faces of `b`.
    fn surface(b: &Box3D, step: f64) -> Vec<[f64; 3]> {
        let [l, h, w] = b.dims();
        let (s, c) = b.yaw().sin_cos();
        let ctr = b.center();
        let mut out = vec![];
        let n = |d: f64| (d / step).ceil() as usize;
        let mut push = |u: f64, v: f64, z: f64| {
            out.push([ctr.x + c * u - s * v, ctr.y + s * u + c * v, ctr.z + z]);
        };
        for i in 0..=n(l) {
            for j in 0..=n(w) {
                let (u, v) = (-l / 2.0 + l * i as f64 / n(l) as f64, -w / 2.0 + w * j as f64 / n(w) as f64);
                push(u, v, -h / 2.0);
                push(u, v, h / 2.0);
            }
            for k in 0..=n(h) {
                let z = -h / 2.0 + h * k as f64 / n(h) as f64;
                let u = -l / 2.0 + l * i as f64 / n(l) as f64;
                push(u, -w / 2.0, z);
                push(u, w / 2.0, z);
            }
        }
        for j in 0..=n(w) {
            for k in 0..=n(h) {
                let v = -w / 2.0 + w * j as f64 / n(w) as f64;
                let z = -h / 2.0 + h * k as f64 / n(h) as f64;
                push(-l / 2.0, v, z);
                push(l / 2.0, v, z);
            }
        }
        out
    }

    fn yaw_err(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(PI);
        d.min(PI - d)
    }

    #[test]
    fn recovers_a_box_from_its_surface() {
        let labels = LabelSet::kitti();
        let car = labels.get(ClassId(0)).unwrap();
        let loc = GeometricLocalizer::new(LocalizerParams::default(), 10);
        for (k, yaw) in [0.0, 0.4, 1.2, 2.0, 2.9].into_iter().enumerate() {
            let gt = Box3D::new([12.0 + k as f64, -3.0 + k as f64, -0.9], 4.2, 1.5, 1.7, yaw).unwrap();
            let out = loc.localize(&proposal(surface(&gt, 0.1)), car).unwrap();
            assert!((out.box3d.center() - gt.center()).norm() < 0.2, "center {:?}", out.box3d.center());
            assert!(yaw_err(out.box3d.yaw(), yaw) < 0.2);
            for (a, b) in out.box3d.dims().iter().zip(gt.dims()) {
                assert!((a - b).abs() / b < 0.3);
            }
        }
    }

    #[test]
    fn ground_only_is_no_object() {
        let labels = LabelSet::kitti();
        let pts: Vec<_> = (0..200).map(|k| [10.0 + (k % 20) as f64 * 0.1, (k / 20) as f64 * 0.1, -1.73]).collect();
        let loc = GeometricLocalizer::new(LocalizerParams::default(), 10);
        assert!(loc.localize(&proposal(pts), labels.get(ClassId(0)).unwrap()).is_none());
    }

    #[test]
    fn deterministic() {
        let labels = LabelSet::kitti();
        let gt = Box3D::new([8.0, 1.0, -0.8], 0.8, 1.7, 0.6, 0.3).unwrap();
        let p = proposal(surface(&gt, 0.05));
        let loc = GeometricLocalizer::new(LocalizerParams::default(), 10);
        let ped = labels.get(ClassId(1)).unwrap();
        assert_eq!(loc.localize(&p, ped), loc.localize(&p, ped));
    }

    #[test]
    fn registry_has_geometric() {
        let r = LocalizerRegistry::with_builtin(&PipelineConfig::default());
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["geometric"]);
        assert!(r.get("geometric").is_some());
        assert!(r.get("pointnet").is_none());
    }
}
