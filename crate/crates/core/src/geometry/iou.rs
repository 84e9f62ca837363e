use nalgebra::Vector2;

use super::projection::box3d_corners;
use crate::model::{Box2D, Box3D};

/// Overlap areas (m² or px²) below this count as no overlap.
pub const MIN_OVERLAP_AREA: f64 = 1e-12;

pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = a.x_max().min(b.x_max()) - a.x_min().max(b.x_min());
    let ih = a.y_max().min(b.y_max()) - a.y_min().max(b.y_min());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    if inter < MIN_OVERLAP_AREA {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Counter-clockwise ground-plane footprint of a box.
pub fn bev_footprint(b: &Box3D) -> [Vector2<f64>; 4] {
    let c = box3d_corners(b);
    [c[0].xy(), c[1].xy(), c[2].xy(), c[3].xy()]
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    acc / 2.0
}

#[inline]
fn cross(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland–Hodgman clipping of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn convex_clip(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output: Vec<Vector2<f64>> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    if let Some(x) = segment_line(prev, cur, a, b) {
                        output.push(x);
                    }
                }
                output.push(cur);
            } else if prev_in {
                if let Some(x) = segment_line(prev, cur, a, b) {
                    output.push(x);
                }
            }
        }
    }
    output
}

fn segment_line(p: Vector2<f64>, q: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> Option<Vector2<f64>> {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let denom = d1 - d2;
    if denom.abs() < f64::EPSILON * (d1.abs() + d2.abs()).max(1e-300) {
        return None;
    }
    let t = d1 / denom;
    Some(p + (q - p) * t)
}

fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    // circumscribed circles disjoint: no overlap possible
    let ra = 0.5 * a.length().hypot(a.width());
    let rb = 0.5 * b.length().hypot(b.width());
    let d = (a.center().xy() - b.center().xy()).norm();
    if d > ra + rb {
        return 0.0;
    }
    let inter = polygon_area(&convex_clip(&bev_footprint(a), &bev_footprint(b))).abs();
    if inter < MIN_OVERLAP_AREA {
        0.0
    } else {
        inter
    }
}

/// IoU of the yaw-rotated ground footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.length() * a.width() + b.length() * b.width() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = a1.min(b1) - a0.max(b0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter_area = bev_intersection(a, b);
    if inter_area == 0.0 {
        return 0.0;
    }
    let inter = inter_area * dz;
    (inter / (a.volume() + b.volume() - inter)).clamp(0.0, 1.0)
}
