use nalgebra::{Matrix3x4, Matrix4, Vector3, Vector4};

use crate::model::{Box2D, Box3D, CalibrationSet, CameraModel, PointCloud};

/// Corners closer than this to the principal plane make a box unprojectable.
pub const MIN_DEPTH: f64 = 0.1;

/// Image box enclosing the eight projected corners of a 3D box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedBox {
    pub box2d: Box2D,
    pub min_depth: f64,
}

/// Applies `T` to every point, with homogeneous divide.
pub fn transform_points(cloud: &PointCloud, t: &Matrix4<f64>) -> Vec<Vector3<f64>> {
    cloud
        .points
        .iter()
        .map(|p| {
            let h = t * Vector4::new(p.x, p.y, p.z, 1.0);
            Vector3::new(h.x / h.w, h.y / h.w, h.z / h.w)
        })
        .collect()
}

/// Eight corners of `b`.
///
/// Ordering: the bottom face first, then the top face, each counter-clockwise
/// seen from above starting at the front-left corner `(+l/2, +w/2)` in the
/// box frame. Corners `0..4` are therefore the BEV footprint.
pub fn box3d_corners(b: &Box3D) -> [Vector3<f64>; 8] {
    let (s, c) = b.yaw().sin_cos();
    let (hl, hw, hh) = (b.length() / 2.0, b.width() / 2.0, b.height() / 2.0);
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    let ctr = b.center();
    let mut out = [Vector3::zeros(); 8];
    for (face, dz) in [-hh, hh].into_iter().enumerate() {
        for (k, (dx, dy)) in local.iter().enumerate() {
            out[face * 4 + k] = ctr + Vector3::new(c * dx - s * dy, s * dx + c * dy, dz);
        }
    }
    out
}

/// `P · T` for one camera.
pub fn projection_matrix(calib: &CalibrationSet, view: usize) -> Matrix3x4<f64> {
    calib.cameras[view].projection * calib.lidar_to_cam
}

/// Projects a LiDAR-frame position with a combined `P · T`; returns `(u, v, depth)`.
#[inline]
pub fn project_point(pt: &Matrix3x4<f64>, p: &Vector3<f64>) -> (f64, f64, f64) {
    let h = pt * Vector4::new(p.x, p.y, p.z, 1.0);
    (h.x / h.z, h.y / h.z, h.z)
}

/// Projects the box into `cam` through `t`. `None` when any corner lies at
/// depth `<= MIN_DEPTH` (behind or on the camera plane).
pub fn project_box3d(b: &Box3D, t: &Matrix4<f64>, cam: &CameraModel) -> Option<ProjectedBox> {
    project_box3d_with(b, &(cam.projection * t))
}

pub(crate) fn project_box3d_with(b: &Box3D, pt: &Matrix3x4<f64>) -> Option<ProjectedBox> {
    let mut u_min = f64::INFINITY;
    let mut v_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    let mut min_depth = f64::INFINITY;
    for c in box3d_corners(b) {
        let (u, v, d) = project_point(pt, &c);
        if d <= MIN_DEPTH {
            return None;
        }
        min_depth = min_depth.min(d);
        u_min = u_min.min(u);
        u_max = u_max.max(u);
        v_min = v_min.min(v);
        v_max = v_max.max(v);
    }
    let box2d = Box2D::new(u_min, v_min, u_max, v_max).ok()?;
    Some(ProjectedBox { box2d, min_depth })
}
