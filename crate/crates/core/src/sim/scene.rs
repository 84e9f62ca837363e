use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::{keyed_rng, normal, streams, CameraRig, SceneSpec, SimError};
use crate::eval::{GroundTruthFrame, GtBox};
use crate::model::{Box3D, CalibrationSet, CameraModel, ClassId, Point, PointCloud, StereoPair};

const FX: f64 = 721.5377;
const CX: f64 = 609.5593;
const CY: f64 = 172.854;
const IMAGE: (u32, u32) = (1242, 375);
/// Objects in mono/stereo rigs are kept within this azimuth of the optical axis.
const MAX_AZIMUTH: f64 = 35.0 * PI / 180.0;
const ANGULAR_BIN: f64 = PI / 180.0;

#[derive(Debug, Clone)]
pub struct Scene {
    pub seed: u64,
    pub gt: GroundTruthFrame,
    pub cloud: PointCloud,
    pub calib: CalibrationSet,
    /// GT index each point was sampled from; `None` for ground and clutter.
    pub point_owner: Vec<Option<usize>>,
}

impl Scene {
    /// Visible surface points of GT object `i`.
    pub fn object_points(&self, i: usize) -> usize {
        self.point_owner.iter().filter(|o| **o == Some(i)).count()
    }
}

/// KITTI-like rig: camera axes `x = −y_lidar`, `y = −z_lidar`, `z = x_lidar`,
/// co-located with the sensor.
pub fn rig_calibration(rig: &CameraRig) -> CalibrationSet {
    let k = Matrix3::new(FX, 0.0, CX, 0.0, FX, CY, 0.0, 0.0, 1.0);
    #[rustfmt::skip]
    let t = Matrix4::new(
        0.0, -1.0, 0.0, 0.0,
        0.0, 0.0, -1.0, 0.0,
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let cam = |r: Matrix3<f64>, tx: f64| {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        rt[(0, 3)] = tx;
        CameraModel::new(k * rt, IMAGE.0, IMAGE.1, Some(k)).expect("rig camera is valid")
    };
    let (cameras, pairs) = match *rig {
        CameraRig::Mono => (vec![cam(Matrix3::identity(), 0.0)], vec![]),
        CameraRig::Stereo { baseline } => (
            vec![cam(Matrix3::identity(), 0.0), cam(Matrix3::identity(), -baseline)],
            vec![StereoPair {
                left: 0,
                right: 1,
                rotation: Matrix3::identity(),
                translation: Vector3::new(baseline, 0.0, 0.0),
            }],
        ),
        CameraRig::Multi { cameras } => (
            (0..cameras)
                .map(|i| {
                    // yaw about the camera's vertical axis towards azimuth θ
                    let th = TAU * i as f64 / cameras as f64;
                    let (s, c) = th.sin_cos();
                    cam(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c), 0.0)
                })
                .collect(),
            vec![],
        ),
    };
    CalibrationSet::new(t, cameras, pairs).expect("rig calibration is valid")
}

pub(crate) fn azimuth_range(rig: &CameraRig) -> (f64, f64) {
    match rig {
        CameraRig::Multi { .. } => (-PI, PI),
        _ => (-MAX_AZIMUTH, MAX_AZIMUTH),
    }
}

/// Surface points on the faces of `b` that face the sensor at the origin.
/// Each face receives a Poisson number of points with mean
/// `density · area · cos(incidence) / range²`.
pub fn sample_object_points(b: &Box3D, density: f64, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let (s, c) = b.yaw().sin_cos();
    let ax = Vector3::new(c, s, 0.0);
    let ay = Vector3::new(-s, c, 0.0);
    let az = Vector3::z();
    let [l, h, w] = b.dims();
    let ctr = b.center();
    // (normal, half extent along normal, tangent axes with half extents)
    let faces = [
        (ax, l / 2.0, (ay, w / 2.0), (az, h / 2.0)),
        (-ax, l / 2.0, (ay, w / 2.0), (az, h / 2.0)),
        (ay, w / 2.0, (ax, l / 2.0), (az, h / 2.0)),
        (-ay, w / 2.0, (ax, l / 2.0), (az, h / 2.0)),
        (az, h / 2.0, (ax, l / 2.0), (ay, w / 2.0)),
        (-az, h / 2.0, (ax, l / 2.0), (ay, w / 2.0)),
    ];
    let mut out = Vec::new();
    for (n, d, (t1, e1), (t2, e2)) in faces {
        let fc = ctr + n * d;
        let r2 = fc.norm_squared();
        let cos = -n.dot(&fc) / r2.sqrt();
        if cos <= 0.0 {
            continue;
        }
        let mean = density * 4.0 * e1 * e2 * cos / r2;
        if !(mean > 0.0) {
            continue;
        }
        let count = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
        let dir = fc / r2.sqrt();
        for _ in 0..count {
            let u: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(-1.0..1.0);
            out.push(fc + t1 * (u * e1) + t2 * (v * e2) + dir * (0.01 * normal(rng)));
        }
    }
    out
}

fn angular_bin(p: &Vector3<f64>) -> (i32, i32) {
    let az = p.y.atan2(p.x);
    let el = p.z.atan2(p.x.hypot(p.y));
    ((az / ANGULAR_BIN).floor() as i32, (el / ANGULAR_BIN).floor() as i32)
}

/// Ground truth, point cloud and calibration for one seed.
///
/// Objects are placed by rejection sampling so that their circumscribed
/// circles are disjoint (hence BEV IoU 0). Occlusion uses a 1° depth buffer
/// in which the nearest object owns each angular bin.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SimError> {
    spec.validate()?;
    let calib = rig_calibration(&spec.rig);
    let ground_z = -spec.sensor_height;
    let (az_lo, az_hi) = azimuth_range(&spec.rig);

    let mut rng = keyed_rng(seed, streams::PLACEMENT, u64::MAX);
    let n = rng.random_range(spec.objects.0..=spec.objects.1);
    let classes = WeightedIndex::new(&spec.class_mix).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let mut boxes: Vec<(Box3D, ClassId, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = keyed_rng(seed, streams::PLACEMENT, i as u64);
        let mut placed = None;
        for _ in 0..spec.max_attempts {
            let class = classes.sample(&mut rng);
            let dims = spec.class_dims[class].map(|m| m * (1.0 + spec.dim_sigma * normal(&mut rng)).max(0.5));
            let r = rng.random_range(spec.range.0..spec.range.1);
            let a = rng.random_range(az_lo..az_hi);
            let yaw = rng.random_range(0.0..TAU);
            let center = [r * a.cos(), r * a.sin(), ground_z + dims[1] / 2.0];
            let b = Box3D::new(center, dims[0], dims[1], dims[2], yaw).expect("positive sampled dims");
            let radius = 0.5 * dims[0].hypot(dims[2]);
            let clear = boxes.iter().all(|(o, _, or)| {
                let d = o.center() - b.center();
                d.x.hypot(d.y) > radius + or + 0.1
            });
            if clear {
                placed = Some((b, ClassId(class as u16), radius));
                break;
            }
        }
        boxes.push(placed.ok_or(SimError::PlacementFailure { object: i, attempts: spec.max_attempts })?);
    }

    let mut pts: Vec<(Vector3<f64>, Option<usize>)> = Vec::new();
    for (i, (b, _, _)) in boxes.iter().enumerate() {
        let mut rng = keyed_rng(seed, streams::SURFACE, i as u64);
        pts.extend(sample_object_points(b, spec.density, &mut rng).into_iter().map(|p| (p, Some(i))));
    }
    let mut rng = keyed_rng(seed, streams::GROUND, 0);
    let (g0, g1) = (3.0f64, 60.0f64);
    for _ in 0..spec.ground_points {
        // pdf ∝ 1/r: equal counts per log-range interval
        let r = g0 * (g1 / g0).powf(rng.random::<f64>());
        let a = rng.random_range(az_lo..az_hi);
        pts.push((Vector3::new(r * a.cos(), r * a.sin(), ground_z + 0.02 * normal(&mut rng)), None));
    }
    let mut rng = keyed_rng(seed, streams::CLUTTER, 0);
    for _ in 0..spec.clutter_points {
        for _ in 0..10 {
            let r = rng.random_range(3.0..50.0);
            let a = rng.random_range(az_lo..az_hi);
            let p = Vector3::new(r * a.cos(), r * a.sin(), ground_z + rng.random_range(0.0..2.5));
            let free = boxes.iter().all(|(b, _, rad)| {
                let d = b.center() - p;
                d.x.hypot(d.y) > rad + 0.3
            });
            if free {
                pts.push((p, None));
                break;
            }
        }
    }

    let mut owner: HashMap<(i32, i32), (f64, usize)> = HashMap::new();
    for (p, o) in &pts {
        if let Some(i) = o {
            let r = p.norm();
            owner.entry(angular_bin(p)).and_modify(|e| if r < e.0 { *e = (r, *i) }).or_insert((r, *i));
        }
    }
    let mut rng = keyed_rng(seed, streams::SURFACE, u64::MAX);
    let mut points = Vec::with_capacity(pts.len());
    let mut point_owner = Vec::with_capacity(pts.len());
    for (p, o) in pts {
        let visible = match (owner.get(&angular_bin(&p)), o) {
            (None, _) => true,
            (Some(&(_, i)), Some(j)) => i == j,
            (Some(&(r, _)), None) => p.norm() < r,
        };
        if visible {
            points.push(Point::new(p.x, p.y, p.z, rng.random()).expect("finite point"));
            point_owner.push(o);
        }
    }

    let gt = GroundTruthFrame {
        frame_id: format!("{seed:06}"),
        boxes: boxes.iter().map(|(b, c, _)| GtBox { box3d: *b, class: *c, difficulty: None }).collect(),
    };
    Ok(Scene { seed, cloud: PointCloud::new(gt.frame_id.clone(), points), gt, calib, point_owner })
}
