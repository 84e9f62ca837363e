use std::f64::consts::TAU;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;

use super::scene::azimuth_range;
use super::{keyed_rng, normal, streams, Noise2D, Noise3D, SceneSpec};
use crate::eval::GroundTruthFrame;
use crate::geometry::iou_2d;
use crate::matching::project_to_image;
use crate::model::{Box2D, Box3D, CalibrationSet, ClassId, Detection2D, Detection3D, Mask};

/// Projected boxes smaller than this (px²) are treated as invisible.
const MIN_VISIBLE_AREA: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimDetection3D {
    pub det: Detection3D,
    /// Source GT index; `None` for spurious boxes.
    pub gt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDetection2D {
    pub det: Detection2D,
    pub gt: Option<usize>,
}

fn jitter_box(b: &Box3D, center: f64, dims: f64, yaw: f64, rng: &mut impl Rng) -> Box3D {
    let c = b.center();
    let [l, h, w] = b.dims();
    let mut scale = || (1.0 + dims * normal(rng)).max(0.3);
    let (l, h, w) = (l * scale(), h * scale(), w * scale());
    let c = [c.x + center * normal(rng), c.y + center * normal(rng), c.z + 0.5 * center * normal(rng)];
    Box3D::new(c, l, h, w, b.yaw() + yaw * normal(rng)).expect("jittered box stays valid")
}

/// LiDAR detector output: per GT box, dropped with `fn_rate`, otherwise
/// `duplicates` copies of one noisy estimate, each further jittered by
/// `dup_jitter`; plus `round(fp_rate · |GT|)` spurious boxes away from the
/// objects. Class confusion is drawn once per object.
pub fn corrupt_3d(gt: &GroundTruthFrame, spec: &SceneSpec, noise: &Noise3D, seed: u64) -> Vec<SimDetection3D> {
    let mut out = Vec::new();
    for (i, g) in gt.boxes.iter().enumerate() {
        let mut rng = keyed_rng(seed, streams::DET3D, i as u64);
        if rng.random::<f64>() < noise.fn_rate {
            continue;
        }
        let class = noise.confusion.as_ref().map_or(g.class, |c| c.apply(g.class, &mut rng));
        let base = jitter_box(&g.box3d, noise.center_sigma, noise.dim_sigma, noise.yaw_sigma, &mut rng);
        for k in 0..noise.duplicates {
            let b = if k == 0 { base } else { jitter_box(&base, noise.dup_jitter, 0.0, 0.1 * noise.dup_jitter, &mut rng) };
            out.push(SimDetection3D {
                det: Detection3D { box3d: b, score: noise.tp_score.sample(&mut rng), class },
                gt: Some(i),
            });
        }
    }

    let n_fp = (noise.fp_rate * gt.boxes.len() as f64).round() as usize;
    let classes = WeightedIndex::new(&spec.class_mix).expect("validated class mix");
    let (az_lo, az_hi) = azimuth_range(&spec.rig);
    let ground_z = -spec.sensor_height;
    for j in 0..n_fp {
        let mut rng = keyed_rng(seed, streams::DET3D_FP, j as u64);
        let class = classes.sample(&mut rng);
        let [l, h, w] = spec.class_dims[class];
        let mut b = None;
        for _ in 0..50 {
            let r = rng.random_range(spec.range.0..spec.range.1);
            let a = rng.random_range(az_lo..az_hi);
            let cand = Box3D::new([r * a.cos(), r * a.sin(), ground_z + h / 2.0], l, h, w, rng.random_range(0.0..TAU))
                .expect("prior dims are positive");
            let rad = 0.5 * l.hypot(w);
            let free = gt.boxes.iter().all(|g| {
                let d = g.box3d.center() - cand.center();
                d.x.hypot(d.y) > rad + 0.5 * g.box3d.length().hypot(g.box3d.width())
            });
            b = Some(cand);
            if free {
                break;
            }
        }
        out.push(SimDetection3D {
            det: Detection3D { box3d: b.expect("at least one attempt"), score: noise.fp_score.sample(&mut rng), class: ClassId(class as u16) },
            gt: None,
        });
    }
    out
}

fn ellipse_mask(b: &Box2D) -> Mask {
    let (cx, cy) = b.center();
    let (a, bb) = (b.width() / 2.0, b.height() / 2.0);
    Mask::from_fn(b, |u, v| ((u - cx) / a).powi(2) + ((v - cy) / bb).powi(2) <= 1.0)
}

/// RGB detector output per view: every GT box whose clipped projection is
/// visible, with jittered corners, dropped with `fn_rate`; plus
/// `round(fp_rate · visible)` spurious boxes over background.
pub fn corrupt_2d(
    gt: &GroundTruthFrame,
    calib: &CalibrationSet,
    noise: &Noise2D,
    n_classes: usize,
    seed: u64,
) -> Vec<Vec<SimDetection2D>> {
    (0..calib.cameras.len())
        .map(|view| {
            let cam = &calib.cameras[view];
            let (iw, ih) = (cam.width as f64, cam.height as f64);
            let key = |k: usize| ((view as u64) << 32) | k as u64;
            let projected: Vec<Option<Box2D>> = gt
                .boxes
                .iter()
                .map(|g| project_to_image(&g.box3d, calib, view).map(|p| p.box2d).filter(|b| b.area() >= MIN_VISIBLE_AREA))
                .collect();
            let mut out = Vec::new();
            for (i, p) in projected.iter().enumerate() {
                let Some(p) = p else { continue };
                let mut rng = keyed_rng(seed, streams::DET2D, key(i));
                if rng.random::<f64>() < noise.fn_rate {
                    continue;
                }
                let mut j = || noise.corner_sigma * normal(&mut rng);
                let (x0, y0, x1, y1) = (p.x_min() + j(), p.y_min() + j(), p.x_max() + j(), p.y_max() + j());
                let Some(b) = Box2D::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
                    .ok()
                    .and_then(|b| b.clamp_to(iw, ih))
                else {
                    continue;
                };
                let class = noise.confusion.as_ref().map_or(gt.boxes[i].class, |c| c.apply(gt.boxes[i].class, &mut rng));
                out.push(SimDetection2D {
                    det: Detection2D {
                        box2d: b,
                        score: noise.tp_score.sample(&mut rng),
                        class,
                        mask: noise.masks.then(|| ellipse_mask(&b)),
                    },
                    gt: Some(i),
                });
            }

            let visible = projected.iter().flatten().count();
            let n_fp = (noise.fp_rate * visible as f64).round() as usize;
            for k in 0..n_fp {
                let mut rng = keyed_rng(seed, streams::DET2D_FP, key(k));
                let mut b = None;
                for _ in 0..20 {
                    let w = rng.random_range(20.0..150.0f64).min(iw - 1.0);
                    let h = (w * rng.random_range(0.5..2.0)).min(ih - 1.0);
                    let x = rng.random_range(0.0..iw - w);
                    let y = rng.random_range(0.0..ih - h);
                    let cand = Box2D::new(x, y, x + w, y + h).expect("positive size");
                    b = Some(cand);
                    if projected.iter().flatten().all(|p| iou_2d(p, &cand) <= 0.1) {
                        break;
                    }
                }
                let b = b.expect("at least one attempt");
                out.push(SimDetection2D {
                    det: Detection2D {
                        box2d: b,
                        score: noise.fp_score.sample(&mut rng),
                        class: ClassId(rng.random_range(0..n_classes.max(1)) as u16),
                        mask: noise.masks.then(|| ellipse_mask(&b)),
                    },
                    gt: None,
                });
            }
            out
        })
        .collect()
}
