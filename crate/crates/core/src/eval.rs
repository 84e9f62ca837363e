//! Detection metrics: greedy GT matching, interpolated AP, TP errors and NDS*.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::fusion::FusedDetection;
use crate::geometry::iou_3d;
use crate::model::{Box3D, ClassId, Detection3D, LabelSet};

#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub box3d: Box3D,
    pub class: ClassId,
    /// Opaque difficulty tag supplied with the data.
    pub difficulty: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthFrame {
    pub frame_id: String,
    pub boxes: Vec<GtBox>,
}

/// When a detection counts as hitting a ground-truth box of its class.
#[derive(Debug, Clone, PartialEq)]
pub enum MatchCriterion {
    /// `IoU3d >= threshold`, with a per-class threshold (default for the rest).
    Iou3d { default: f64, per_class: BTreeMap<ClassId, f64> },
    /// BEV center distance `<= d` meters.
    CenterDistance(f64),
}

impl MatchCriterion {
    /// 0.7 for vehicle classes (Car, Van, Truck, Bus), 0.5 otherwise.
    pub fn kitti(labels: &LabelSet) -> Self {
        let per_class = labels
            .iter()
            .filter(|l| matches!(l.name.to_ascii_lowercase().as_str(), "car" | "van" | "truck" | "bus"))
            .map(|l| (l.id, 0.7))
            .collect();
        Self::Iou3d { default: 0.5, per_class }
    }

    /// The same IoU threshold for every class.
    pub fn iou(t: f64) -> Self {
        Self::Iou3d { default: t, per_class: BTreeMap::new() }
    }

    /// Match quality (higher is better) when `det` satisfies the criterion.
    fn quality(&self, det: &Box3D, gt: &Box3D, class: ClassId) -> Option<f64> {
        match self {
            Self::Iou3d { default, per_class } => {
                let t = per_class.get(&class).copied().unwrap_or(*default);
                let iou = iou_3d(det, gt);
                (iou >= t && iou > 0.0).then_some(iou)
            }
            Self::CenterDistance(d) => {
                let dist = bev_distance(det, gt);
                (dist <= *d).then_some(-dist)
            }
        }
    }
}

fn bev_distance(a: &Box3D, b: &Box3D) -> f64 {
    let (ca, cb) = (a.center(), b.center());
    (ca.x - cb.x).hypot(ca.y - cb.y)
}

impl From<&FusedDetection> for Detection3D {
    fn from(f: &FusedDetection) -> Self {
        Detection3D { box3d: f.box3d, score: f.score, class: f.class }
    }
}

/// Per-frame outcome of [`match_to_gt`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameLabeling {
    /// For each detection, the matched GT index (a TP) or `None` (a FP).
    pub det_to_gt: Vec<Option<usize>>,
    /// For each GT box, whether it was matched; unmatched ones are FNs.
    pub gt_matched: Vec<bool>,
}

impl FrameLabeling {
    pub fn tp(&self) -> usize {
        self.det_to_gt.iter().filter(|m| m.is_some()).count()
    }
    pub fn fp(&self) -> usize {
        self.det_to_gt.len() - self.tp()
    }
    pub fn fn_(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

/// Greedy matching in descending score order (ties to the lower index):
/// each detection takes the best still-free GT of its class that satisfies
/// `criterion`.
pub fn match_to_gt(dets: &[Detection3D], gt: &GroundTruthFrame, criterion: &MatchCriterion) -> FrameLabeling {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut det_to_gt = vec![None; dets.len()];
    let mut gt_matched = vec![false; gt.boxes.len()];
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gb) in gt.boxes.iter().enumerate() {
            if gt_matched[g] || gb.class != d.class {
                continue;
            }
            if let Some(q) = criterion.quality(&d.box3d, &gb.box3d, d.class) {
                if best.is_none_or(|(_, bq)| q > bq) {
                    best = Some((g, q));
                }
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = true;
            det_to_gt[i] = Some(g);
        }
    }
    FrameLabeling { det_to_gt, gt_matched }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Eleven,
    #[default]
    Forty,
    All,
}

impl std::str::FromStr for Interpolation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "11" | "eleven" => Ok(Self::Eleven),
            "40" | "forty" => Ok(Self::Forty),
            "all" => Ok(Self::All),
            _ => Err(format!("unknown interpolation '{s}' (expected 11, 40 or all)")),
        }
    }
}

/// Precision/recall after each detection in descending score order.
pub fn pr_curve(scored: &[(f64, bool)], n_gt: usize) -> Vec<(f64, f64)> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    sorted
        .iter()
        .enumerate()
        .map(|(k, &(_, is_tp))| {
            tp += is_tp as usize;
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (recall, tp as f64 / (k + 1) as f64)
        })
        .collect()
}

/// AP from a `(recall, precision)` curve. Precision at recall `r` is the
/// maximum precision at any recall `>= r`.
pub fn average_precision(curve: &[(f64, f64)], interpolation: Interpolation) -> f64 {
    let interp = |r: f64| curve.iter().filter(|p| p.0 >= r - 1e-12).map(|p| p.1).fold(0.0, f64::max);
    match interpolation {
        Interpolation::Eleven => (0..=10).map(|k| interp(k as f64 / 10.0)).sum::<f64>() / 11.0,
        Interpolation::Forty => (1..=40).map(|k| interp(k as f64 / 40.0)).sum::<f64>() / 40.0,
        Interpolation::All => {
            let mut ap = 0.0;
            let mut prev = 0.0;
            for &(r, _) in curve {
                if r > prev {
                    ap += (r - prev) * interp(r);
                    prev = r;
                }
            }
            ap
        }
    }
}

/// `(mATE, mASE, mAOE)` over `(detection, gt)` pairs; 1.0 each when empty.
pub fn tp_errors(pairs: &[(Box3D, Box3D)]) -> (f64, f64, f64) {
    if pairs.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let n = pairs.len() as f64;
    let mut ate = 0.0;
    let mut ase = 0.0;
    let mut aoe = 0.0;
    for (d, g) in pairs {
        ate += bev_distance(d, g);
        let (dd, gd) = (d.dims(), g.dims());
        let inter: f64 = (0..3).map(|k| dd[k].min(gd[k])).product();
        ase += 1.0 - inter / (d.volume() + g.volume() - inter);
        let diff = (d.yaw() - g.yaw()).rem_euclid(2.0 * PI);
        aoe += diff.min(2.0 * PI - diff);
    }
    (ate / n, ase / n, aoe / n)
}

/// `(3·mAP + Σ (1 − min(1, e))) / 6` over the three TP errors.
pub fn nds_star(map: f64, mate: f64, mase: f64, maoe: f64) -> f64 {
    let tp: f64 = [mate, mase, maoe].iter().map(|e| 1.0 - e.min(1.0)).sum();
    (3.0 * map + tp) / 6.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: ClassId,
    pub name: String,
    pub ap: f64,
    pub n_gt: usize,
    pub n_det: usize,
    pub tp: usize,
    pub fp: usize,
    /// `(recall, precision)` after each detection in score order.
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub interpolation: Interpolation,
    pub frames: usize,
    pub per_class: Vec<ClassReport>,
    /// Mean AP over classes that have ground truth.
    pub map: f64,
    pub mate: f64,
    pub mase: f64,
    pub maoe: f64,
    pub nds_star: f64,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>8} {:>6} {:>6} {:>6} {:>6}", "class", "AP", "GT", "det", "TP", "FP");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<12} {:>8.4} {:>6} {:>6} {:>6} {:>6}",
                c.name, c.ap, c.n_gt, c.n_det, c.tp, c.fp
            );
        }
        let _ = writeln!(s, "mAP   {:.4}", self.map);
        let _ = writeln!(s, "mATE  {:.4} m", self.mate);
        let _ = writeln!(s, "mASE  {:.4}", self.mase);
        let _ = writeln!(s, "mAOE  {:.4} rad", self.maoe);
        let _ = writeln!(s, "NDS*  {:.4}", self.nds_star);
        let _ = writeln!(s, "frames {} ({:?}-point interpolation)", self.frames, self.interpolation);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Accumulates labeled detections over frames.
#[derive(Debug, Clone)]
pub struct Evaluator {
    criterion: MatchCriterion,
    frames: usize,
    scored: BTreeMap<ClassId, Vec<(f64, bool)>>,
    n_gt: BTreeMap<ClassId, usize>,
    pairs: Vec<(f64, Box3D, Box3D)>,
}

impl Evaluator {
    pub fn new(criterion: MatchCriterion) -> Self {
        Self { criterion, frames: 0, scored: BTreeMap::new(), n_gt: BTreeMap::new(), pairs: Vec::new() }
    }

    pub fn add_frame(&mut self, dets: &[Detection3D], gt: &GroundTruthFrame) -> FrameLabeling {
        let lab = match_to_gt(dets, gt, &self.criterion);
        self.frames += 1;
        for g in &gt.boxes {
            *self.n_gt.entry(g.class).or_default() += 1;
        }
        for (d, m) in dets.iter().zip(&lab.det_to_gt) {
            self.scored.entry(d.class).or_default().push((d.score, m.is_some()));
            if let Some(g) = m {
                self.pairs.push((d.score, d.box3d, gt.boxes[*g].box3d));
            }
        }
        lab
    }

    pub fn merge(&mut self, other: Evaluator) {
        self.frames += other.frames;
        for (c, v) in other.scored {
            self.scored.entry(c).or_default().extend(v);
        }
        for (c, n) in other.n_gt {
            *self.n_gt.entry(c).or_default() += n;
        }
        self.pairs.extend(other.pairs);
    }

    /// `(precision, recall)` over all classes for detections scoring at
    /// least `threshold`; precision is 1 when nothing passes.
    pub fn precision_recall_at(&self, threshold: f64) -> (f64, f64) {
        let (mut tp, mut n) = (0usize, 0usize);
        for v in self.scored.values() {
            for &(s, t) in v {
                if s >= threshold {
                    n += 1;
                    tp += t as usize;
                }
            }
        }
        let gt: usize = self.n_gt.values().sum();
        let p = if n == 0 { 1.0 } else { tp as f64 / n as f64 };
        let r = if gt == 0 { 0.0 } else { tp as f64 / gt as f64 };
        (p, r)
    }

    /// TP errors over matched pairs whose detection scores at least `threshold`.
    pub fn tp_errors_at(&self, threshold: f64) -> (f64, f64, f64) {
        let pairs: Vec<_> = self.pairs.iter().filter(|p| p.0 >= threshold).map(|p| (p.1, p.2)).collect();
        tp_errors(&pairs)
    }

    pub fn report(&self, labels: &LabelSet, interpolation: Interpolation) -> EvalReport {
        let classes: std::collections::BTreeSet<ClassId> = self.n_gt.keys().chain(self.scored.keys()).copied().collect();
        let mut per_class = Vec::new();
        for c in classes {
            let scored = self.scored.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            let n_gt = self.n_gt.get(&c).copied().unwrap_or(0);
            let curve = pr_curve(scored, n_gt);
            let tp = scored.iter().filter(|s| s.1).count();
            per_class.push(ClassReport {
                class: c,
                name: labels.name(c).to_string(),
                ap: if n_gt == 0 { 0.0 } else { average_precision(&curve, interpolation) },
                n_gt,
                n_det: scored.len(),
                tp,
                fp: scored.len() - tp,
                pr_curve: curve,
            });
        }
        let with_gt: Vec<f64> = per_class.iter().filter(|c| c.n_gt > 0).map(|c| c.ap).collect();
        let map = if with_gt.is_empty() { 0.0 } else { with_gt.iter().sum::<f64>() / with_gt.len() as f64 };
        let (mate, mase, maoe) = self.tp_errors_at(f64::NEG_INFINITY);
        EvalReport {
            interpolation,
            frames: self.frames,
            per_class,
            map,
            mate,
            mase,
            maoe,
            nds_star: nds_star(map, mate, mase, maoe),
        }
    }
}
