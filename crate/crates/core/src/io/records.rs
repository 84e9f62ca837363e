//! Line-oriented detection and ground-truth records.
//!
//! One record per line, whitespace-separated, fields in fixed order. Lines
//! starting with `#` and blank lines are ignored. Record numbers in errors are
//! 1-based line numbers. See [`SCHEMA_HEADER`] for the field layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::IoError;
use crate::eval::{GroundTruthFrame, GtBox};
use crate::fusion::{FusedDetection, Provenance};
use crate::model::{Box2D, Box3D, ClassId, Detection2D, Detection3D, LabelSet, Mask};

pub const SCHEMA_HEADER: &str = "\
# late-cascade records v1; units: meters, radians, pixels; LiDAR frame x forward, y left, z up
# 3d    <frame> <x> <y> <z> <l> <h> <w> <yaw> <score> <class>
# 2d    <frame> <view> <x_min> <y_min> <x_max> <y_max> <score> <class> [mask=<x0>,<y0>,<w>,<h>:<run>,<run>,...]
# gt    <frame> <x> <y> <z> <l> <h> <w> <yaw> <class> [<difficulty>]
# fused <frame> <x> <y> <z> <l> <h> <w> <yaw> <score> <class> <matched|recovered> <det3d index|->
";

/// Detector outputs for one frame; `dets2d[v]` holds view `v`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub dets3d: Vec<Detection3D>,
    pub dets2d: Vec<Vec<Detection2D>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedRecord {
    pub det: Detection3D,
    pub provenance: Provenance,
    pub det3d_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameRecords {
    pub detections: DetectionSet,
    pub gt: Vec<GtBox>,
    pub fused: Vec<FusedRecord>,
}

/// Parsed records keyed by frame id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Records {
    pub frames: BTreeMap<String, FrameRecords>,
}

impl Records {
    pub fn ground_truth(&self, frame_id: &str) -> GroundTruthFrame {
        GroundTruthFrame {
            frame_id: frame_id.to_string(),
            boxes: self.frames.get(frame_id).map(|f| f.gt.clone()).unwrap_or_default(),
        }
    }
}

pub fn read_records(path: &Path, labels: &LabelSet) -> Result<Records, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_records(&text, path, labels)
}

struct Line<'a> {
    path: &'a Path,
    record: usize,
    fields: Vec<&'a str>,
    labels: &'a LabelSet,
}

impl<'a> Line<'a> {
    fn err(&self, reason: impl Into<String>) -> IoError {
        IoError::SchemaViolation { path: self.path.to_path_buf(), record: self.record, reason: reason.into() }
    }

    fn arity(&self, min: usize, max: usize) -> Result<(), IoError> {
        let n = self.fields.len();
        if n < min || n > max {
            let want = if min == max { min.to_string() } else { format!("{min}-{max}") };
            return Err(self.err(format!("`{}` record has {n} fields, expected {want}", self.fields[0])));
        }
        Ok(())
    }

    fn f64(&self, i: usize, name: &str) -> Result<f64, IoError> {
        let t = self.fields[i];
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(format!("{name} `{t}` is not a finite number")))
    }

    fn score(&self, i: usize) -> Result<f64, IoError> {
        let s = self.f64(i, "score")?;
        if !(0.0..=1.0).contains(&s) {
            return Err(self.err(format!("score {s} outside [0, 1]")));
        }
        Ok(s)
    }

    fn class(&self, i: usize) -> Result<ClassId, IoError> {
        let name = self.fields[i];
        self.labels.by_name(name).map(|l| l.id).ok_or_else(|| self.err(format!("unknown class `{name}`")))
    }

    fn box3d(&self, i: usize) -> Result<Box3D, IoError> {
        let mut v = [0.0; 7];
        for (k, name) in ["x", "y", "z", "l", "h", "w", "yaw"].iter().enumerate() {
            v[k] = self.f64(i + k, name)?;
        }
        Box3D::new([v[0], v[1], v[2]], v[3], v[4], v[5], v[6]).map_err(|e| self.err(e.to_string()))
    }

    fn index(&self, i: usize, name: &str) -> Result<usize, IoError> {
        let t = self.fields[i];
        t.parse::<usize>().map_err(|_| self.err(format!("{name} `{t}` is not a non-negative integer")))
    }

    fn mask(&self, i: usize, b: &Box2D) -> Result<Mask, IoError> {
        let t = self.fields[i];
        let body = t.strip_prefix("mask=").ok_or_else(|| self.err(format!("unexpected field `{t}`")))?;
        let bad = || self.err(format!("malformed mask `{t}`"));
        let (grid, runs) = body.split_once(':').ok_or_else(bad)?;
        let g: Vec<&str> = grid.split(',').collect();
        if g.len() != 4 {
            return Err(bad());
        }
        let x0 = g[0].parse::<i64>().map_err(|_| bad())?;
        let y0 = g[1].parse::<i64>().map_err(|_| bad())?;
        let w = g[2].parse::<u32>().map_err(|_| bad())?;
        let h = g[3].parse::<u32>().map_err(|_| bad())?;
        let runs = runs.split(',').map(|r| r.parse::<u32>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?;
        let m = Mask::from_runs(x0, y0, w, h, runs).map_err(|e| self.err(e.to_string()))?;
        if !m.within(b) {
            return Err(self.err("mask has set pixels outside its box"));
        }
        Ok(m)
    }
}

pub fn parse_records(text: &str, path: &Path, labels: &LabelSet) -> Result<Records, IoError> {
    let mut out = Records::default();
    for (k, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let line = Line { path, record: k + 1, fields: trimmed.split_whitespace().collect(), labels };
        if line.fields.len() < 2 {
            return Err(line.err("record has no frame id"));
        }
        let frame = out.frames.entry(line.fields[1].to_string()).or_default();
        match line.fields[0] {
            "3d" => {
                line.arity(11, 11)?;
                frame.detections.dets3d.push(Detection3D {
                    box3d: line.box3d(2)?,
                    score: line.score(9)?,
                    class: line.class(10)?,
                });
            }
            "2d" => {
                line.arity(9, 10)?;
                let view = line.index(2, "view")?;
                let (x0, y0, x1, y1) =
                    (line.f64(3, "x_min")?, line.f64(4, "y_min")?, line.f64(5, "x_max")?, line.f64(6, "y_max")?);
                let box2d = Box2D::new(x0, y0, x1, y1).map_err(|e| line.err(e.to_string()))?;
                let mask = if line.fields.len() == 10 { Some(line.mask(9, &box2d)?) } else { None };
                let det = Detection2D { box2d, score: line.score(7)?, class: line.class(8)?, mask };
                let views = &mut frame.detections.dets2d;
                if views.len() <= view {
                    views.resize_with(view + 1, Vec::new);
                }
                views[view].push(det);
            }
            "gt" => {
                line.arity(10, 11)?;
                frame.gt.push(GtBox {
                    box3d: line.box3d(2)?,
                    class: line.class(9)?,
                    difficulty: line.fields.get(10).map(|s| s.to_string()),
                });
            }
            "fused" => {
                line.arity(13, 13)?;
                let provenance = match line.fields[11] {
                    "matched" => Provenance::Matched,
                    "recovered" => Provenance::Recovered,
                    other => return Err(line.err(format!("unknown provenance `{other}`"))),
                };
                let det3d_index = match line.fields[12] {
                    "-" => None,
                    _ => Some(line.index(12, "det3d index")?),
                };
                frame.fused.push(FusedRecord {
                    det: Detection3D { box3d: line.box3d(2)?, score: line.score(9)?, class: line.class(10)? },
                    provenance,
                    det3d_index,
                });
            }
            other => return Err(line.err(format!("unknown record kind `{other}`"))),
        }
    }
    Ok(out)
}

fn box_fields(s: &mut String, b: &Box3D) {
    let c = b.center();
    let _ = write!(s, " {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", c.x, c.y, c.z, b.length(), b.height(), b.width(), b.yaw());
}

pub fn format_detections(frame_id: &str, set: &DetectionSet, labels: &LabelSet) -> String {
    let mut s = String::from(SCHEMA_HEADER);
    for d in &set.dets3d {
        let _ = write!(s, "3d {frame_id}");
        box_fields(&mut s, &d.box3d);
        let _ = writeln!(s, " {:.6} {}", d.score, labels.name(d.class));
    }
    for (view, dets) in set.dets2d.iter().enumerate() {
        for d in dets {
            let b = &d.box2d;
            let _ = write!(
                s,
                "2d {frame_id} {view} {:.6} {:.6} {:.6} {:.6} {:.6} {}",
                b.x_min(),
                b.y_min(),
                b.x_max(),
                b.y_max(),
                d.score,
                labels.name(d.class)
            );
            if let Some(m) = &d.mask {
                let (x0, y0) = m.origin();
                let (w, h) = m.size();
                let runs: Vec<String> = m.runs().iter().map(u32::to_string).collect();
                let _ = write!(s, " mask={x0},{y0},{w},{h}:{}", runs.join(","));
            }
            s.push('\n');
        }
    }
    s
}

pub fn format_ground_truth(gt: &GroundTruthFrame, labels: &LabelSet) -> String {
    let mut s = String::from(SCHEMA_HEADER);
    for g in &gt.boxes {
        let _ = write!(s, "gt {}", gt.frame_id);
        box_fields(&mut s, &g.box3d);
        let _ = write!(s, " {}", labels.name(g.class));
        if let Some(d) = &g.difficulty {
            let _ = write!(s, " {d}");
        }
        s.push('\n');
    }
    s
}

pub fn format_fused(frame_id: &str, dets: &[FusedDetection], labels: &LabelSet) -> String {
    let mut s = String::from(SCHEMA_HEADER);
    for d in dets {
        let _ = write!(s, "fused {frame_id}");
        box_fields(&mut s, &d.box3d);
        let prov = match d.provenance {
            Provenance::Matched => "matched",
            Provenance::Recovered => "recovered",
        };
        let idx = d.det3d_index.map(|i| i.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, " {:.6} {} {prov} {idx}", d.score, labels.name(d.class));
    }
    s
}

fn check_token(t: &str) -> Result<(), IoError> {
    if t.is_empty() || t.chars().any(char::is_whitespace) {
        return Err(IoError::Unwritable(t.to_string()));
    }
    Ok(())
}

fn check_labels(labels: &LabelSet) -> Result<(), IoError> {
    labels.iter().try_for_each(|l| check_token(&l.name))
}

pub fn write_detections(path: &Path, frame_id: &str, set: &DetectionSet, labels: &LabelSet) -> Result<(), IoError> {
    check_token(frame_id)?;
    check_labels(labels)?;
    super::write_file(path, format_detections(frame_id, set, labels).as_bytes())
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruthFrame, labels: &LabelSet) -> Result<(), IoError> {
    check_token(&gt.frame_id)?;
    check_labels(labels)?;
    for d in gt.boxes.iter().filter_map(|g| g.difficulty.as_deref()) {
        check_token(d)?;
    }
    super::write_file(path, format_ground_truth(gt, labels).as_bytes())
}

pub fn write_fused(path: &Path, frame_id: &str, dets: &[FusedDetection], labels: &LabelSet) -> Result<(), IoError> {
    check_token(frame_id)?;
    check_labels(labels)?;
    super::write_file(path, format_fused(frame_id, dets, labels).as_bytes())
}
