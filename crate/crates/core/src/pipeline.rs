//! Per-frame orchestration: clustering, matching, recovery, semantic fusion.

use std::time::{Duration, Instant};

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster_detections, ClusterError};
use crate::config::PipelineConfig;
use crate::fusion::{semantic_fusion, FusedDetection, FusionInput, Provenance, RgbEvidence};
use crate::geometry::iou_bev;
use crate::matching::{cluster_nms, match_multi_view, MatchSet, ViewLink};
use crate::model::{FrameInput, LabelSet};
use crate::recovery::{recover, Localizer, RecoveryDiagnostic};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("clustering failed: {0}")]
    Cluster(#[from] ClusterError),
}

/// Wall time and set sizes of each stage of one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub clustering_ms: f64,
    pub matching_ms: f64,
    pub recovery_ms: f64,
    pub fusion_ms: f64,
    pub clusters: usize,
    pub matched: usize,
    pub unmatched_2d: usize,
    pub recovered: usize,
    pub discarded: usize,
    pub output: usize,
}

impl StageReport {
    pub fn total_ms(&self) -> f64 {
        self.clustering_ms + self.matching_ms + self.recovery_ms + self.fusion_ms
    }

    /// Sums counts and times over frames.
    pub fn accumulate(&mut self, o: &StageReport) {
        self.clustering_ms += o.clustering_ms;
        self.matching_ms += o.matching_ms;
        self.recovery_ms += o.recovery_ms;
        self.fusion_ms += o.fusion_ms;
        self.clusters += o.clusters;
        self.matched += o.matched;
        self.unmatched_2d += o.unmatched_2d;
        self.recovered += o.recovered;
        self.discarded += o.discarded;
        self.output += o.output;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub detections: Vec<FusedDetection>,
    pub report: StageReport,
    pub diagnostics: Vec<RecoveryDiagnostic>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Greedy BEV NMS: highest score first (ties to the earlier entry); drops
/// any detection overlapping a kept one above `threshold`. Keeps input order.
pub fn bev_nms(dets: Vec<FusedDetection>, threshold: f64) -> Vec<FusedDetection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut keep = vec![false; dets.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou_bev(&dets[k].box3d, &dets[i].box3d) <= threshold) {
            keep[i] = true;
            kept.push(i);
        }
    }
    dets.into_iter().zip(keep).filter_map(|(d, k)| k.then_some(d)).collect()
}

/// Runs every enabled stage on one validated frame.
///
/// With matching disabled, each cluster is reduced to its best member
/// without image confirmation and every 2D detection is handed to recovery.
/// With semantic fusion disabled, the LiDAR score and class are kept
/// (recovered entries keep their down-weighted score and inherited class).
pub fn run_pipeline(
    frame: &FrameInput,
    config: &PipelineConfig,
    localizer: &dyn Localizer,
    labels: &LabelSet,
) -> Result<PipelineOutput, PipelineError> {
    let mut report = StageReport::default();

    let t = Instant::now();
    let clusters = cluster_detections(&frame.dets3d, config.tau_z, config.clique_cap_factor)?;
    report.clustering_ms = ms(t.elapsed());
    report.clusters = clusters.len();

    let t = Instant::now();
    let matches = if config.enable_matching {
        match_multi_view(&clusters, &frame.dets3d, &frame.dets2d_per_view, &frame.calib, config.tau_b)
    } else {
        let mut kept: Vec<usize> = clusters.iter().map(|c| cluster_nms(c, &frame.dets3d)).collect();
        kept.sort_unstable();
        kept.dedup();
        let discarded_3d = (0..frame.dets3d.len()).filter(|i| kept.binary_search(i).is_err()).collect();
        MatchSet {
            matched: kept.into_iter().map(|det3d| crate::matching::MatchedDetection { det3d, links: vec![] }).collect(),
            unmatched_2d: frame.dets2d_per_view.iter().map(|d| (0..d.len()).collect()).collect(),
            discarded_3d,
        }
    };
    report.matching_ms = ms(t.elapsed());
    report.matched = matches.matched.len();
    report.unmatched_2d = matches.unmatched_2d.iter().map(Vec::len).sum();
    report.discarded = matches.discarded_3d.len();

    let t = Instant::now();
    let recovery = if config.enable_recovery {
        recover(&matches, frame, localizer, labels, config)
    } else {
        Default::default()
    };
    report.recovery_ms = ms(t.elapsed());
    report.recovered = recovery.recovered.len();

    let t = Instant::now();
    let evidence = |l: &ViewLink| {
        let d = &frame.dets2d_per_view[l.view][l.det2d];
        RgbEvidence { link: *l, score: d.score, class: d.class }
    };
    let mut inputs: Vec<FusionInput> = matches
        .matched
        .iter()
        .map(|m| FusionInput {
            det3d: frame.dets3d[m.det3d].clone(),
            det3d_index: Some(m.det3d),
            rgb: m.links.iter().map(evidence).collect(),
            provenance: Provenance::Matched,
        })
        .collect();
    inputs.extend(recovery.recovered.iter().map(|r| FusionInput {
        det3d: r.det3d.clone(),
        det3d_index: None,
        rgb: r.sources.iter().map(evidence).collect(),
        provenance: Provenance::Recovered,
    }));
    let mut detections = if config.enable_semantic {
        semantic_fusion(&inputs, labels)
    } else {
        inputs.iter().map(FusedDetection::passthrough).collect()
    };
    if let Some(th) = config.final_nms {
        detections = bev_nms(detections, th);
    }
    report.fusion_ms = ms(t.elapsed());
    report.output = detections.len();
    debug!(
        "{}: {} clusters, {} matched, {} recovered, {} out",
        frame.frame_id(),
        report.clusters,
        report.matched,
        report.recovered,
        report.output
    );
    Ok(PipelineOutput { detections, report, diagnostics: recovery.diagnostics })
}
