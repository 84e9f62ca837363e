//! Detection recovery: 2D detections without a LiDAR match are back-projected
//! into frustums, localized in 3D and kept when their projection agrees with
//! the source box.

mod frustum;
mod localizer;
mod stereo;

pub use frustum::{
    enlarge_box2d, extract_frustum, extract_frustum_projected, gaussian_mask, intersect_frustums, FrustumPoint,
    FrustumProposal, FrustumSource, ProjectedCloud,
};
pub use localizer::{GeometricLocalizer, Localized, Localizer, LocalizerRegistry};
pub use stereo::{epipolar_assign, epipolar_cost};

use log::{debug, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::geometry::{fundamental_matrix, iou_2d, GeometryError};
use crate::matching::{project_to_image, MatchSet, ViewLink};
use crate::model::{Box3D, CalibrationSet, ClassId, Detection2D, Detection3D, FrameInput, LabelSet};

/// Why a single recovery attempt produced nothing.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecoveryError {
    #[error("frustum mode requires an instance mask")]
    MissingMask,
    #[error("frustum holds {points} points, fewer than {p_min}")]
    TooSparse { points: usize, p_min: usize },
    #[error("localizer found no object")]
    NoObject,
    #[error("localized box projects behind the camera or outside the image")]
    NotVisible,
    #[error("projection IoU {iou:.3} fails the confirmation gate")]
    Rejected { iou: f64 },
    #[error("class {0:?} is not in the label set")]
    UnknownClass(ClassId),
    #[error("no stereo partner within the epipolar gate")]
    Unpaired,
    #[error("stereo geometry: {0}")]
    Geometry(#[from] GeometryError),
}

/// A confirmed detection built from 2D evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredDetection {
    /// Class inherited from the 2D detection; score already down-weighted.
    pub det3d: Detection3D,
    /// Raw localizer confidence.
    pub score_loc: f64,
    /// Source 2D detections with their projection IoUs, sorted by view.
    pub sources: Vec<ViewLink>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryDiagnostic {
    pub source: FrustumSource,
    pub error: RecoveryError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecoveryOutput {
    pub recovered: Vec<RecoveredDetection>,
    pub diagnostics: Vec<RecoveryDiagnostic>,
}

/// Projects `box3d` into every source view and applies the confirmation
/// gate. One source: `IoU > tau_d`, score `s2d · IoU`. Two sources:
/// `min(IoU_l, IoU_r) >= tau_d`, score `s_max · IoU_l · IoU_r`. The class
/// comes from the most confident source.
pub fn confirm_recovery(
    box3d: &Box3D,
    score_loc: f64,
    sources: &[(usize, usize, &Detection2D)],
    calib: &CalibrationSet,
    tau_d: f64,
) -> Result<RecoveredDetection, RecoveryError> {
    assert!(matches!(sources.len(), 1 | 2), "one or two source detections");
    let mut links = Vec::with_capacity(sources.len());
    for &(view, det2d, d) in sources {
        let p = project_to_image(box3d, calib, view).ok_or(RecoveryError::NotVisible)?;
        links.push(ViewLink { view, det2d, iou: iou_2d(&p.box2d, &d.box2d) });
    }
    let lead = sources.iter().fold(sources[0].2, |a, s| if s.2.score > a.score { s.2 } else { a });
    let min_iou = links.iter().map(|l| l.iou).fold(f64::INFINITY, f64::min);
    let confirmed = if links.len() == 1 { min_iou > tau_d } else { min_iou >= tau_d };
    if !confirmed {
        return Err(RecoveryError::Rejected { iou: min_iou });
    }
    let score = links.iter().fold(lead.score, |s, l| s * l.iou);
    links.sort_by_key(|l| l.view);
    Ok(RecoveredDetection {
        det3d: Detection3D { box3d: *box3d, score, class: lead.class },
        score_loc,
        sources: links,
    })
}

fn localize_and_confirm(
    proposal: Result<FrustumProposal, RecoveryError>,
    sources: &[(usize, usize, &Detection2D)],
    frame: &FrameInput,
    localizer: &dyn Localizer,
    labels: &LabelSet,
    config: &PipelineConfig,
) -> Result<RecoveredDetection, RecoveryError> {
    let proposal = proposal?;
    let lead = sources.iter().fold(sources[0].2, |a, s| if s.2.score > a.score { s.2 } else { a });
    let label = labels.get(lead.class).ok_or(RecoveryError::UnknownClass(lead.class))?;
    let loc = localizer.localize(&proposal, label).ok_or(RecoveryError::NoObject)?;
    confirm_recovery(&loc.box3d, loc.score, sources, &frame.calib, config.tau_d)
}

/// Recovers 3D detections from the unmatched 2D detections of `matches`.
///
/// With `config.stereo_enabled`, the unmatched boxes of each calibrated
/// stereo pair are paired along epipolar lines and their frustums
/// intersected; boxes left without a partner are dropped. Views outside any
/// pair, and all views in mono mode, use one frustum per box. Failures are
/// reported per item and never abort the frame.
pub fn recover(
    matches: &MatchSet,
    frame: &FrameInput,
    localizer: &dyn Localizer,
    labels: &LabelSet,
    config: &PipelineConfig,
) -> RecoveryOutput {
    let calib = &frame.calib;
    let views = frame.dets2d_per_view.len();
    let unmatched = |v: usize| matches.unmatched_2d.get(v).map(Vec::as_slice).unwrap_or(&[]);
    let projected: Vec<Option<ProjectedCloud>> = (0..views)
        .into_par_iter()
        .map(|v| (!unmatched(v).is_empty()).then(|| ProjectedCloud::new(&frame.cloud, calib, v)))
        .collect();

    let mut jobs = Vec::new();
    let mut diagnostics = Vec::new();
    let mut in_pair = vec![false; views];
    if config.stereo_enabled {
        for pair in &calib.stereo_pairs {
            if pair.left >= views || pair.right >= views || in_pair[pair.left] || in_pair[pair.right] {
                continue;
            }
            let f = match fundamental_matrix(
                &calib.cameras[pair.left].intrinsics_or_projection(),
                &calib.cameras[pair.right].intrinsics_or_projection(),
                &pair.rotation,
                &pair.translation,
            ) {
                Ok(f) => f,
                Err(e) => {
                    warn!("stereo pair ({}, {}) unusable, falling back to mono: {e}", pair.left, pair.right);
                    continue;
                }
            };
            in_pair[pair.left] = true;
            in_pair[pair.right] = true;
            let (ul, ur) = (unmatched(pair.left), unmatched(pair.right));
            let boxes = |v: usize, idx: &[usize]| idx.iter().map(|&k| frame.dets2d_per_view[v][k].box2d).collect::<Vec<_>>();
            let pairs = epipolar_assign(&boxes(pair.left, ul), &boxes(pair.right, ur), &f, config.epipolar_gate);
            let mut paired_l = vec![false; ul.len()];
            let mut paired_r = vec![false; ur.len()];
            for (i, j, _) in pairs {
                paired_l[i] = true;
                paired_r[j] = true;
                jobs.push(FrustumSource::Stereo { left: (pair.left, ul[i]), right: (pair.right, ur[j]) });
            }
            for (view, idx, paired) in [(pair.left, ul, paired_l), (pair.right, ur, paired_r)] {
                for (k, _) in paired.iter().enumerate().filter(|(_, p)| !**p) {
                    diagnostics.push(RecoveryDiagnostic {
                        source: FrustumSource::Single { view, det2d: idx[k] },
                        error: RecoveryError::Unpaired,
                    });
                }
            }
        }
    }
    for view in (0..views).filter(|&v| !in_pair[v]) {
        jobs.extend(unmatched(view).iter().map(|&det2d| FrustumSource::Single { view, det2d }));
    }

    let results: Vec<_> = jobs
        .par_iter()
        .map(|&source| {
            let det = |(v, k): (usize, usize)| (v, k, &frame.dets2d_per_view[v][k]);
            let proj = |v: usize| projected[v].as_ref().expect("projected cloud for a view with unmatched boxes");
            let r = match source {
                FrustumSource::Single { view, det2d } => {
                    let s = det((view, det2d));
                    let p = extract_frustum_projected(&frame.cloud, proj(view), calib, s.2, det2d, config);
                    localize_and_confirm(p, &[s], frame, localizer, labels, config)
                }
                FrustumSource::Stereo { left, right } => {
                    let (l, r) = (det(left), det(right));
                    let p = intersect_frustums(
                        &frame.cloud,
                        proj(left.0),
                        proj(right.0),
                        calib,
                        (l.2, left.1),
                        (r.2, right.1),
                        config,
                    );
                    localize_and_confirm(p, &[l, r], frame, localizer, labels, config)
                }
            };
            (source, r)
        })
        .collect();

    let mut recovered = Vec::new();
    for (source, r) in results {
        match r {
            Ok(d) => recovered.push(d),
            Err(error) => {
                debug!("{}: recovery of {source:?} failed: {error}", frame.frame_id());
                diagnostics.push(RecoveryDiagnostic { source, error });
            }
        }
    }
    RecoveryOutput { recovered, diagnostics }
}
