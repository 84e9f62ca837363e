//! Semantic fusion of LiDAR and RGB evidence.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::matching::ViewLink;
use crate::model::{Box3D, ClassId, Detection3D, LabelSet};

const SCORE_EPS: f64 = 1e-6;

fn clamp_score(s: f64, what: &str) -> f64 {
    if s <= SCORE_EPS || s >= 1.0 - SCORE_EPS {
        warn!("degenerate {what} {s} clamped into [{SCORE_EPS}, {}]", 1.0 - SCORE_EPS);
    }
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// Conditionally independent combination of one LiDAR score with one or two
/// RGB scores for a class of prior `p`, normalized against the hypothesis
/// that no such object exists:
///
/// `q = s3d · ∏ s2d / p`, `q̄ = (1 − s3d) · ∏ (1 − s2d) / (1 − p)`, result `q / (q + q̄)`.
///
/// Inputs at exactly 0 or 1 are clamped with a warning.
pub fn probabilistic_ensemble(s3d: f64, scores2d: &[f64], p: f64) -> f64 {
    let s3d = clamp_score(s3d, "3d score");
    let p = clamp_score(p, "class prior");
    let mut q = s3d / p;
    let mut qn = (1.0 - s3d) / (1.0 - p);
    for &s in scores2d {
        let s = clamp_score(s, "2d score");
        q *= s;
        qn *= 1.0 - s;
    }
    q / (q + qn)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Matched,
    Recovered,
}

/// RGB evidence attached to a fusion entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgbEvidence {
    pub link: ViewLink,
    pub score: f64,
    pub class: ClassId,
}

/// One element of the matched ∪ recovered set.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    pub det3d: Detection3D,
    /// Index into the frame's 3D detections for matched entries.
    pub det3d_index: Option<usize>,
    pub rgb: Vec<RgbEvidence>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDetection {
    pub box3d: Box3D,
    pub score: f64,
    pub class: ClassId,
    pub provenance: Provenance,
    pub det3d_index: Option<usize>,
    /// `(view, 2D index)` of the RGB evidence.
    pub sources: Vec<(usize, usize)>,
}

impl FusedDetection {
    /// Carries the LiDAR box, score and class through unchanged.
    pub fn passthrough(input: &FusionInput) -> Self {
        Self {
            box3d: input.det3d.box3d,
            score: input.det3d.score,
            class: input.det3d.class,
            provenance: input.provenance,
            det3d_index: input.det3d_index,
            sources: input.rgb.iter().map(|r| (r.link.view, r.link.det2d)).collect(),
        }
    }
}

/// Label and score of one entry.
///
/// The class is taken from the most confident RGB detection (ties go to the
/// earlier one). When it agrees with the LiDAR class the score is the
/// ensemble of the LiDAR score with every agreeing RGB score; otherwise the
/// RGB score is used as is. Entries without RGB evidence pass through.
pub fn fuse_entry(input: &FusionInput, labels: &LabelSet) -> FusedDetection {
    let mut out = FusedDetection::passthrough(input);
    let Some(lead) = input.rgb.iter().fold(None::<&RgbEvidence>, |a, r| match a {
        Some(a) if a.score >= r.score => Some(a),
        _ => Some(r),
    }) else {
        return out;
    };
    out.class = lead.class;
    out.score = if lead.class == input.det3d.class {
        let agreeing: Vec<f64> = input.rgb.iter().filter(|r| r.class == lead.class).map(|r| r.score).collect();
        probabilistic_ensemble(input.det3d.score, &agreeing, labels.prior(lead.class))
    } else {
        lead.score
    };
    out
}

pub fn semantic_fusion(inputs: &[FusionInput], labels: &LabelSet) -> Vec<FusedDetection> {
    inputs.iter().map(|i| fuse_entry(i, labels)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(s3d: f64, c3d: u16, rgb: &[(f64, u16)]) -> FusionInput {
        FusionInput {
            det3d: Detection3D {
                box3d: Box3D::new([10.0, 0.0, 0.0], 4.0, 1.5, 1.7, 0.0).unwrap(),
                score: s3d,
                class: ClassId(c3d),
            },
            det3d_index: Some(0),
            rgb: rgb
                .iter()
                .enumerate()
                .map(|(v, &(score, c))| RgbEvidence { link: ViewLink { view: v, det2d: 0, iou: 0.8 }, score, class: ClassId(c) })
                .collect(),
            provenance: Provenance::Matched,
        }
    }

    #[test]
    fn ensemble_closed_forms() {
        assert!((probabilistic_ensemble(0.5, &[0.5], 0.5) - 0.5).abs() < 1e-12);
        // 0.81 / (0.81 + 0.01)
        assert!((probabilistic_ensemble(0.9, &[0.9], 0.5) - 0.81 / 0.82).abs() < 1e-12);
        assert!((probabilistic_ensemble(0.9, &[0.9], 0.5) - 0.9878).abs() < 1e-4);
        // 0.729 / (0.729 + 0.001)
        assert!((probabilistic_ensemble(0.9, &[0.9, 0.9], 0.5) - 0.9986).abs() < 1e-4);
    }

    #[test]
    fn ensemble_prior_enters_both_hypotheses() {
        // q = 0.64 / p, q̄ = 0.04 / (1 − p)
        for p in [0.5, 1.0 / 3.0, 0.1] {
            let (q, qn) = (0.64 / p, 0.04 / (1.0 - p));
            assert!((probabilistic_ensemble(0.8, &[0.8], p) - q / (q + qn)).abs() < 1e-12);
        }
        assert!((probabilistic_ensemble(0.8, &[0.8], 0.5) - 0.941).abs() < 1e-3);
    }

    #[test]
    fn ensemble_clamps_degenerate_inputs() {
        let v = probabilistic_ensemble(1.0, &[0.0], 0.5);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn class_mismatch_takes_rgb() {
        // LiDAR Pedestrian 0.7, RGB Cyclist 0.9
        let f = fuse_entry(&input(0.7, 1, &[(0.9, 2)]), &LabelSet::kitti());
        assert_eq!(f.class, ClassId(2));
        assert_eq!(f.score, 0.9);
    }

    #[test]
    fn agreement_ensembles_with_uniform_prior() {
        let two = LabelSet::uniform(&[("Car", [3.9, 1.56, 1.6]), ("Pedestrian", [0.8, 1.73, 0.6])]).unwrap();
        let f = fuse_entry(&input(0.8, 0, &[(0.8, 0)]), &two);
        assert_eq!(f.class, ClassId(0));
        assert!((f.score - 0.941).abs() < 1e-3);
        // three classes: p = 1/3
        let f = fuse_entry(&input(0.8, 0, &[(0.8, 0)]), &LabelSet::kitti());
        assert!((f.score - 1.92 / 1.98).abs() < 1e-12);
    }

    #[test]
    fn stereo_takes_most_confident_label() {
        // left Car 0.6, right "Truck" 0.8, LiDAR Car 0.9
        let labels = LabelSet::uniform(&[("Car", [3.9, 1.56, 1.6]), ("Truck", [8.0, 3.0, 2.5])]).unwrap();
        let f = fuse_entry(&input(0.9, 0, &[(0.6, 0), (0.8, 1)]), &labels);
        assert_eq!(f.class, ClassId(1));
        assert_eq!(f.score, 0.8);
        // both agree: ensemble over both RGB scores
        let f = fuse_entry(&input(0.9, 0, &[(0.9, 0), (0.9, 0)]), &labels);
        assert!((f.score - 0.729 / 0.730).abs() < 1e-12);
        // only the agreeing view enters the ensemble
        let f = fuse_entry(&input(0.9, 0, &[(0.9, 0), (0.3, 1)]), &labels);
        assert!((f.score - 0.81 / 0.82).abs() < 1e-12);
    }

    #[test]
    fn no_rgb_passes_through() {
        let f = fuse_entry(&input(0.42, 1, &[]), &LabelSet::kitti());
        assert_eq!((f.score, f.class), (0.42, ClassId(1)));
    }
}
