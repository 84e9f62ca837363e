//! Image-plane confirmation of LiDAR clusters against 2D detections.
//!
//! Every cluster member is projected into the view; a cluster scores against
//! a 2D box with the best IoU among its members. The cluster↔box assignment
//! maximizes total IoU, pairs at or below `tau_b` are dropped, and each
//! surviving cluster is reduced to its highest-scoring member.

use nalgebra::DMatrix;

use crate::assignment::solve_assignment;
use crate::clustering::Cluster;
use crate::geometry::{iou_2d, project_box3d, ProjectedBox};
use crate::model::{Box2D, Box3D, CalibrationSet, Detection2D, Detection3D};

/// One confirmed view association of a matched 3D detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewLink {
    pub view: usize,
    pub det2d: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedDetection {
    pub det3d: usize,
    /// At most one link per view, sorted by view.
    pub links: Vec<ViewLink>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    /// Sorted by 3D detection index.
    pub matched: Vec<MatchedDetection>,
    /// Per view, sorted indices of 2D detections left without a 3D match.
    pub unmatched_2d: Vec<Vec<usize>>,
    /// Sorted indices of 3D detections that were not kept.
    pub discarded_3d: Vec<usize>,
}

impl MatchSet {
    pub fn matched_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.matched.iter().map(|m| m.det3d)
    }
}

/// Image-clipped projection of `b` in `view`; `None` when behind the camera
/// or entirely outside the image.
pub fn project_to_image(b: &Box3D, calib: &CalibrationSet, view: usize) -> Option<ProjectedBox> {
    let cam = &calib.cameras[view];
    let p = project_box3d(b, &calib.lidar_to_cam, cam)?;
    let box2d = p.box2d.clamp_to(cam.width as f64, cam.height as f64)?;
    Some(ProjectedBox { box2d, ..p })
}

/// [`project_to_image`] for every detection.
pub fn project_detections(dets: &[Detection3D], calib: &CalibrationSet, view: usize) -> Vec<Option<ProjectedBox>> {
    dets.iter().map(|d| project_to_image(&d.box3d, calib, view)).collect()
}

/// Best member IoU of `cluster` with `box2d`; unprojectable members score 0.
pub fn cluster_image_iou(cluster: &Cluster, projections: &[Option<ProjectedBox>], box2d: &Box2D) -> f64 {
    cluster
        .members()
        .iter()
        .filter_map(|&i| projections[i].as_ref())
        .map(|p| iou_2d(&p.box2d, box2d))
        .fold(0.0, f64::max)
}

/// Highest-scoring member; ties go to the lower index.
pub fn cluster_nms(cluster: &Cluster, dets: &[Detection3D]) -> usize {
    let mut best = cluster.lead();
    for &i in cluster.members() {
        if dets[i].score > dets[best].score {
            best = i;
        }
    }
    best
}

/// `(cluster index, 2D index, iou)` pairs surviving the threshold in one view.
fn view_pairs(
    clusters: &[Cluster],
    projections: &[Option<ProjectedBox>],
    dets2d: &[Detection2D],
    tau_b: f64,
) -> Vec<(usize, usize, f64)> {
    // clusters with nothing visible in this view take no part
    let rows: Vec<usize> = (0..clusters.len())
        .filter(|&c| clusters[c].members().iter().any(|&i| projections[i].is_some()))
        .collect();
    if rows.is_empty() || dets2d.is_empty() {
        return Vec::new();
    }
    let m = DMatrix::from_fn(rows.len(), dets2d.len(), |r, k| {
        cluster_image_iou(&clusters[rows[r]], projections, &dets2d[k].box2d)
    });
    solve_assignment(&m, true)
        .pairs
        .into_iter()
        .filter(|&(r, k)| m[(r, k)] > tau_b)
        .map(|(r, k)| (rows[r], k, m[(r, k)]))
        .collect()
}

fn assemble(
    clusters: &[Cluster],
    dets3d: &[Detection3D],
    per_view: Vec<(usize, Vec<(usize, usize, f64)>, usize)>,
    views: usize,
) -> MatchSet {
    let mut links: Vec<Vec<ViewLink>> = vec![Vec::new(); clusters.len()];
    let mut unmatched_2d = vec![Vec::new(); views];
    for (view, pairs, n2d) in per_view {
        let mut used = vec![false; n2d];
        for (c, k, iou) in pairs {
            used[k] = true;
            links[c].push(ViewLink { view, det2d: k, iou });
        }
        unmatched_2d[view] = (0..n2d).filter(|&k| !used[k]).collect();
    }
    let mut matched = Vec::new();
    let mut kept = vec![false; dets3d.len()];
    for (c, mut l) in links.into_iter().enumerate() {
        if l.is_empty() {
            continue;
        }
        l.sort_by_key(|x| x.view);
        let best = cluster_nms(&clusters[c], dets3d);
        kept[best] = true;
        matched.push(MatchedDetection { det3d: best, links: l });
    }
    matched.sort_by_key(|m| m.det3d);
    let discarded_3d = (0..dets3d.len()).filter(|&i| !kept[i]).collect();
    MatchSet { matched, unmatched_2d, discarded_3d }
}

/// Matches clusters against the 2D detections of one view. The returned
/// `unmatched_2d` has one list per camera; only `view` is populated.
pub fn match_single_view(
    clusters: &[Cluster],
    dets3d: &[Detection3D],
    dets2d: &[Detection2D],
    calib: &CalibrationSet,
    view: usize,
    tau_b: f64,
) -> MatchSet {
    let projections = project_detections(dets3d, calib, view);
    let pairs = view_pairs(clusters, &projections, dets2d, tau_b);
    assemble(clusters, dets3d, vec![(view, pairs, dets2d.len())], calib.cameras.len())
}

/// Matches clusters in every view; a cluster is confirmed when it matches in
/// at least one view and keeps its per-view associations.
pub fn match_multi_view(
    clusters: &[Cluster],
    dets3d: &[Detection3D],
    dets2d_per_view: &[Vec<Detection2D>],
    calib: &CalibrationSet,
    tau_b: f64,
) -> MatchSet {
    let per_view = dets2d_per_view
        .iter()
        .enumerate()
        .map(|(view, dets2d)| {
            let projections = project_detections(dets3d, calib, view);
            (view, view_pairs(clusters, &projections, dets2d, tau_b), dets2d.len())
        })
        .collect();
    assemble(clusters, dets3d, per_view, calib.cameras.len())
}
