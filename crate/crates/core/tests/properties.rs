use std::path::Path;

use proptest::prelude::*;

use late_cascade::clustering::cluster_detections;
use late_cascade::config::PipelineConfig;
use late_cascade::fusion::probabilistic_ensemble;
use late_cascade::geometry::{iou_2d, iou_3d, iou_bev};
use late_cascade::io::{format_detections, parse_records, DetectionSet};
use late_cascade::model::{validate_frame, Box2D, Box3D, ClassId, Detection2D, Detection3D, FrameInput, LabelSet};
use late_cascade::pipeline::run_pipeline;
use late_cascade::matching::match_multi_view;
use late_cascade::recovery::{recover, GeometricLocalizer};
use late_cascade::sim::{simulate_frame, DetectorNoiseSpec, SceneSpec};

fn box3d() -> impl Strategy<Value = Box3D> {
    (-4.0..4.0f64, -4.0..4.0f64, -1.0..1.0f64, 0.3..5.0f64, 0.3..2.5f64, 0.3..3.0f64, 0.0..std::f64::consts::TAU)
        .prop_map(|(x, y, z, l, h, w, yaw)| Box3D::new([x, y, z], l, h, w, yaw).unwrap())
}

fn box2d() -> impl Strategy<Value = Box2D> {
    (0.0..1000.0f64, 0.0..300.0f64, 1.0..200.0f64, 1.0..100.0f64)
        .prop_map(|(x, y, w, h)| Box2D::new(x, y, x + w, y + h).unwrap())
}

fn det3d() -> impl Strategy<Value = Detection3D> {
    (box3d(), 0.01..1.0f64, 0..3u16).prop_map(|(box3d, score, c)| Detection3D { box3d, score, class: ClassId(c) })
}

fn det2d() -> impl Strategy<Value = Detection2D> {
    (box2d(), 0.0..=1.0f64, 0..3u16).prop_map(|(box2d, score, c)| Detection2D { box2d, score, class: ClassId(c), mask: None })
}

fn key(d: &Detection3D) -> Vec<u64> {
    let c = d.box3d.center();
    let [l, h, w] = d.box3d.dims();
    [c.x, c.y, c.z, l, h, w, d.box3d.yaw(), d.score, d.class.0 as f64].iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_symmetric_and_bounded(a in box3d(), b in box3d(), p in box2d(), q in box2d()) {
        for (ab, ba) in [(iou_bev(&a, &b), iou_bev(&b, &a)), (iou_3d(&a, &b), iou_3d(&b, &a)), (iou_2d(&p, &q), iou_2d(&q, &p))] {
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() <= 1e-9);
        }
        prop_assert!((iou_bev(&a, &a) - 1.0).abs() <= 1e-9);
        prop_assert!((iou_3d(&a, &a) - 1.0).abs() <= 1e-9);
        prop_assert!(iou_3d(&a, &b) <= iou_bev(&a, &b) + 1e-9 || a.height() != b.height());
    }

    #[test]
    fn clusters_partition_detections(dets in prop::collection::vec(det3d(), 0..25), tau in 0.0..0.9f64) {
        let clusters = cluster_detections(&dets, tau, 50).unwrap();
        let mut seen: Vec<usize> = clusters.iter().flat_map(|c| c.members().to_vec()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..dets.len()).collect::<Vec<_>>());
    }

    #[test]
    fn raising_tau_z_never_merges(dets in prop::collection::vec(det3d(), 0..20), t1 in 0.0..0.9f64, dt in 0.0..0.5f64) {
        let lo = cluster_detections(&dets, t1, 50).unwrap();
        let hi = cluster_detections(&dets, (t1 + dt).min(0.99), 50).unwrap();
        prop_assert!(hi.len() >= lo.len(), "{} clusters at {t1}, {} at {}", lo.len(), hi.len(), t1 + dt);
    }

    #[test]
    fn ensemble_bounded_and_monotone(s in 0.0..=1.0f64, r in 0.0..=1.0f64, r2 in 0.0..=1.0f64, p in 0.01..0.99f64, d in 0.0..0.5f64) {
        let v = probabilistic_ensemble(s, &[r], p);
        prop_assert!(v > 0.0 && v < 1.0);
        prop_assert!(probabilistic_ensemble((s + d).min(1.0), &[r], p) >= v - 1e-12);
        prop_assert!(probabilistic_ensemble(s, &[(r + d).min(1.0)], p) >= v - 1e-12);
        let two = probabilistic_ensemble(s, &[r, r2], p);
        prop_assert!(two > 0.0 && two < 1.0);
        prop_assert!(probabilistic_ensemble(s, &[r, (r2 + d).min(1.0)], p) >= two - 1e-12);
    }

    #[test]
    fn records_round_trip(d3 in prop::collection::vec(det3d(), 0..8), d2 in prop::collection::vec(prop::collection::vec(det2d(), 0..5), 1..3)) {
        let labels = LabelSet::kitti();
        let set = DetectionSet { dets3d: d3, dets2d: d2 };
        let text = format_detections("f", &set, &labels);
        let back = parse_records(&text, Path::new("mem"), &labels).unwrap();
        let got = back.frames.get("f").map(|f| f.detections.clone()).unwrap_or_default();
        prop_assert_eq!(got.dets3d.len(), set.dets3d.len());
        for (a, b) in got.dets3d.iter().zip(&set.dets3d) {
            prop_assert!((a.box3d.center() - b.box3d.center()).amax() <= 1e-6);
            prop_assert!((a.score - b.score).abs() <= 1e-6);
            prop_assert_eq!(a.class, b.class);
        }
        let flat = |v: &Vec<Vec<Detection2D>>| v.iter().enumerate().flat_map(|(k, d)| d.iter().map(move |x| (k, x.clone()))).collect::<Vec<_>>();
        let (ga, gb) = (flat(&got.dets2d), flat(&set.dets2d));
        prop_assert_eq!(ga.len(), gb.len());
        for ((va, a), (vb, b)) in ga.iter().zip(&gb) {
            prop_assert_eq!(va, vb);
            prop_assert!((a.box2d.x_max() - b.box2d.x_max()).abs() <= 1e-6);
            prop_assert_eq!(a.class, b.class);
        }
        prop_assert_eq!(format_detections("f", &got, &labels), text);
    }
}

fn sim_input(seed: u64) -> (FrameInput, LabelSet) {
    let labels = LabelSet::kitti();
    let sim = simulate_frame(&SceneSpec::for_labels(&labels), &DetectorNoiseSpec::default(), seed).unwrap();
    (validate_frame(sim.to_input(), &PipelineConfig::default(), &labels).unwrap(), labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pipeline_output_is_order_invariant(seed in 0..1000u64, rot3 in 0..64usize, rot2 in 0..64usize) {
        let (frame, labels) = sim_input(seed);
        let config = PipelineConfig::default();
        let loc = GeometricLocalizer::new(config.localizer_params.clone(), config.p_min);
        let mut shuffled = frame.clone();
        shuffled.dets3d.reverse();
        let n3 = shuffled.dets3d.len().max(1);
        shuffled.dets3d.rotate_left(rot3 % n3);
        for v in &mut shuffled.dets2d_per_view {
            v.reverse();
            let n = v.len().max(1);
            v.rotate_left(rot2 % n);
        }
        let set = |f: &FrameInput| {
            let out = run_pipeline(f, &config, &loc, &labels).unwrap();
            let mut keys: Vec<Vec<u64>> = out.detections.iter().map(|d| key(&d.into())).collect();
            keys.sort();
            keys
        };
        prop_assert_eq!(set(&frame), set(&shuffled));
    }

    #[test]
    fn recovery_never_raises_the_rgb_score(seed in 0..1000u64) {
        let (frame, labels) = sim_input(seed);
        let config = PipelineConfig::default();
        let loc = GeometricLocalizer::new(config.localizer_params.clone(), config.p_min);
        let clusters = cluster_detections(&frame.dets3d, config.tau_z, config.clique_cap_factor).unwrap();
        let m = match_multi_view(&clusters, &frame.dets3d, &frame.dets2d_per_view, &frame.calib, config.tau_b);
        for r in recover(&m, &frame, &loc, &labels, &config).recovered {
            let best = r.sources.iter().map(|l| frame.dets2d_per_view[l.view][l.det2d].score).fold(0.0, f64::max);
            prop_assert!(!r.sources.is_empty());
            prop_assert!(r.det3d.score <= best + 1e-12);
        }
    }
}
