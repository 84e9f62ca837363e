use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use late_cascade::clustering::cluster_detections;
use late_cascade::config::PipelineConfig;
use late_cascade::io::{read_records, FrameBundle};
use late_cascade::matching::match_multi_view;
use late_cascade::model::{validate_frame, LabelSet};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_late-cascade"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seeds: &str) {
    ok(&["simulate", "--seeds", seeds, "--out", p(dir)]);
}

#[test]
fn simulate_fuse_eval_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    let mut fused = Vec::new();
    for k in 0..2 {
        let frames = tmp.path().join(format!("frames{k}"));
        let out = tmp.path().join(format!("out{k}"));
        simulate(&frames, "42");
        ok(&["fuse", "--frames", p(&frames), "--out", p(&out), "--jobs", if k == 0 { "1" } else { "3" }]);
        let report = tmp.path().join(format!("report{k}.json"));
        ok(&["eval", "--dets", p(&out), "--gt", p(&frames), "--out", p(&report)]);
        reports.push(fs::read(&report).unwrap());
        fused.push(fs::read(out.join("fused/000042.txt")).unwrap());
        assert!(out.join("config.toml").exists());
        assert!(tmp.path().join(format!("report{k}.json.config.toml")).exists());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(fused[0], fused[1]);
    let v: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(v["frames"], 1);
}

#[test]
fn timing_table_has_stage_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("f");
    simulate(&frames, "1..3");
    let out = tmp.path().join("o");
    let o = ok(&["fuse", "--frames", p(&frames), "--out", p(&out), "--mode", "mono"]);
    let table = fs::read_to_string(out.join("timing.txt")).unwrap();
    for row in ["Bounding Box Matching", "Detection Recovery", "Semantic Fusion"] {
        assert!(table.contains(row), "{table}");
    }
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);
    assert_eq!(fs::read_dir(out.join("fused")).unwrap().count(), 2);
}

#[test]
fn ablate_recovery_outputs_the_matched_set() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("f");
    simulate(&frames, "7..10");
    let out = tmp.path().join("o");
    ok(&["fuse", "--frames", p(&frames), "--out", p(&out), "--ablate", "recovery"]);
    let labels = LabelSet::kitti();
    let config = PipelineConfig::default();
    for id in ["000007", "000008", "000009"] {
        let frame = FrameBundle::new(&frames, id).load_input(&labels).unwrap();
        let frame = validate_frame(frame, &config, &labels).unwrap();
        let clusters = cluster_detections(&frame.dets3d, config.tau_z, config.clique_cap_factor).unwrap();
        let m = match_multi_view(&clusters, &frame.dets3d, &frame.dets2d_per_view, &frame.calib, config.tau_b);
        let mut expected: Vec<usize> = m.matched.iter().map(|d| d.det3d).collect();
        expected.sort_unstable();

        let recs = read_records(&out.join("fused").join(format!("{id}.txt")), &labels).unwrap();
        let fused = recs.frames.get(id).map(|f| f.fused.clone()).unwrap_or_default();
        let mut got: Vec<usize> = fused.iter().map(|r| r.det3d_index.expect("matched entry")).collect();
        got.sort_unstable();
        assert_eq!(got, expected, "frame {id}");
        for r in &fused {
            let d = &frame.dets3d[r.det3d_index.unwrap()];
            assert!((r.det.box3d.center() - d.box3d.center()).amax() < 1e-6);
        }
    }
    let config = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(config.contains("enable_recovery = false"), "{config}");
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("f");
    simulate(&frames, "3..5");
    let csv = tmp.path().join("s.csv");
    ok(&["sweep", "--frames", p(&frames), "--param", "tau_z", "--range", "0.1:0.5:0.2", "--out", p(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("param,value,mAP"));
    assert!(lines[1].starts_with("tau_z,0.1,"));
    assert!(lines[3].starts_with("tau_z,0.5,"));
    assert!(tmp.path().join("s.csv.config.toml").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["fuse", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn bad_values_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate", "--seeds", "5..1", "--out", p(tmp.path())]).status.code(), Some(1));
    let frames = tmp.path().join("f");
    simulate(&frames, "1");
    let o = run(&["fuse", "--frames", p(&frames), "--out", p(tmp.path()), "--set", "tau_b=2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["eval", "--dets", p(&frames), "--gt", p(&frames), "--out", "r.txt", "--criterion", "iou:x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_or_corrupt_data_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["fuse", "--frames", p(&tmp.path().join("nope")), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let frames = tmp.path().join("f");
    simulate(&frames, "1");
    fs::write(frames.join("velodyne/000001.bin"), [0u8; 17]).unwrap();
    let o = run(&["fuse", "--frames", p(&frames), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("000001.bin"));
}

#[test]
fn stereo_mode_needs_a_stereo_rig() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("f");
    simulate(&frames, "1");
    let o = run(&["fuse", "--frames", p(&frames), "--out", p(&tmp.path().join("o")), "--mode", "stereo"]);
    assert_eq!(o.status.code(), Some(2));

    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, "[scene.rig]\nkind = \"stereo\"\nbaseline = 0.54\n").unwrap();
    let sframes = tmp.path().join("s");
    ok(&["simulate", "--spec", p(&spec), "--seeds", "2..4", "--out", p(&sframes)]);
    ok(&["fuse", "--frames", p(&sframes), "--out", p(&tmp.path().join("so")), "--mode", "stereo"]);
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("simulate"));
}
