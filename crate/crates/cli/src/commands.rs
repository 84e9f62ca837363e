use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use late_cascade::config::PipelineConfig;
use late_cascade::eval::{EvalReport, Evaluator, GroundTruthFrame, Interpolation, MatchCriterion};
use late_cascade::fusion::FusedDetection;
use late_cascade::io::{self, FrameBundle, Records};
use late_cascade::model::{validate_frame, ClassLabel, Detection3D, FrameInput, LabelSet};
use late_cascade::pipeline::{run_pipeline, StageReport};
use late_cascade::recovery::LocalizerRegistry;
use late_cascade::sim::{simulate_frame, DetectorNoiseSpec, SceneSpec};

use crate::{Cli, Command, EvalArgs, Failure, FuseArgs, Mode, PipelineArgs, ScoringArgs, SimulateArgs, Stage, SweepArgs, SweepParam};

pub fn run(cli: Cli) -> Result<(), Failure> {
    let labels = load_labels(cli.labels.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &labels),
        Command::Fuse(a) => fuse(a, &labels),
        Command::Eval(a) => eval(a, &labels),
        Command::Sweep(a) => sweep(a, &labels),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelFile {
    label: Vec<ClassLabel>,
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Data)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display())).map_err(Failure::Data)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(Failure::Data)
}

fn load_labels(path: Option<&Path>) -> Result<LabelSet, Failure> {
    let Some(path) = path else { return Ok(LabelSet::kitti()) };
    let file: LabelFile = toml::from_str(&read_text(path)?)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::Data)?;
    LabelSet::new(file.label).with_context(|| format!("label set {}", path.display())).map_err(Failure::Data)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(Failure::internal)
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SimFile {
    scene: Option<SceneSpec>,
    noise: DetectorNoiseSpec,
}

fn simulate(a: SimulateArgs, labels: &LabelSet) -> Result<(), Failure> {
    let mut spec = match &a.spec {
        Some(p) => toml::from_str::<SimFile>(&read_text(p)?)
            .with_context(|| format!("parsing {}", p.display()))
            .map_err(Failure::Data)?,
        None => SimFile::default(),
    };
    let scene = spec.scene.get_or_insert_with(|| SceneSpec::for_labels(labels)).clone();
    scene.validate().map_err(Failure::data)?;
    if scene.class_mix.len() != labels.len() {
        return Err(Failure::Data(anyhow!(
            "scene has {} classes but the label set has {}",
            scene.class_mix.len(),
            labels.len()
        )));
    }
    spec.noise.validate().map_err(Failure::data)?;
    let echo = toml::to_string(&spec).map_err(Failure::internal)?;
    write_text(&a.out.join("spec.toml"), &echo)?;

    let seeds: Vec<u64> = (a.seeds.start..a.seeds.end).collect();
    pool(a.jobs)?.install(|| {
        seeds.par_iter().try_for_each(|&seed| {
            let frame = simulate_frame(&scene, &spec.noise, seed).with_context(|| format!("seed {seed}"))?;
            let id = format!("{seed:06}");
            FrameBundle::new(&a.out, &id).write(&frame.to_input(), Some(frame.gt()), labels)?;
            Ok::<_, anyhow::Error>(())
        })
    })
    .map_err(Failure::Data)?;
    println!("wrote {} frames to {}", seeds.len(), a.out.display());
    Ok(())
}

/// Config from file, overrides, `--mode` and `--ablate`.
fn effective_config(p: &PipelineArgs) -> Result<PipelineConfig, Failure> {
    let mut config = match &p.config {
        Some(path) => PipelineConfig::from_toml(&read_text(path)?)
            .with_context(|| format!("config {}", path.display()))
            .map_err(Failure::Data)?,
        None => PipelineConfig::default(),
    };
    for (k, v) in &p.overrides {
        config.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    config.stereo_enabled = p.mode == Mode::Stereo;
    for s in &p.ablate {
        match s {
            Stage::Matching => config.enable_matching = false,
            Stage::Recovery => config.enable_recovery = false,
            Stage::Semantic => config.enable_semantic = false,
        }
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn apply_mode(mut frame: FrameInput, mode: Mode) -> anyhow::Result<FrameInput> {
    match mode {
        Mode::Mono => {
            frame.calib.cameras.truncate(1);
            frame.calib.stereo_pairs.clear();
            frame.dets2d_per_view.truncate(1);
        }
        Mode::Multi => {}
        Mode::Stereo => {
            if frame.calib.stereo_pairs.is_empty() {
                return Err(anyhow!("frame {} has no stereo pair in its calibration", frame.frame_id()));
            }
        }
    }
    Ok(frame)
}

struct Loaded {
    ids: Vec<String>,
    frames: Vec<FrameInput>,
}

fn load_frames(p: &PipelineArgs, labels: &LabelSet, pool: &rayon::ThreadPool) -> Result<Loaded, Failure> {
    let ids = io::list_frames(&p.frames).map_err(Failure::data)?;
    let frames = pool
        .install(|| {
            ids.par_iter()
                .map(|id| {
                    let f = FrameBundle::new(&p.frames, id).load_input(labels)?;
                    apply_mode(f, p.mode)
                })
                .collect::<anyhow::Result<Vec<_>>>()
        })
        .map_err(Failure::Data)?;
    Ok(Loaded { ids, frames })
}

struct FuseRun {
    detections: Vec<Vec<FusedDetection>>,
    report: StageReport,
}

fn run_frames(
    loaded: &Loaded,
    config: &PipelineConfig,
    labels: &LabelSet,
    pool: &rayon::ThreadPool,
) -> Result<FuseRun, Failure> {
    let registry = LocalizerRegistry::with_builtin(config);
    let localizer = registry.get(&config.localizer).ok_or_else(|| {
        let known: Vec<&str> = registry.names().collect();
        Failure::Usage(format!("unknown localizer `{}` (known: {})", config.localizer, known.join(", ")))
    })?;
    let outputs = pool
        .install(|| {
            loaded
                .frames
                .par_iter()
                .zip(&loaded.ids)
                .map(|(frame, id)| {
                    let frame = validate_frame(frame.clone(), config, labels).with_context(|| format!("frame {id}"))?;
                    let out = run_pipeline(&frame, config, localizer.as_ref(), labels).with_context(|| format!("frame {id}"))?;
                    for d in &out.diagnostics {
                        log::debug!("frame {id}: {:?}: {}", d.source, d.error);
                    }
                    Ok::<_, anyhow::Error>(out)
                })
                .collect::<anyhow::Result<Vec<_>>>()
        })
        .map_err(Failure::Data)?;
    let mut report = StageReport::default();
    let mut detections = Vec::with_capacity(outputs.len());
    for o in outputs {
        report.accumulate(&o.report);
        detections.push(o.detections);
    }
    Ok(FuseRun { detections, report })
}

fn timing_table(r: &StageReport, frames: usize) -> String {
    let n = frames.max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>12} {:>14}", "stage", "total_ms", "ms_per_frame");
    let rows = [
        ("Bounding Box Matching", r.clustering_ms + r.matching_ms),
        ("Detection Recovery", r.recovery_ms),
        ("Semantic Fusion", r.fusion_ms),
        ("Total", r.total_ms()),
    ];
    for (name, ms) in rows {
        let _ = writeln!(s, "{name:<24} {ms:>12.3} {:>14.3}", ms / n);
    }
    let _ = writeln!(
        s,
        "frames {frames}  clusters {}  matched {}  unmatched_2d {}  recovered {}  discarded {}  output {}",
        r.clusters, r.matched, r.unmatched_2d, r.recovered, r.discarded, r.output
    );
    s
}

fn fuse(a: FuseArgs, labels: &LabelSet) -> Result<(), Failure> {
    let config = effective_config(&a.pipeline)?;
    let pool = pool(a.pipeline.jobs)?;
    let loaded = load_frames(&a.pipeline, labels, &pool)?;
    let run = run_frames(&loaded, &config, labels, &pool)?;
    write_text(&a.out.join("config.toml"), &config.to_toml())?;
    for (id, dets) in loaded.ids.iter().zip(&run.detections) {
        io::write_fused(&a.out.join("fused").join(format!("{id}.txt")), id, dets, labels).map_err(Failure::data)?;
    }
    let table = timing_table(&run.report, loaded.ids.len());
    write_text(&a.out.join("timing.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn criterion(s: &ScoringArgs, labels: &LabelSet) -> Result<(MatchCriterion, Interpolation), Failure> {
    let num = |t: &str| t.parse::<f64>().ok().filter(|v| v.is_finite() && *v > 0.0);
    let c = match s.criterion.split_once(':') {
        None if s.criterion == "kitti" => MatchCriterion::kitti(labels),
        Some(("iou", t)) => match num(t) {
            Some(v) if v <= 1.0 => MatchCriterion::iou(v),
            _ => return Err(Failure::Usage(format!("invalid IoU threshold `{t}`"))),
        },
        Some(("dist", t)) => MatchCriterion::CenterDistance(
            num(t).ok_or_else(|| Failure::Usage(format!("invalid distance `{t}`")))?,
        ),
        _ => return Err(Failure::Usage(format!("unknown criterion `{}` (kitti, iou:<t>, dist:<m>)", s.criterion))),
    };
    let interp = s.interp.parse::<Interpolation>().map_err(Failure::Usage)?;
    Ok((c, interp))
}

fn txt_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display())).map_err(Failure::Data)? {
        let p = e.map_err(Failure::data)?.path();
        if p.extension().and_then(|x| x.to_str()) == Some("txt") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Detections per frame from every record file in `dir` (or `dir/fused`).
/// Fused records are used when a frame has any, raw 3D records otherwise.
fn load_detections(dir: &Path, labels: &LabelSet) -> Result<BTreeMap<String, Vec<Detection3D>>, Failure> {
    let fused = dir.join("fused");
    let dir = if fused.is_dir() { fused } else { dir.to_path_buf() };
    let mut all = Records::default();
    for p in txt_files(&dir)? {
        for (id, f) in io::read_records(&p, labels).map_err(Failure::data)?.frames {
            if all.frames.insert(id.clone(), f).is_some() {
                return Err(Failure::Data(anyhow!("frame {id} appears in more than one file ({})", p.display())));
            }
        }
    }
    Ok(all
        .frames
        .into_iter()
        .map(|(id, f)| {
            let dets = if f.fused.is_empty() { f.detections.dets3d } else { f.fused.into_iter().map(|r| r.det).collect() };
            (id, dets)
        })
        .collect())
}

fn load_ground_truth(root: &Path, labels: &LabelSet) -> Result<Vec<GroundTruthFrame>, Failure> {
    let dir = [root.join("label"), root.join("label_2")].into_iter().find(|d| d.is_dir()).ok_or_else(|| {
        Failure::Data(anyhow!("{} has neither label/ nor label_2/", root.display()))
    })?;
    let mut out = Vec::new();
    for p in txt_files(&dir)? {
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let gt = FrameBundle::new(root, &id).load_ground_truth(labels).map_err(Failure::data)?;
        out.extend(gt);
    }
    Ok(out)
}

fn evaluate(
    dets: &BTreeMap<String, Vec<Detection3D>>,
    gt: &[GroundTruthFrame],
    criterion: &MatchCriterion,
    labels: &LabelSet,
    interp: Interpolation,
) -> Result<(EvalReport, Evaluator), Failure> {
    if let Some(id) = dets.keys().find(|id| !gt.iter().any(|g| &g.frame_id == *id)) {
        return Err(Failure::Data(anyhow!("detections for frame {id} have no ground truth")));
    }
    let mut ev = Evaluator::new(criterion.clone());
    for g in gt {
        ev.add_frame(dets.get(&g.frame_id).map(Vec::as_slice).unwrap_or(&[]), g);
    }
    Ok((ev.report(labels, interp), ev))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn eval(a: EvalArgs, labels: &LabelSet) -> Result<(), Failure> {
    let (crit, interp) = criterion(&a.scoring, labels)?;
    let dets = load_detections(&a.dets, labels)?;
    let gt = load_ground_truth(&a.gt, labels)?;
    let (report, _) = evaluate(&dets, &gt, &crit, labels, interp)?;
    io::write_report(&report, &a.out).map_err(Failure::data)?;
    let echo = format!(
        "criterion = {:?}\ninterpolation = {:?}\ndets = {:?}\ngt = {:?}\n",
        a.scoring.criterion,
        a.scoring.interp,
        a.dets.display().to_string(),
        a.gt.display().to_string()
    );
    write_text(&sibling(&a.out, ".config.toml"), &echo)?;
    print!("{}", report.to_table());
    Ok(())
}

fn sweep(a: SweepArgs, labels: &LabelSet) -> Result<(), Failure> {
    let base = effective_config(&a.pipeline)?;
    let (crit, interp) = criterion(&a.scoring, labels)?;
    let key = match a.param {
        SweepParam::TauZ => "tau_z",
        SweepParam::TauB => "tau_b",
        SweepParam::TauD => "tau_d",
        SweepParam::E => "enlargement",
    };
    let pool = pool(a.pipeline.jobs)?;
    let loaded = load_frames(&a.pipeline, labels, &pool)?;
    let gt = load_ground_truth(a.gt.as_deref().unwrap_or(&a.pipeline.frames), labels)?;
    let mut csv = String::from("param,value,mAP,mATE,mASE,mAOE,NDS*,precision,recall,detections\n");
    for v in &a.range.0 {
        let mut config = base.clone();
        config.set(key, &v.to_string()).map_err(|e| Failure::Usage(e.to_string()))?;
        let run = run_frames(&loaded, &config, labels, &pool)?;
        let dets: BTreeMap<String, Vec<Detection3D>> = loaded
            .ids
            .iter()
            .cloned()
            .zip(run.detections.iter().map(|d| d.iter().map(Detection3D::from).collect()))
            .collect();
        let (r, ev) = evaluate(&dets, &gt, &crit, labels, interp)?;
        let (p, rc) = ev.precision_recall_at(0.0);
        let _ = writeln!(
            csv,
            "{key},{v},{:.6},{:.6},{:.6},{:.6},{:.6},{p:.6},{rc:.6},{}",
            r.map, r.mate, r.mase, r.maoe, r.nds_star, run.report.output
        );
        log::info!("{key} = {v}: mAP {:.4}", r.map);
    }
    write_text(&a.out, &csv)?;
    write_text(&sibling(&a.out, ".config.toml"), &base.to_toml())?;
    print!("{csv}");
    Ok(())
}
