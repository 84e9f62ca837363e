//! `late-cascade`: simulate, fuse, eval and sweep over frame bundles.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "late-cascade", version, about = "Late-cascade LiDAR/RGB detection fusion")]
struct Cli {
    /// Label set file (TOML `[[label]]` tables); defaults to Car/Pedestrian/Cyclist.
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic frame bundles.
    Simulate(SimulateArgs),
    /// Run the fusion pipeline over a frame bundle directory.
    Fuse(FuseArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Re-run fuse and eval over a range of one parameter and write a CSV.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML file with optional `[scene]` and `[noise]` tables.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Seed range `a..b` (exclusive), `a..=b` or a single seed.
    #[arg(long, value_parser = parse_seeds)]
    seeds: SeedRange,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// First camera only.
    Mono,
    /// Every camera, no stereo pairing.
    Multi,
    /// Every camera with stereo pairing.
    Stereo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Matching,
    Recovery,
    Semantic,
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    /// Frame bundle root.
    #[arg(long)]
    frames: PathBuf,
    /// Pipeline config (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Multi)]
    mode: Mode,
    /// Stages to disable.
    #[arg(long, value_enum, value_delimiter = ',')]
    ablate: Vec<Stage>,
    /// Config overrides `key=value`, applied after the file.
    #[arg(long = "set", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Frame-level worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ScoringArgs {
    /// `kitti`, `iou:<t>` or `dist:<meters>`.
    #[arg(long, default_value = "kitti")]
    criterion: String,
    /// AP interpolation: 11, 40 or all.
    #[arg(long, default_value = "40")]
    interp: String,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of record files (or a fuse output directory).
    #[arg(long)]
    dets: PathBuf,
    /// Bundle root with `label/` records or `label_2/` KITTI labels.
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Report path; `.json` selects JSON, anything else a text table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    #[value(name = "tau_z")]
    TauZ,
    #[value(name = "tau_b")]
    TauB,
    #[value(name = "tau_d")]
    TauD,
    /// Frustum enlargement factor.
    E,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Ground-truth root; defaults to `--frames`.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Inclusive range `a:b:step`.
    #[arg(long, value_parser = parse_range)]
    range: SweepRange,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SeedRange {
    start: u64,
    end: u64,
}

fn parse_seeds(s: &str) -> Result<SeedRange, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("invalid seed `{t}`"));
    let r = if let Some((a, b)) = s.split_once("..=") {
        SeedRange { start: num(a)?, end: num(b)?.checked_add(1).ok_or("seed range overflows")? }
    } else if let Some((a, b)) = s.split_once("..") {
        SeedRange { start: num(a)?, end: num(b)? }
    } else {
        let a = num(s)?;
        SeedRange { start: a, end: a + 1 }
    };
    if r.start >= r.end {
        return Err(format!("seed range `{s}` is empty"));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
struct SweepRange(Vec<f64>);

fn parse_range(s: &str) -> Result<SweepRange, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(format!("invalid number `{t}`")))
        .collect::<Result<_, _>>()?;
    let [a, b, step] = parts[..] else {
        return Err(format!("expected a:b:step, got `{s}`"));
    };
    if !(step > 0.0) || b < a {
        return Err(format!("range `{s}` needs a <= b and step > 0"));
    }
    let n = ((b - a) / step + 1e-9).floor() as usize + 1;
    if n > 10_000 {
        return Err(format!("range `{s}` has {n} values"));
    }
    Ok(SweepRange((0..n).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9).collect()))
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or(format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// A failed command and the exit code class it maps to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn data(e: impl Into<anyhow::Error>) -> Self {
        Self::Data(e.into())
    }

    fn internal(e: impl Into<anyhow::Error>) -> Self {
        Self::Internal(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = std::panic::catch_unwind(|| commands::run(cli));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Usage(m))) => {
            eprintln!("error: {m}");
            eprintln!("run `late-cascade --help` for usage");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Data(e))) => {
            eprintln!("data error: {e:#}");
            ExitCode::from(2)
        }
        Ok(Err(Failure::Internal(e))) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(3)
        }
        Err(_) => ExitCode::from(3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds() {
        assert_eq!(parse_seeds("3..5").unwrap(), SeedRange { start: 3, end: 5 });
        assert_eq!(parse_seeds("3..=5").unwrap(), SeedRange { start: 3, end: 6 });
        assert_eq!(parse_seeds("42").unwrap(), SeedRange { start: 42, end: 43 });
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0.1:0.5:0.1").unwrap().0, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_range("1:1:0.5").unwrap().0, vec![1.0]);
        assert!(parse_range("1:0:0.1").is_err());
        assert!(parse_range("0:1:0").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn overrides() {
        assert_eq!(parse_override("tau_z = 0.2").unwrap(), ("tau_z".into(), "0.2".into()));
        assert!(parse_override("tau_z").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
