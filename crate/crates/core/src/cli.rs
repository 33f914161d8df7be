//! Command-line front end: `simulate`, `run`, `eval` and `bench`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::detector::{DetectorBackend, ExternalDetector, SimulatedDetector};
use crate::evaluation::{evaluate, EvalConfig, EvalReport};
use crate::geometry::{BBox, Detection};
use crate::io;
use crate::pipeline::{BackendKind, FrameResult, Pipeline, PipelineConfig, RunMode};
use crate::simulation::{generate_scenario, Scenario, ScenarioParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cropdet",
    version,
    about = "Crop-scheduled pedestrian detection: simulate, run, evaluate, sweep"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Pipeline,
    FullframeOnly,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pipeline => RunMode::Pipeline,
            ModeArg::FullframeOnly => RunMode::FullframeOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Simulated,
    External,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scenario file.
    Simulate {
        /// TOML scenario parameters; defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        frames: u64,
        /// Frame size as WIDTHxHEIGHT.
        #[arg(long, value_parser = parse_dims_arg)]
        dims: crate::geometry::FrameDims,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline (or the full-frame baseline) over a scenario.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// TOML pipeline config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pipeline")]
        mode: ModeArg,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        /// Program for the external backend, run through `sh -c`.
        #[arg(long)]
        cmd: Option<String>,
        /// Overrides the simulated detector seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a detection file against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        /// Annotation CSV or scenario file.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Also write the precision/recall curve as CSV.
        #[arg(long)]
        pr_csv: Option<PathBuf>,
        /// Omit the precision/recall arrays from the printed report.
        #[arg(long)]
        summary: bool,
    },
    /// Sweep one numeric config key and report AP and mean FPS per value.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=start:stop:step` or `key=v1,v2,...`, e.g. `gate.tau_hi=0.3:0.7:0.1`.
        #[arg(long)]
        sweep: String,
        #[arg(long, value_enum, default_value = "pipeline")]
        mode: ModeArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_dims_arg(raw: &str) -> Result<crate::geometry::FrameDims, String> {
    io::parse_dims(raw).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {raw:?}"))
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => io::load_config(&read(p)?).with_context(|| format!("in {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    io::read_scenario(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn make_backend(cfg: &PipelineConfig, scenario: &Scenario) -> Result<Box<dyn DetectorBackend>> {
    Ok(match cfg.detector.backend {
        BackendKind::Simulated => Box::new(SimulatedDetector::new(scenario, cfg.detector.sim.clone())),
        BackendKind::External => {
            let cmd = cfg
                .detector
                .command
                .as_deref()
                .ok_or_else(|| anyhow!("external backend needs a command (--cmd or detector.command)"))?;
            Box::new(ExternalDetector::spawn(cmd).with_context(|| format!("starting `{cmd}`"))?)
        }
    })
}

fn run_scenario(cfg: &PipelineConfig, scenario: &Scenario, mode: RunMode) -> Result<Vec<FrameResult>> {
    let backend = make_backend(cfg, scenario)?;
    let mut pipeline = Pipeline::new(
        cfg.clone(),
        scenario.dims,
        mode,
        crate::pipeline::LatencySource::Synthetic,
    )?;
    Ok(pipeline.run(scenario.num_frames, backend.as_ref())?)
}

/// Detections and ground truth aligned by frame index.
fn align(
    results: &[FrameResult],
    truth: &std::collections::BTreeMap<u64, Vec<BBox>>,
) -> (Vec<Vec<Detection>>, Vec<Vec<BBox>>) {
    let frames = results
        .iter()
        .map(|r| r.frame_idx + 1)
        .chain(truth.keys().map(|f| f + 1))
        .max()
        .unwrap_or(0) as usize;
    let mut dets = vec![Vec::new(); frames];
    for r in results {
        dets[r.frame_idx as usize].extend_from_slice(&r.accepted);
    }
    let mut gts = vec![Vec::new(); frames];
    for (f, boxes) in truth {
        gts[*f as usize].extend_from_slice(boxes);
    }
    (dets, gts)
}

fn score(results: &[FrameResult], truth: &std::collections::BTreeMap<u64, Vec<BBox>>, iou: f64) -> Result<EvalReport> {
    let (dets, gts) = align(results, truth);
    let latencies: Vec<f64> = results.iter().map(|r| r.latency).collect();
    Ok(evaluate(
        &dets,
        &gts,
        &latencies,
        &EvalConfig {
            iou_match_threshold: iou,
        },
    )?)
}

fn scenario_truth(s: &Scenario) -> std::collections::BTreeMap<u64, Vec<BBox>> {
    s.frames()
        .into_iter()
        .enumerate()
        .map(|(f, gts)| (f as u64, gts.into_iter().map(|(_, b)| b).collect()))
        .collect()
}

/// Values of a `key=start:stop:step` or `key=a,b,c` sweep.
pub fn parse_sweep(raw: &str) -> Result<(String, Vec<f64>)> {
    let (key, range) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("sweep must look like key=range"))?;
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .with_context(|| format!("bad sweep value {s:?}"))
    };
    let values = if range.contains(':') {
        let parts: Vec<&str> = range.split(':').collect();
        let [start, stop, step] = parts[..] else {
            bail!("range must be start:stop:step")
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step.is_nan() || step <= 0.0 || stop < start {
            bail!("range needs step > 0 and stop >= start");
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // round to suppress accumulated binary noise such as 0.30000000000000004
        (0..=n)
            .map(|i| ((start + step * i as f64) * 1e9).round() / 1e9)
            .collect()
    } else {
        range.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        bail!("empty sweep");
    }
    Ok((key.trim().to_string(), values))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            params,
            frames,
            dims,
            seed,
            out,
        } => {
            let mut p: ScenarioParams = match params {
                Some(path) => io::parse_toml(&read(&path)?).with_context(|| format!("in {}", path.display()))?,
                None => ScenarioParams::default(),
            };
            if let Some(s) = seed {
                p.seed = s;
            }
            let scenario = generate_scenario(&p, dims, frames)?;
            write(&out, &io::write_scenario(&scenario))?;
            log::info!(
                "wrote {} tracks over {} frames to {}",
                scenario.tracks.len(),
                frames,
                out.display()
            );
        }
        Command::Run {
            scenario,
            config,
            out,
            mode,
            backend,
            cmd,
            seed,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(b) = backend {
                cfg.detector.backend = match b {
                    BackendArg::Simulated => BackendKind::Simulated,
                    BackendArg::External => BackendKind::External,
                };
            }
            if cmd.is_some() {
                cfg.detector.command = cmd;
            }
            if let Some(s) = seed {
                cfg.detector.sim.seed = s;
            }
            let scenario = load_scenario(&scenario)?;
            let results = run_scenario(&cfg, &scenario, mode.into())?;
            let skipped = results.iter().filter(|r| r.error.is_some()).count();
            write(&out, &io::write_detections(&results))?;
            log::info!(
                "processed {} frames ({skipped} skipped), wrote {}",
                results.len(),
                out.display()
            );
        }
        Command::Eval {
            detections,
            truth,
            iou,
            pr_csv,
            summary,
        } => {
            let results =
                io::read_detections(&read(&detections)?).with_context(|| format!("in {}", detections.display()))?;
            let truth = io::parse_annotations(&read(&truth)?).with_context(|| format!("in {}", truth.display()))?;
            let mut report = score(&results, &truth, iou)?;
            if let Some(path) = pr_csv {
                let mut csv = String::from("recall,precision\n");
                for (r, p) in report.recall.iter().zip(&report.precision) {
                    csv.push_str(&format!("{r},{p}\n"));
                }
                write(&path, &csv)?;
            }
            if summary {
                report.precision.clear();
                report.recall.clear();
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Bench {
            scenario,
            config,
            sweep,
            mode,
            seed,
            iou,
            out,
        } => {
            let mut base = load_config(config.as_deref())?;
            if let Some(s) = seed {
                base.detector.sim.seed = s;
            }
            let scenario = load_scenario(&scenario)?;
            let truth = scenario_truth(&scenario);
            let (key, values) = parse_sweep(&sweep)?;
            let mut csv = format!("{key},ap,mean_fps\n");
            for v in values {
                let cfg = io::with_override(&base, &key, v)?;
                let results = run_scenario(&cfg, &scenario, mode.into())?;
                let report = score(&results, &truth, iou)?;
                log::info!("{key}={v}: ap {:.4}, mean fps {:.3}", report.ap, report.mean_fps);
                csv.push_str(&format!("{v},{},{}\n", report.ap, report.mean_fps));
            }
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}
