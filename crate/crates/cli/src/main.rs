//! `pantext` command line: inference over PPM images, detection evaluation
//! against ICDAR/curved ground truth, weight-file generation, anchor lattice
//! dumps, the gradient check, and the full verification suite.
//!
//! Exit codes: 0 on success, 1 on validation failures (malformed inputs,
//! failed checks), 2 on I/O errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pantext_core::anchors::{generate_anchors, AnchorSpec, PyramidLevel};
use pantext_core::pipeline::{
    self, detections_from_json, detections_to_json, gt, load_image, Detection, GroundTruth,
    PipelineConfig, PipelineError,
};
use pantext_core::selftest;
use pantext_core::weights::ModelWeights;

#[derive(Parser)]
#[command(
    name = "pantext",
    version,
    about = "Mask R-CNN style text detector with an attention feature pyramid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GtFormatArg {
    Icdar,
    Ctw,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    P2,
    P3,
    P4,
}

#[derive(Subcommand)]
enum Command {
    /// Run inference on one PPM image and write detection JSON.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Flat key=value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate detection JSON files against a ground-truth directory.
    Eval {
        /// Directory of per-image detection JSON files (image key = file stem).
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        format: GtFormatArg,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Optional path for the full JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded random weights file.
    GenWeights {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Pyramid channel width C.
        #[arg(long, default_value_t = 32)]
        channels: usize,
        /// Attention block working width; defaults to the pyramid width.
        #[arg(long)]
        context_channels: Option<usize>,
    },
    /// Dump the anchor lattice of one pyramid level as JSON.
    Anchors {
        #[arg(long)]
        level: LevelArg,
        /// Square input image side in pixels (must be divisible by 16).
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic loss gradients against finite differences.
    Gradcheck,
    /// Run every verification suite.
    Selftest,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Io(_) => Failure::io(e.to_string()),
            PipelineError::Weights(pantext_core::weights::WeightsError::Io(_)) => {
                Failure::io(e.to_string())
            }
            _ => Failure::validation(e.to_string()),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::io(format!("reading {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("reading {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::io(format!("writing {}: {e}", path.display())))
}

fn cmd_infer(
    image: &Path,
    weights: &Path,
    config: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let cfg = match config {
        Some(path) => PipelineConfig::parse(&read_text(path)?)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?,
        None => PipelineConfig::default(),
    };
    let weights = ModelWeights::load(weights).map_err(|e| Failure::from(PipelineError::from(e)))?;
    let loaded = load_image(&read_file(image)?, cfg.test_scale)
        .map_err(|e| Failure::validation(format!("{}: {e}", image.display())))?;
    let detections = pipeline::infer(&loaded, &weights, &cfg)?;
    write_file(out, detections_to_json(&detections).as_bytes())?;
    println!("{} detections -> {}", detections.len(), out.display());
    Ok(())
}

fn load_gt_dir(dir: &Path, format: gt::GtFormat) -> Result<GroundTruth, Failure> {
    let mut ground_truth = GroundTruth::default();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Failure::io(format!("reading {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Failure::io(format!("reading {}: {e}", dir.display())))?;
        let path = entry.path();
        if path.extension().is_some_and(|ext| ext == "txt") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::validation(format!(
            "no .txt ground-truth files in {}",
            dir.display()
        )));
    }
    for path in paths {
        let key = gt::gt_file_key(&path)
            .ok_or_else(|| Failure::validation(format!("unusable file name {}", path.display())))?;
        let instances = gt::parse_gt(&read_file(&path)?, format)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        if ground_truth.0.insert(key.clone(), instances).is_some() {
            return Err(Failure::validation(format!(
                "duplicate ground-truth key {key:?} in {}",
                dir.display()
            )));
        }
    }
    Ok(ground_truth)
}

fn load_dets_dir(dir: &Path) -> Result<BTreeMap<String, Vec<Detection>>, Failure> {
    let mut detections = BTreeMap::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Failure::io(format!("reading {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| Failure::io(format!("reading {}: {e}", dir.display())))?;
        let path = entry.path();
        if !path.extension().is_some_and(|ext| ext == "json") {
            continue;
        }
        let key = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Failure::validation(format!("unusable file name {}", path.display())))?
            .to_string();
        let dets = detections_from_json(&read_text(&path)?)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        detections.insert(key, dets);
    }
    if detections.is_empty() {
        return Err(Failure::validation(format!(
            "no .json detection files in {}",
            dir.display()
        )));
    }
    Ok(detections)
}

fn cmd_eval(
    dets: &Path,
    gt_dir: &Path,
    format: GtFormatArg,
    iou: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(Failure::validation(format!(
            "--iou must lie in [0, 1], got {iou}"
        )));
    }
    let format = match format {
        GtFormatArg::Icdar => gt::GtFormat::Icdar,
        GtFormatArg::Ctw => gt::GtFormat::Ctw,
    };
    let ground_truth = load_gt_dir(gt_dir, format)?;
    let detections = load_dets_dir(dets)?;
    let report = pipeline::evaluate(&detections, &ground_truth, iou)?;
    println!("R={:.4}", report.recall);
    println!("P={:.4}", report.precision);
    println!("F={:.4}", report.f_measure);
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Failure::validation(e.to_string()))?;
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_gen_weights(
    seed: u64,
    out: &Path,
    channels: usize,
    context_channels: Option<usize>,
) -> Result<(), Failure> {
    let context = context_channels.unwrap_or(channels);
    let weights = ModelWeights::generate(channels, context, seed)
        .map_err(|e| Failure::validation(e.to_string()))?;
    weights
        .save(out)
        .map_err(|e| Failure::io(format!("writing {}: {e}", out.display())))?;
    println!(
        "weights (C={channels}, C_ctx={context}, seed={seed}) -> {}",
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AnchorDump {
    level: &'static str,
    stride: usize,
    scale: f64,
    aspect_ratios: Vec<f64>,
    feature_size: [usize; 2],
    anchors: Vec<[f64; 4]>,
}

fn cmd_anchors(level: LevelArg, size: usize, out: Option<&Path>) -> Result<(), Failure> {
    if size == 0 || !size.is_multiple_of(16) {
        return Err(Failure::validation(format!(
            "--size must be a positive multiple of 16, got {size}"
        )));
    }
    let level = match level {
        LevelArg::P2 => PyramidLevel::P2,
        LevelArg::P3 => PyramidLevel::P3,
        LevelArg::P4 => PyramidLevel::P4,
    };
    let spec = AnchorSpec::default();
    let stride = spec.stride(level);
    let cells = size / stride;
    let anchors = generate_anchors(&spec, level, cells, cells);
    let dump = AnchorDump {
        level: level.name(),
        stride,
        scale: spec.scale(level),
        aspect_ratios: spec.aspect_ratios.clone(),
        feature_size: [cells, cells],
        anchors: anchors.iter().map(|a| [a.x1, a.y1, a.x2, a.y2]).collect(),
    };
    let json = serde_json::to_string(&dump).map_err(|e| Failure::validation(e.to_string()))?;
    match out {
        Some(path) => write_file(path, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct GradcheckReport {
    checks: Vec<GradcheckEntry>,
    pass: bool,
}

#[derive(Serialize)]
struct GradcheckEntry {
    name: &'static str,
    max_rel_err: f64,
    tolerance: f64,
    pass: bool,
}

fn cmd_gradcheck() -> Result<(), Failure> {
    const TOLERANCE: f64 = 1e-5;
    let checks: Vec<GradcheckEntry> = selftest::gradient_worst_errors()
        .into_iter()
        .map(|(name, max_rel_err)| GradcheckEntry {
            name,
            max_rel_err,
            tolerance: TOLERANCE,
            pass: max_rel_err < TOLERANCE,
        })
        .collect();
    let pass = checks.iter().all(|c| c.pass);
    let report = GradcheckReport { checks, pass };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Failure::validation(e.to_string()))?
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::validation("gradient check failed".to_string()))
    }
}

fn cmd_selftest() -> Result<(), Failure> {
    let start = std::time::Instant::now();
    let outcomes = selftest::run_all();
    let mut failed = 0;
    for outcome in &outcomes {
        let status = if outcome.passed { "ok  " } else { "FAIL" };
        println!(
            "{status} {:<18} {:>8.2?}  {}",
            outcome.name, outcome.elapsed, outcome.detail
        );
        if !outcome.passed {
            failed += 1;
        }
    }
    println!(
        "{} suites, {} failed, total {:.2?}",
        outcomes.len(),
        failed,
        start.elapsed()
    );
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::validation(format!("{failed} suites failed")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Infer {
            image,
            weights,
            config,
            out,
        } => cmd_infer(&image, &weights, config.as_deref(), &out),
        Command::Eval {
            dets,
            gt_dir,
            format,
            iou,
            out,
        } => cmd_eval(&dets, &gt_dir, format, iou, out.as_deref()),
        Command::GenWeights {
            seed,
            out,
            channels,
            context_channels,
        } => cmd_gen_weights(seed, &out, channels, context_channels),
        Command::Anchors { level, size, out } => cmd_anchors(level, size, out.as_deref()),
        Command::Gradcheck => cmd_gradcheck(),
        Command::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
