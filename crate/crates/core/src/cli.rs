//! The `osdet` command line: `simulate`, `fuse`, `evaluate` and `sweep`.
//!
//! Exit codes: 0 on success, 1 on invalid data or configuration, 2 on usage
//! errors. Diagnostics go to stderr; results go to files or stdout.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{
    self, CurveAnalysis, CurvePoint, EvalConfig, ScoredScene, DEFAULT_MATCH_IOU, DEFAULT_THETA_MAX,
    DEFAULT_THETA_MIN, DEFAULT_THETA_STEPS,
};
use crate::fusion::Observation;
use crate::io::{self, FusedFile, FusedImage, GroundTruthFile};
use crate::partition::{DEFAULT_CLUSTER_IOU, DEFAULT_PARTITIONER, PARTITIONERS};
use crate::pipeline::{Pipeline, BUILDERS, DEFAULT_PIPELINE};
use crate::simulator::{dataset_files, simulate_dataset, SimulatorConfig};

#[derive(Debug, Parser)]
#[command(name = "osdet", version, about = "Fuse multi-pass detections and evaluate them under open-set conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic multi-pass detections and ground truth
    Simulate(SimulateArgs),
    /// Group and fuse detections into observations
    Fuse(FuseArgs),
    /// Score observations at a single entropy threshold
    Evaluate(EvaluateArgs),
    /// Score observations across a grid of entropy thresholds
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulator configuration; flags below override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Detection file to write
    #[arg(long)]
    pub output: PathBuf,
    /// Ground-truth file to write
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Number of scenes (images)
    #[arg(long, default_value_t = 100)]
    pub scenes: usize,
    /// Forward passes per scene [default: 42]
    #[arg(long)]
    pub passes: Option<usize>,
    /// RNG seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of known classes k [default: 20]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Known objects per scene [default: 4]
    #[arg(long)]
    pub known: Option<usize>,
    /// Unknown (open-set) objects per scene [default: 2]
    #[arg(long)]
    pub unknown: Option<usize>,
    /// Per-pass detection probability of each object [default: 0.8]
    #[arg(long)]
    pub p_det: Option<f64>,
    /// Standard deviation of box-corner jitter in pixels [default: 1.5]
    #[arg(long)]
    pub box_sigma: Option<f64>,
    /// Dirichlet concentration on the target class [default: 20]
    #[arg(long)]
    pub alpha_hi: Option<f64>,
    /// Dirichlet concentration on every other class [default: 0.5]
    #[arg(long)]
    pub alpha_lo: Option<f64>,
    /// Known classes an unknown object flickers between [default: 3]
    #[arg(long)]
    pub confusion_size: Option<usize>,
    /// Expected spurious detections per pass [default: 0.5]
    #[arg(long)]
    pub clutter_rate: Option<f64>,
    /// Image width in pixels [default: 960]
    #[arg(long)]
    pub width: Option<f64>,
    /// Image height in pixels [default: 720]
    #[arg(long)]
    pub height: Option<f64>,
    /// Smallest object side length in pixels [default: 50]
    #[arg(long)]
    pub object_size_min: Option<f64>,
    /// Largest object side length in pixels [default: 300]
    #[arg(long)]
    pub object_size_max: Option<f64>,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

fn pipeline_names() -> PossibleValuesParser {
    PossibleValuesParser::new(BUILDERS.names().collect::<Vec<_>>())
}

fn partitioner_names() -> PossibleValuesParser {
    PossibleValuesParser::new(PARTITIONERS.names().collect::<Vec<_>>())
}

#[derive(Debug, Args)]
pub struct ObservationArgs {
    /// Detection file, or a fused-observation file written by `fuse`
    #[arg(long)]
    pub input: PathBuf,
    /// IoU at or above which two detections join the same observation
    #[arg(long, default_value_t = DEFAULT_CLUSTER_IOU)]
    pub cluster_iou: f64,
    /// Use only the first N forward passes of each image [default: all]
    #[arg(long)]
    pub passes: Option<usize>,
    /// How observations are built from raw detections
    #[arg(long, default_value = DEFAULT_PIPELINE, value_parser = pipeline_names())]
    pub pipeline: String,
    /// Connected-components strategy used by dropout-sampling
    #[arg(long, default_value = DEFAULT_PARTITIONER, value_parser = partitioner_names())]
    pub partitioner: String,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    /// Ground-truth file
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// IoU at or above which an observation matches a ground-truth object
    #[arg(long, default_value_t = DEFAULT_MATCH_IOU)]
    pub match_iou: f64,
    /// Observations with fewer member detections are discarded
    #[arg(long, default_value_t = 1)]
    pub min_detections: usize,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub observe: ObservationArgs,
    /// Fused-observation JSON file to write
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub observe: ObservationArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Reject observations whose entropy (nats) exceeds this [default: no entropy test]
    #[arg(long)]
    pub entropy_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub observe: ObservationArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// CSV file to write, one row per threshold
    #[arg(long)]
    pub output: PathBuf,
    /// Smallest entropy threshold
    #[arg(long, default_value_t = DEFAULT_THETA_MIN)]
    pub theta_min: f64,
    /// Largest entropy threshold
    #[arg(long, default_value_t = DEFAULT_THETA_MAX)]
    pub theta_max: f64,
    /// Number of evenly spaced thresholds, endpoints included
    #[arg(long, default_value_t = DEFAULT_THETA_STEPS)]
    pub theta_steps: usize,
    /// Report the lowest open-set error among points reaching this F1
    #[arg(long)]
    pub reference_f1: Option<f64>,
    /// Report the highest F1 among points at or below this open-set error
    #[arg(long)]
    pub reference_ose: Option<u64>,
    /// Also write the summary as JSON to this path
    #[arg(long)]
    pub summary_json: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fuse(args) => fuse(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Sweep(args) => sweep(args),
    }
}

fn with_workers<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(job))
}

fn simulator_config(args: &SimulateArgs) -> Result<SimulatorConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Schema {
                path: path.clone(),
                location: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?
        }
        None => SimulatorConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = args.$flag { config.$field = v; })*
        };
    }
    apply!(
        passes => passes,
        seed => seed,
        classes => class_count,
        known => num_known_objects,
        unknown => num_unknown_objects,
        p_det => p_det,
        box_sigma => box_sigma,
        alpha_hi => alpha_hi,
        alpha_lo => alpha_lo,
        confusion_size => confusion_size,
        clutter_rate => clutter_rate,
    );
    if let Some(w) = args.width {
        config.image_size.0 = w;
    }
    if let Some(h) = args.height {
        config.image_size.1 = h;
    }
    if let Some(lo) = args.object_size_min {
        config.object_size.0 = lo;
    }
    if let Some(hi) = args.object_size_max {
        config.object_size.1 = hi;
    }
    config.validate()?;
    Ok(config)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = simulator_config(&args)?;
    let scenes = with_workers(args.workers, || simulate_dataset(&config, args.scenes))??;
    let (detections, ground_truth) = dataset_files(&scenes, config.class_count);
    io::save_detections(&detections, &args.output)?;
    io::save_ground_truth(&ground_truth, &args.ground_truth)?;
    Ok(())
}

struct ObservedImages {
    class_count: usize,
    images: Vec<(String, Vec<Observation>)>,
}

fn observe(args: &ObservationArgs) -> Result<ObservedImages> {
    if io::is_fused_file(&args.input)? {
        let file = io::load_fused(&args.input)?;
        return Ok(ObservedImages {
            class_count: file.class_count,
            images: file.images.into_iter().map(|i| (i.image_id, i.observations)).collect(),
        });
    }
    let file = io::load_detections(&args.input)?;
    let pipeline = Pipeline::new(&args.pipeline, &args.partitioner)?
        .with_cluster_iou(args.cluster_iou)?
        .with_max_passes(args.passes)?;
    let observed = with_workers(args.workers, || {
        file.images
            .par_iter()
            .map(|img| Ok((img.image_id.clone(), pipeline.observe(&img.passes)?)))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(ObservedImages {
        class_count: file.class_count,
        images: observed,
    })
}

fn fuse(args: FuseArgs) -> Result<()> {
    let observed = observe(&args.observe)?;
    let file = FusedFile::new(
        observed.class_count,
        observed
            .images
            .into_iter()
            .map(|(image_id, observations)| FusedImage { image_id, observations })
            .collect(),
    );
    io::save_fused(&file, &args.output)
}

/// Pairs every observed image with its ground truth. Ground-truth images
/// without detections contribute their objects as misses.
fn join_ground_truth(observed: ObservedImages, gt: GroundTruthFile, gt_path: &Path) -> Result<Vec<ScoredScene>> {
    if gt.class_count != observed.class_count {
        return Err(Error::Validation {
            path: gt_path.to_path_buf(),
            location: "class_count".into(),
            message: format!(
                "{} classes, but the observations use {}",
                gt.class_count, observed.class_count
            ),
        });
    }
    let mut by_id: HashMap<String, _> = gt.images.into_iter().map(|i| (i.image_id.clone(), i)).collect();
    let mut scenes = Vec::with_capacity(observed.images.len());
    for (id, observations) in observed.images {
        let gt_image = by_id.remove(&id).ok_or_else(|| Error::Validation {
            path: gt_path.to_path_buf(),
            location: format!("image '{id}'"),
            message: "no ground truth for this image".into(),
        })?;
        scenes.push(ScoredScene {
            observations,
            ground_truth: gt_image.objects,
        });
    }
    let mut leftover: Vec<_> = by_id.into_values().collect();
    leftover.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    scenes.extend(leftover.into_iter().map(|i| ScoredScene {
        observations: Vec::new(),
        ground_truth: i.objects,
    }));
    Ok(scenes)
}

fn scenes_for(observe_args: &ObservationArgs, scoring: &ScoringArgs) -> Result<Vec<ScoredScene>> {
    let observed = observe(observe_args)?;
    let gt = io::load_ground_truth(&scoring.ground_truth)?;
    join_ground_truth(observed, gt, &scoring.ground_truth)
}

fn eval_config(observe: &ObservationArgs, scoring: &ScoringArgs, theta: f64) -> Result<EvalConfig> {
    let config = EvalConfig {
        theta,
        match_iou: scoring.match_iou,
        min_detections: scoring.min_detections,
        cluster_iou: observe.cluster_iou,
    };
    config.validate()?;
    Ok(config)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let theta = args.entropy_threshold.unwrap_or(f64::INFINITY);
    let config = eval_config(&args.observe, &args.scoring, theta)?;
    let scenes = scenes_for(&args.observe, &args.scoring)?;
    let points = with_workers(args.observe.workers, || evaluation::sweep_parallel(&scenes, &[theta], &config))?;
    print!("{}", io::results_csv(&points));
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    pipeline: &'a str,
    thresholds: usize,
    #[serde(flatten)]
    analysis: &'a CurveAnalysis,
}

fn describe(point: Option<&CurvePoint>) -> String {
    match point {
        Some(p) => format!(
            "theta {:.6}  f1 {:.6}  precision {:.6}  recall {:.6}  abs_ose {}",
            p.theta, p.f1, p.precision, p.recall, p.counts.abs_ose
        ),
        None => "unattainable".to_string(),
    }
}

fn sweep(args: SweepArgs) -> Result<()> {
    let grid = evaluation::theta_grid(args.theta_min, args.theta_max, args.theta_steps)?;
    let config = eval_config(&args.observe, &args.scoring, grid[0])?;
    let scenes = scenes_for(&args.observe, &args.scoring)?;
    let points = with_workers(args.observe.workers, || evaluation::sweep_parallel(&scenes, &grid, &config))?;
    io::save_results(&points, &args.output)?;

    let analysis = evaluation::curve_analysis(&points, args.reference_f1, args.reference_ose);
    let mut out = std::io::stdout().lock();
    let mut report = || -> std::io::Result<()> {
        writeln!(out, "max F1:              {}", describe(analysis.max_f1.as_ref()))?;
        if let (Some(r), Some(l)) = (analysis.reference_ose, &analysis.f1_at_reference_ose) {
            writeln!(out, "F1 at OSE <= {r}: {}", describe(l.point()))?;
        }
        if let (Some(r), Some(l)) = (analysis.reference_f1, &analysis.ose_at_reference_f1) {
            writeln!(out, "OSE at F1 >= {r}: {}", describe(l.point()))?;
        }
        Ok(())
    };
    report().map_err(|e| Error::io("<stdout>", e))?;

    if let Some(path) = &args.summary_json {
        let summary = SweepSummary {
            pipeline: if io::is_fused_file(&args.observe.input)? {
                "fused-input"
            } else {
                &args.observe.pipeline
            },
            thresholds: grid.len(),
            analysis: &analysis,
        };
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
