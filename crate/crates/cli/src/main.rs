//! `crosswalk`: estimate crossings from detection CSVs, classify trajectories,
//! generate synthetic scenes, render SVGs and compare batch runs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crosswalk_core::io::config::load_config;
use crosswalk_core::io::detections::{filter_detections, group_trajectories, read_detections, positions};
use crosswalk_core::io::report::{read_report, ClassRecord};
use crosswalk_core::io::svg::{
    activity_intervals, render_activity, render_frames, render_heatmap, render_scene, write_frames, RenderOptions,
};
use crosswalk_core::io::write_text;
use crosswalk_core::{
    batch_consistency, build_band_model, classify, generate_scene, run_em, Detection, DetectionFilter, EmConfig,
    Layout, ParseMode, Point2, RunReport, SceneParams,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "crosswalk", version, about = "Estimate pedestrian crossings from detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit corners and crossing lines to a detection CSV.
    Estimate(EstimateArgs),
    /// Classify each trajectory against an estimated model.
    Classify(ClassifyArgs),
    /// Generate a synthetic scene with known ground truth.
    Synth(SynthArgs),
    /// Render a report and its detections to SVG.
    Render(RenderArgs),
    /// Compare batch reports against a reference report.
    Consistency(ConsistencyArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Detection CSV: object_id,timestamp,x,y[,confidence][,class].
    #[arg(short, long)]
    input: PathBuf,
    /// Skip malformed rows (with a warning) instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Accepted class label; repeatable. Defaults to "pedestrian".
    /// Rows without a label are always accepted.
    #[arg(long = "class", value_name = "LABEL")]
    classes: Vec<String>,
    /// Accept every class label.
    #[arg(long, conflicts_with = "classes")]
    all_classes: bool,
    #[arg(long, default_value_t = 0.0)]
    min_confidence: f64,
}

impl InputArgs {
    fn load(&self) -> Result<Vec<Detection>> {
        let mode = if self.lenient { ParseMode::Lenient } else { ParseMode::Strict };
        let outcome = read_detections(&self.input, mode)?;
        for skipped in &outcome.skipped {
            log::warn!("{}: skipped {skipped}", self.input.display());
        }
        let filter = DetectionFilter {
            classes: if self.all_classes {
                None
            } else if self.classes.is_empty() {
                DetectionFilter::default().classes
            } else {
                Some(self.classes.clone())
            },
            min_confidence: self.min_confidence,
        };
        let kept = filter_detections(&outcome.detections, &filter);
        log::info!("{} of {} detections pass the filter", kept.len(), outcome.detections.len());
        Ok(kept)
    }
}

/// Every configuration field as an optional override. Flags win over the
/// config file, which wins over the defaults.
#[derive(Args)]
struct ConfigArgs {
    /// TOML file of configuration fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Estimate a single crossing (k = 2).
    #[arg(long, conflicts_with = "k")]
    two_corner: bool,
    /// Number of corners.
    #[arg(long)]
    k: Option<usize>,
    /// Seed for k-means initialization and pair sampling.
    #[arg(long)]
    seed: u64,
    /// Outlier rejection distance.
    #[arg(long)]
    outlier_distance: Option<f64>,
    /// Occupancy cell size.
    #[arg(long)]
    resolution: Option<f64>,
    /// Corner movement that ends the robust phase.
    #[arg(long)]
    phase_switch_tolerance: Option<f64>,
    /// Corner movement that stops the refined phase.
    #[arg(long)]
    stop_tolerance: Option<f64>,
    /// Starting margin of the refined phase.
    #[arg(long)]
    margin_upper: Option<f64>,
    /// Smallest margin of the refined phase.
    #[arg(long)]
    margin_lower: Option<f64>,
    /// Iterations per unit of margin narrowing.
    #[arg(long)]
    margin_rate: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Also fit diagonals between non-adjacent corners.
    #[arg(long)]
    allow_diagonals: bool,
    /// Warn when initial corners are closer than this.
    #[arg(long)]
    min_center_spacing: Option<f64>,
    /// Largest input fitted with all Theil-Sen pairs.
    #[arg(long)]
    theil_sen_exact_limit: Option<usize>,
    /// Seeded k-means runs at initialization.
    #[arg(long)]
    kmeans_restarts: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<EmConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => EmConfig::default(),
        };
        cfg.seed = self.seed;
        if self.two_corner {
            cfg.k = 2;
        }
        if self.allow_diagonals {
            cfg.allow_diagonals = true;
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            k,
            outlier_distance,
            resolution,
            phase_switch_tolerance,
            stop_tolerance,
            margin_upper,
            margin_lower,
            margin_rate,
            max_iterations,
            min_center_spacing,
            theil_sen_exact_limit,
            kmeans_restarts
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Report path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BandArgs {
    /// Half-width of the crossing band.
    #[arg(long, default_value_t = 2.0)]
    inner: f64,
    /// Corner and outer band radius.
    #[arg(long, default_value_t = 2.75)]
    outer: f64,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Report produced by `estimate`.
    #[arg(short, long)]
    report: PathBuf,
    #[command(flatten)]
    band: BandArgs,
    /// Write the whole report with a `classes` field instead of the bare list.
    #[arg(long)]
    embed: bool,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutChoice {
    /// 20 x 20 square.
    Square,
    /// 20 x 20 square with a central island of radius 6.
    Circle,
    /// One 12 m crossing.
    TwoCorner,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file of scene parameters.
    #[arg(long, value_name = "FILE")]
    scene: Option<PathBuf>,
    /// Preset layout, replacing the one from the scene file.
    #[arg(long)]
    layout: Option<LayoutChoice>,
    #[arg(long)]
    detections: Option<usize>,
    #[arg(long)]
    crossings: Option<usize>,
    #[arg(long)]
    jaywalkers: Option<usize>,
    #[arg(long)]
    bikers: Option<usize>,
    #[arg(long)]
    dwell_fraction: Option<f64>,
    #[arg(long)]
    clutter_fraction: Option<f64>,
    #[arg(long)]
    seed: u64,
    /// Detection CSV to write.
    #[arg(short, long)]
    output: PathBuf,
    /// Ground-truth JSON to write.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(short, long)]
    report: PathBuf,
    /// Directory for scene.svg, heatmap.svg, activity.svg and frames/.
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    band: BandArgs,
    /// Image width in pixels.
    #[arg(long, default_value_t = 800)]
    width: u32,
    /// Time bin of the activity timeline, in seconds.
    #[arg(long, default_value_t = 1.0)]
    bin: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct ConsistencyArgs {
    /// Report of the run over all data.
    #[arg(long)]
    reference: PathBuf,
    /// One report per batch.
    #[arg(required = true)]
    batches: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => write_text(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let points = positions(&args.input.load()?);
    let (model, trace) = run_em(&points, &cfg)
        .with_context(|| format!("estimating from {}", args.input.input.display()))?;
    if !trace.converged {
        log::warn!("stopped after {} iterations without converging", trace.iterations.len());
    }
    let report = RunReport::new(&cfg, &model, trace, &points);
    emit(args.output.as_deref(), &report.to_json()?)
}

fn classify_cmd(args: &ClassifyArgs) -> Result<()> {
    let mut report = read_report(&args.report)?;
    let band = build_band_model(&report.model(), args.band.inner, args.band.outer)?;
    let trajectories = group_trajectories(&args.input.load()?)?;
    let records: Vec<ClassRecord> = trajectories
        .iter()
        .map(|t| {
            let class = classify(t, &band);
            ClassRecord {
                object_id: t.object_id().to_string(),
                class: class.kind,
                segment: class.segment,
                band_fraction: class.band_fraction,
            }
        })
        .collect();
    for kind in crosswalk_core::TrajectoryKind::ALL {
        let n = records.iter().filter(|r| r.class == kind).count();
        log::info!("{kind}: {n}");
    }
    let text = if args.embed {
        report.classes = Some(records);
        report.to_json()?
    } else {
        to_json(&records)?
    };
    emit(args.output.as_deref(), &text)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut params = match &args.scene {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SceneParams>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SceneParams::default(),
    };
    if let Some(layout) = args.layout {
        params.layout = match layout {
            LayoutChoice::Square => Layout::Square { side: 20.0 },
            LayoutChoice::Circle => Layout::TrafficCircle { side: 20.0, radius: 6.0 },
            LayoutChoice::TwoCorner => Layout::TwoCorner {
                a: Point2::new(0.0, 0.0),
                b: Point2::new(0.0, 12.0),
                sidewalk_angle: 0.0,
            },
        };
    }
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { params.$field = v; })*
        };
    }
    set!(detections, crossings, jaywalkers, bikers, dwell_fraction, clutter_fraction);
    let scene = generate_scene(&params, args.seed)?;
    scene.write_csv(&args.output)?;
    if let Some(truth) = &args.truth {
        write_text(truth, &scene.ground_truth_json()?)?;
    }
    log::info!("wrote {} detections to {}", scene.detections.len(), args.output.display());
    Ok(())
}

fn render(args: &RenderArgs) -> Result<()> {
    let report = read_report(&args.report)?;
    let model = report.model();
    let detections = args.input.load()?;
    let points = positions(&detections);
    let opts = RenderOptions {
        width: f64::from(args.width),
        inner: args.band.inner,
        outer: args.band.outer,
        ..RenderOptions::default()
    };
    if !(args.bin > 0.0 && args.bin.is_finite()) {
        bail!("--bin must be positive, got {}", args.bin);
    }
    std::fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let dir = &args.output;
    write_text(dir.join("scene.svg"), &render_scene(&points, &model, Some(&report.trace), &opts))?;
    write_text(dir.join("heatmap.svg"), &render_heatmap(&points, report.config.resolution, &opts)?)?;
    let intervals = activity_intervals(&detections, &model, args.band.inner, args.bin);
    write_text(dir.join("activity.svg"), &render_activity(&intervals, &opts))?;
    let frames = render_frames(&points, &model.segments, &report.trace, &opts);
    let written = write_frames(dir.join("frames"), &frames)?;
    log::info!("wrote {} frames to {}", written.len(), dir.join("frames").display());
    Ok(())
}

fn consistency(args: &ConsistencyArgs) -> Result<()> {
    let reference = read_report(&args.reference)?.model();
    let models = args
        .batches
        .iter()
        .map(|p| read_report(p).map(|r| r.model()))
        .collect::<Result<Vec<_>, _>>()?;
    let table = batch_consistency(&models, &reference)?;
    let text = match args.format {
        Format::Text => table.to_string(),
        Format::Json => to_json(&table)?,
    };
    emit(args.output.as_deref(), &text)
}

/// Joins the error chain, skipping causes that a library error already
/// embeds in its own message.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain().map(ToString::to_string) {
        if !out.ends_with(&cause) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&cause);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(args) => estimate(args),
        Command::Classify(args) => classify_cmd(args),
        Command::Synth(args) => synth(args),
        Command::Render(args) => render(args),
        Command::Consistency(args) => consistency(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::FAILURE
        }
    }
}
