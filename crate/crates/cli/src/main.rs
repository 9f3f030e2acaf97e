use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{ArgAction, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use sarriver::centerline::trace_centerline;
use sarriver::crf::segment_river_detailed;
use sarriver::despeckle::{checkpoint, despeckle};
use sarriver::io::{
    export_png, read_control_points, read_polyline, read_raster, write_metrics, write_polyline, write_raster, PngStyle,
};
use sarriver::lines::detect_lines;
use sarriver::metrics::{confusion, prf, MetricsRow};
use sarriver::pipeline::{acquire, run_pipeline_with, train_models, PipelineConfig, TrainPlan};
use sarriver::ResponseMap;

/// SAR despeckling and narrow-river extraction.
///
/// Every command reads its parameters from an optional JSON file
/// (`--config`), then applies `--set key.path=value` overrides, then the
/// command's own flags. Commands other than `train` take a pipeline
/// configuration; `train` takes a training plan.
#[derive(Parser, Debug)]
#[command(name = "sarriver", version, about)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set segmentation.lambda=4`.
    /// The value is parsed as JSON, falling back to a plain string.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed of the random draws: speckle for `simulate` and `pipeline`,
    /// initialisation and sampling for `train`. The other commands are
    /// deterministic and ignore it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a speckled river scene with its truth mask and control points.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train networks A, B and C on synthetic data.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Start from the reduced single-core schedule instead of the full one.
        #[arg(long)]
        desk_scale: bool,
    },
    /// Despeckle an intensity raster with a trained checkpoint.
    Despeckle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Line-detector response of an intensity raster.
    DetectLines {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Least-cost centerline through the control points.
    Centerline {
        #[arg(long)]
        response: PathBuf,
        #[arg(long)]
        control_points: PathBuf,
        /// River to trace; defaults to the first one in the file.
        #[arg(long)]
        river_id: Option<String>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        n_pow: Option<f64>,
    },
    /// River mask around a centerline.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        centerline: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Precision, recall and F-score of a mask against the truth.
    Evaluate {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "scene")]
        scene: String,
        #[arg(long, default_value = "method")]
        method: String,
        /// Metrics CSV to write; the row is always printed.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Full run: simulate or read, despeckle, detect, trace, segment, evaluate.
    Pipeline {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Skip the run without despeckling.
        #[arg(long)]
        no_baseline: bool,
    },
}

/// Recursively overlays `patch` on `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn set_path(root: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not KEY=VALUE"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in key.split('.') {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(part.to_string())
            .or_insert(Value::Null);
    }
    *node = value;
    Ok(())
}

fn load_config<T: Serialize + DeserializeOwned>(base: T, file: Option<&Path>, overrides: &[String]) -> anyhow::Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        merge(&mut value, serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    for o in overrides {
        set_path(&mut value, o)?;
    }
    serde_json::from_value(value).context("invalid configuration")
}

fn print_rows(rows: &[MetricsRow]) {
    for r in rows {
        println!(
            "{} {}: precision {:.4} recall {:.4} fscore {:.4}",
            r.scene, r.method, r.precision, r.recall, r.fscore
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Train { out, desk_scale } = &cli.command {
        let base = if *desk_scale { TrainPlan::desk_scale() } else { TrainPlan::default() };
        let mut plan = load_config(base, cli.config.as_deref(), &cli.overrides)?;
        if let Some(s) = cli.seed {
            plan.seed = s;
        }
        let models = train_models(&plan, Some(out))?;
        for (name, log) in ["A", "B", "C"].iter().zip(&models.logs) {
            if let Some(last) = log.last() {
                println!("network {name}: loss {:.5}, validation MSE {:.5}", last.mean_loss, last.val_mse);
            }
        }
        return Ok(());
    }

    let mut cfg: PipelineConfig = load_config(PipelineConfig::default(), cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.speckle.seed = s;
    }
    match cli.command {
        Command::Train { .. } => unreachable!("handled above"),
        Command::Simulate { out } => {
            cfg.output_dir = out;
            let acq = acquire(&cfg)?;
            println!(
                "{}x{} scene with {} control points written to {}",
                acq.noisy.width(),
                acq.noisy.height(),
                acq.control_points.nodes.len(),
                cfg.output_dir.display()
            );
        }
        Command::Despeckle { model, input, output, png } => {
            let model = checkpoint::load(&model)?;
            let out = despeckle(&model, &read_raster(&input)?)?;
            write_raster(&out, &output)?;
            if let Some(p) = png {
                export_png(&out, p, PngStyle::Amplitude, 2.0, 98.0)?;
            }
        }
        Command::DetectLines { input, output, png } => {
            let resp = detect_lines(&read_raster(&input)?, &cfg.lines.bank()?)?;
            write_raster(&resp.response, &output)?;
            if let Some(p) = png {
                export_png(&resp.response, p, PngStyle::Linear, 2.0, 98.0)?;
            }
            println!("maximum response {:.4}", resp.d_max());
        }
        Command::Centerline { response, control_points, river_id, output, n_pow } => {
            let resp = ResponseMap::from_raster(read_raster(&response)?)?;
            let pts = read_control_points(&control_points, river_id.as_deref())?;
            let line = trace_centerline(&resp, &pts, n_pow.unwrap_or(cfg.n_pow))?;
            write_polyline(&line, &output)?;
            println!("{} pixels, cost {:.6}", line.len(), line.cost);
        }
        Command::Segment { input, centerline, output, lambda, png } => {
            if let Some(l) = lambda {
                cfg.segmentation.lambda = l;
            }
            let line = read_polyline(&centerline)?;
            let seg = segment_river_detailed(&read_raster(&input)?, &line, &cfg.segmentation)?;
            write_raster(&seg.mask, &output)?;
            if let Some(p) = png {
                export_png(&seg.mask, p, PngStyle::Mask, 2.0, 98.0)?;
            }
            let river = seg.mask.data().iter().filter(|&&v| v == 1.0).count();
            println!("{river} river pixels, water log-reflectivity {:.4}", seg.rlog);
        }
        Command::Evaluate { mask, truth, scene, method, output } => {
            let c = confusion(&read_raster(&mask)?, &read_raster(&truth)?)?;
            let row = MetricsRow::new(scene, method, prf(&c));
            if let Some(p) = output {
                write_metrics(std::slice::from_ref(&row), p)?;
            }
            print_rows(&[row]);
        }
        Command::Pipeline { out, model, no_baseline } => {
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if model.is_some() {
                cfg.model = model;
            }
            if no_baseline {
                cfg.baseline = false;
            }
            let results = run_pipeline_with(&cfg, None)?;
            let rows: Vec<MetricsRow> = results.into_iter().filter_map(|r| r.metrics).collect();
            if rows.is_empty() {
                println!("no ground truth; outputs written to {}", cfg.output_dir.display());
            }
            print_rows(&rows);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
