//! End-to-end runs: acquire (simulate or read) -> optional despeckling ->
//! line detection -> centerline -> segmentation -> evaluation, with every
//! intermediate product written to an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::centerline::{cost_map, trace_on_cost, ControlPoints, Polyline, DEFAULT_N_POW};
use crate::crf::{segment_river_detailed, SegParams};
use crate::despeckle::{
    checkpoint, despeckle, train_step_a, train_step_b, train_step_c, Architecture, DenoiserModel,
    TrainConfig, TrainLogRow, ValidationPair,
};
use crate::error::{Error, Result};
use crate::io::{
    export_png, read_control_points, read_polyline, read_raster, write_control_points, write_metrics,
    write_polyline, write_raster, write_train_log, PngStyle,
};
use crate::lines::{detect_lines, template_bank, LineTemplate, ResponseMap};
use crate::metrics::{confusion, prf, MetricsRow};
use crate::raster::{log_transform, ratio_image, Raster, RasterKind};
use crate::scene::{observe, river_scene, river_scene_date, speckled_stack, training_images, SceneConfig};
use crate::speckle::SpeckleConfig;

pub const BASELINE: &str = "baseline";
pub const PROPOSED: &str = "proposed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineParams {
    pub orientations: usize,
    pub widths: Vec<usize>,
    pub length: usize,
    pub side_width: usize,
    pub gap: usize,
}

impl Default for LineParams {
    fn default() -> Self {
        LineParams {
            orientations: crate::lines::DEFAULT_ORIENTATIONS,
            widths: crate::lines::DEFAULT_WIDTHS.to_vec(),
            length: crate::lines::DEFAULT_LENGTH,
            side_width: crate::lines::DEFAULT_SIDE_WIDTH,
            gap: crate::lines::DEFAULT_GAP,
        }
    }
}

impl LineParams {
    pub fn bank(&self) -> Result<Vec<LineTemplate>> {
        template_bank(self.orientations, &self.widths, self.length, self.side_width, self.gap)
    }
}

/// Which stages recompute their output. A disabled stage reads the file a
/// previous run left in the method directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stages {
    pub detect: bool,
    pub centerline: bool,
    pub segment: bool,
    pub evaluate: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            detect: true,
            centerline: true,
            segment: true,
            evaluate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub scene_name: String,
    /// Simulated scene; ignored when `input` is set.
    pub scene: SceneConfig,
    pub speckle: SpeckleConfig,
    /// Existing intensity raster to process instead of simulating.
    pub input: Option<PathBuf>,
    /// Ground-truth mask for `input`.
    pub truth: Option<PathBuf>,
    /// Control point CSV for `input`.
    pub control_points: Option<PathBuf>,
    /// Checkpoint of the despeckling network; the proposed method runs
    /// only when one is available.
    pub model: Option<PathBuf>,
    /// Also run without despeckling.
    pub baseline: bool,
    pub stages: Stages,
    pub lines: LineParams,
    pub n_pow: f64,
    pub segmentation: SegParams,
    pub png: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("out"),
            scene_name: "synthetic".into(),
            scene: SceneConfig::default(),
            speckle: SpeckleConfig {
                looks: 4.0,
                correlation_scale: 0.7,
                seed: 11,
            },
            input: None,
            truth: None,
            control_points: None,
            model: None,
            baseline: true,
            stages: Stages::default(),
            lines: LineParams::default(),
            n_pow: DEFAULT_N_POW,
            segmentation: SegParams {
                lambda: 2.0,
                ..SegParams::default()
            },
            png: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.speckle.validate()?;
        self.segmentation.validate()?;
        self.lines.bank()?;
        if !(self.n_pow > 0.0) {
            return Err(Error::invalid("n_pow must be positive"));
        }
        if self.input.is_none() {
            self.scene.validate()?;
        } else if self.control_points.is_none() {
            return Err(Error::invalid("an input raster needs a control point file"));
        }
        for p in [&self.input, &self.truth, &self.control_points, &self.model].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::invalid(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Noisy image, optional truth and control points of a run.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub noisy: Raster,
    pub truth: Option<Raster>,
    pub control_points: ControlPoints,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Simulates (or reads) the scene and writes `noisy.sras`, `truth.sras`,
/// `reflectivity.sras` and `control_points.csv`.
pub fn acquire(cfg: &PipelineConfig) -> Result<Acquisition> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let acq = match &cfg.input {
        Some(input) => Acquisition {
            noisy: read_raster(input)?,
            truth: cfg.truth.as_ref().map(read_raster).transpose()?,
            control_points: read_control_points(cfg.control_points.as_ref().expect("validated"), None)?,
        },
        None => {
            let scene = river_scene(&cfg.scene)?;
            write_raster(&scene.reflectivity, out.join("reflectivity.sras"))?;
            Acquisition {
                noisy: observe(&scene.reflectivity, &cfg.speckle)?.quantize_f32(),
                truth: Some(scene.truth),
                control_points: scene.control_points,
            }
        }
    };
    if acq.noisy.kind() != RasterKind::Intensity {
        return Err(Error::invalid("input raster must be intensity"));
    }
    acq.control_points.check_inside(acq.noisy.width(), acq.noisy.height())?;
    write_raster(&acq.noisy, out.join("noisy.sras"))?;
    if let Some(t) = &acq.truth {
        acq.noisy.check_dims(t)?;
        write_raster(t, out.join("truth.sras"))?;
    }
    write_control_points(&acq.control_points, out.join("control_points.csv"))?;
    if cfg.png {
        export_png(&acq.noisy, out.join("noisy.png"), PngStyle::Amplitude, 2.0, 98.0)?;
    }
    Ok(acq)
}

/// Products of one method.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: String,
    pub image: Raster,
    pub response: Raster,
    pub centerline: Polyline,
    pub mask: Raster,
    pub metrics: Option<MetricsRow>,
}

/// Detection, tracing, segmentation and evaluation of `image` into
/// `dir`.
pub fn run_method(
    cfg: &PipelineConfig,
    method: &str,
    image: &Raster,
    acq: &Acquisition,
    dir: &Path,
) -> Result<MethodResult> {
    fs::create_dir_all(dir)?;
    let png = |r: &Raster, name: &str, style: PngStyle| -> Result<()> {
        if cfg.png {
            export_png(r, dir.join(name), style, 2.0, 98.0)?;
        }
        Ok(())
    };

    let response = if cfg.stages.detect {
        let bank = stage("detect-lines", cfg.lines.bank())?;
        let r = stage("detect-lines", detect_lines(image, &bank))?.response.quantize_f32();
        write_raster(&r, dir.join("response.sras"))?;
        png(&r, "response.png", PngStyle::Linear)?;
        r
    } else {
        stage("detect-lines", read_raster(dir.join("response.sras")))?
    };

    let centerline = if cfg.stages.centerline {
        let resp = stage("centerline", ResponseMap::from_raster(response.clone()))?;
        let cost = stage("centerline", cost_map(&resp, cfg.n_pow))?.quantize_f32();
        write_raster(&cost, dir.join("cost.sras"))?;
        let line = stage("centerline", trace_on_cost(&cost, &acq.control_points))?;
        write_polyline(&line, dir.join("centerline.csv"))?;
        line
    } else {
        stage("centerline", read_polyline(dir.join("centerline.csv")))?
    };

    let mask = if cfg.stages.segment {
        let seg = stage("segment", segment_river_detailed(image, &centerline, &cfg.segmentation))?;
        write_raster(&seg.mask, dir.join("mask.sras"))?;
        png(&seg.mask, "mask.png", PngStyle::Mask)?;
        seg.mask
    } else {
        stage("segment", read_raster(dir.join("mask.sras")))?
    };

    let metrics = match (&acq.truth, cfg.stages.evaluate) {
        (Some(truth), true) => {
            let c = stage("evaluate", confusion(&mask, truth))?;
            Some(MetricsRow::new(cfg.scene_name.clone(), method, prf(&c)))
        }
        _ => None,
    };
    Ok(MethodResult {
        method: method.to_string(),
        image: image.clone(),
        response,
        centerline,
        mask,
        metrics,
    })
}

/// Full run. The proposed method needs `model` (or `cfg.model`); the
/// baseline skips despeckling and shares everything else. Metrics go to
/// `metrics.csv`.
pub fn run_pipeline_with(cfg: &PipelineConfig, model: Option<&DenoiserModel>) -> Result<Vec<MethodResult>> {
    cfg.validate()?;
    let acq = stage("acquire", acquire(cfg))?;
    let loaded = match (model, &cfg.model) {
        (None, Some(path)) => Some(stage("despeckle", checkpoint::load(path))?),
        _ => None,
    };
    let model = model.or(loaded.as_ref());
    if model.is_none() && !cfg.baseline {
        return Err(Error::invalid("nothing to run: no model and baseline disabled"));
    }

    let mut results = Vec::new();
    if cfg.baseline {
        let dir = cfg.output_dir.join(BASELINE);
        results.push(run_method(cfg, BASELINE, &acq.noisy, &acq, &dir)?);
    }
    if let Some(model) = model {
        let dir = cfg.output_dir.join(PROPOSED);
        fs::create_dir_all(&dir)?;
        let image = stage("despeckle", despeckle(model, &acq.noisy))?.quantize_f32();
        write_raster(&image, dir.join("despeckled.sras"))?;
        if cfg.png {
            export_png(&image, dir.join("despeckled.png"), PngStyle::Amplitude, 2.0, 98.0)?;
            let ratio = ratio_image(&acq.noisy, &image)?;
            export_png(&ratio, dir.join("ratio.png"), PngStyle::LogRatio, 2.0, 98.0)?;
        }
        results.push(run_method(cfg, PROPOSED, &image, &acq, &dir)?);
    }
    let rows: Vec<MetricsRow> = results.iter().filter_map(|r| r.metrics.clone()).collect();
    if !rows.is_empty() {
        write_metrics(&rows, cfg.output_dir.join("metrics.csv"))?;
    }
    Ok(results)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<MetricsRow>> {
    Ok(run_pipeline_with(cfg, None)?
        .into_iter()
        .filter_map(|r| r.metrics)
        .collect())
}

/// Synthetic training schedule: step A on clean synthetic scenes with
/// simulated speckle, steps B and C on a speckled multi-date stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    pub architecture: Architecture,
    pub step_a: TrainConfig,
    pub step_b: TrainConfig,
    pub step_c: TrainConfig,
    pub training_images: usize,
    pub image_size: usize,
    /// Scene whose acquisitions form the stack for steps B and C.
    pub stack_scene: SceneConfig,
    pub stack_dates: usize,
    pub stack_speckle: SpeckleConfig,
    /// Held-out noisy/clean pairs scored after every epoch.
    pub validation_images: usize,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            architecture: Architecture::default(),
            step_a: TrainConfig::step_a(),
            step_b: TrainConfig::step_b(),
            step_c: TrainConfig::step_c(),
            training_images: 8,
            image_size: 128,
            stack_scene: SceneConfig::default(),
            stack_dates: 6,
            stack_speckle: SpeckleConfig {
                looks: 4.0,
                correlation_scale: 0.7,
                seed: 101,
            },
            validation_images: 0,
            seed: 0,
        }
    }
}

impl TrainPlan {
    /// Reduced schedule for a single CPU core: narrower network, fewer
    /// patches and epochs. Used by the test suites.
    pub fn desk_scale() -> Self {
        let mut plan = TrainPlan {
            architecture: Architecture::with_channels(&[16, 32, 32]),
            validation_images: 1,
            ..TrainPlan::default()
        };
        plan.step_a.patches = 300;
        plan.step_a.epochs = 8;
        plan.step_b.patches = 200;
        plan.step_b.epochs = 4;
        plan.step_c.patches = 200;
        plan.step_c.epochs = 4;
        plan
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub a: DenoiserModel,
    pub b: DenoiserModel,
    pub c: DenoiserModel,
    pub logs: [Vec<TrainLogRow>; 3],
}

/// Runs steps A, B and C; with `out` set, writes `model_{a,b,c}.rldn` and
/// `train_log_{a,b,c}.csv` there.
pub fn train_models(plan: &TrainPlan, out: Option<&Path>) -> Result<TrainedModels> {
    let images = training_images(plan.training_images, plan.image_size, plan.seed)?;
    let stack = speckled_stack(&plan.stack_scene, plan.stack_dates, &plan.stack_speckle)?;
    let val: Vec<ValidationPair> = (0..plan.validation_images as u64)
        .map(|i| {
            let scene = river_scene_date(&plan.stack_scene, 1000 + i)?;
            let sp = SpeckleConfig {
                seed: plan.stack_speckle.seed ^ (0xABCD + i),
                ..plan.stack_speckle
            };
            Ok(ValidationPair {
                noisy: observe(&scene.reflectivity, &sp)?,
                clean_log: log_transform(&scene.reflectivity)?,
            })
        })
        .collect::<Result<_>>()?;
    let with_seed = |c: &TrainConfig, k: u64| TrainConfig {
        seed: c.seed ^ plan.seed.wrapping_mul(31).wrapping_add(k),
        ..c.clone()
    };
    let model = DenoiserModel::new(plan.architecture.clone(), plan.seed)?;
    let a = stage("train-a", train_step_a(model, &images, &with_seed(&plan.step_a, 1), &val))?;
    let b = stage("train-b", train_step_b(a.model.clone(), std::slice::from_ref(&stack), &with_seed(&plan.step_b, 2), &val))?;
    let c = stage("train-c", train_step_c(b.model.clone(), std::slice::from_ref(&stack), &with_seed(&plan.step_c, 3), &val))?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        for (name, o) in [("a", &a), ("b", &b), ("c", &c)] {
            checkpoint::save(&o.model, out.join(format!("model_{name}.rldn")))?;
            write_train_log(&o.log, out.join(format!("train_log_{name}.csv")))?;
        }
    }
    Ok(TrainedModels {
        a: a.model,
        b: b.model,
        c: c.model,
        logs: [a.log, b.log, c.log],
    })
}
