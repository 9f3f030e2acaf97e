//! Three-stage self-supervised training.
//!
//! * **A**: clean reflectivity patches get two independent synthetic
//!   speckle draws; one is the input, the other the target.
//! * **B**: fine-tuning on co-registered acquisition stacks. The target for
//!   input `y_i` is the change-compensated `y_j - x̂_j + x̂_i`, with the
//!   estimates from network A applied at half resolution.
//! * **C**: as B, with network B's full-resolution estimates.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::model::{DenoiserModel, LogDenoiser};
use crate::error::{Error, Result};
use crate::raster::{downsample2, log_transform, upsample2, Raster, RasterKind};
use crate::speckle::{rng_for, sample_speckle, SpeckleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStep {
    A,
    B,
    C,
}

/// Step-A target: a second noisy draw, or the clean log-reflectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Supervision {
    SelfSupervised,
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub step: TrainStep,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Patch positions drawn once; speckle (A) or date pairs (B/C) are
    /// redrawn every epoch.
    pub patches: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub seed: u64,
    /// Looks of the synthetic speckle in step A.
    pub looks: f64,
    pub supervision: Supervision,
}

impl TrainConfig {
    pub fn step_a() -> Self {
        TrainConfig {
            step: TrainStep::A,
            epochs: 20,
            batch_size: 8,
            patch_size: 64,
            patches: 500,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            seed: 0,
            looks: 4.0,
            supervision: Supervision::SelfSupervised,
        }
    }

    pub fn step_b() -> Self {
        TrainConfig {
            step: TrainStep::B,
            epochs: 10,
            learning_rate: 1e-4,
            ..TrainConfig::step_a()
        }
    }

    pub fn step_c() -> Self {
        TrainConfig {
            step: TrainStep::C,
            ..TrainConfig::step_b()
        }
    }

    pub fn validate(&self, stride: usize) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % stride != 0 {
            return Err(Error::invalid(format!(
                "patch size {} must be a positive multiple of {stride}",
                self.patch_size
            )));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.patches == 0 {
            return Err(Error::invalid("batch size and patch count must be positive"));
        }
        if !(self.looks > 0.0) {
            return Err(Error::invalid("looks must be > 0"));
        }
        Ok(())
    }

    fn expect_step(&self, step: TrainStep) -> Result<()> {
        if self.step == step {
            Ok(())
        } else {
            Err(Error::invalid(format!("config is for step {:?}, not {step:?}", self.step)))
        }
    }
}

/// Co-registered acquisitions of one scene, intensity domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionStack {
    pub images: Vec<Raster>,
}

impl AcquisitionStack {
    pub fn new(images: Vec<Raster>) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::invalid(format!(
                "acquisition stack needs at least 2 dates, got {}",
                images.len()
            )));
        }
        for img in &images[1..] {
            images[0].check_dims(img)?;
        }
        Ok(AcquisitionStack { images })
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }
}

/// Held-out noisy intensity with its known log-reflectivity.
#[derive(Debug, Clone)]
pub struct ValidationPair {
    pub noisy: Raster,
    pub clean_log: Raster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub step: usize,
    pub mean_loss: f64,
    /// NaN when no validation data was supplied.
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    pub log: Vec<TrainLogRow>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.mean_loss)
    }
}

/// `y2 - x̂2 + x̂1`, pixelwise.
pub fn change_compensated_target(y1: &Raster, y2: &Raster, x1: &Raster, x2: &Raster) -> Result<Raster> {
    y1.check_dims(y2)?;
    y1.check_dims(x1)?;
    y1.check_dims(x2)?;
    let data = y2
        .data()
        .iter()
        .zip(x2.data())
        .zip(x1.data())
        .map(|((a, b), c)| a - b + c)
        .collect();
    Ok(Raster::from_parts(y1.width(), y1.height(), RasterKind::LogIntensity, data))
}

/// Pixel-weighted mean squared error between predicted and true
/// log-reflectivity over the validation set.
pub fn validation_mse<D: LogDenoiser + ?Sized>(model: &D, val: &[ValidationPair]) -> Result<f64> {
    let mut se = 0.0;
    let mut n = 0usize;
    for pair in val {
        let pred = model.predict(&log_transform(&pair.noisy)?)?;
        pred.check_dims(&pair.clean_log)?;
        se += pred
            .data()
            .iter()
            .zip(pair.clean_log.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        n += pred.len();
    }
    if n == 0 {
        return Ok(f64::NAN);
    }
    Ok(se / n as f64)
}

/// Noisy-input MSE against the truth, the reference a denoiser must beat.
pub fn noisy_mse(val: &[ValidationPair]) -> Result<f64> {
    let mut se = 0.0;
    let mut n = 0usize;
    for pair in val {
        let y = log_transform(&pair.noisy)?;
        se += y
            .data()
            .iter()
            .zip(pair.clean_log.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        n += y.len();
    }
    Ok(se / n as f64)
}

#[derive(Clone, Copy)]
struct PatchPos {
    source: usize,
    row: usize,
    col: usize,
}

fn draw_positions(dims: &[(usize, usize)], size: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<PatchPos>> {
    if dims.iter().any(|&(w, h)| w < size || h < size) {
        return Err(Error::invalid(format!("training images smaller than patch size {size}")));
    }
    Ok((0..count)
        .map(|_| {
            let source = rng.random_range(0..dims.len());
            let (w, h) = dims[source];
            PatchPos {
                source,
                row: rng.random_range(0..=h - size),
                col: rng.random_range(0..=w - size),
            }
        })
        .collect())
}

fn cut(data: &[f64], width: usize, pos: PatchPos, size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for r in pos.row..pos.row + size {
        out.extend_from_slice(&data[r * width + pos.col..r * width + pos.col + size]);
    }
    out
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shared optimisation loop. `make_pair` produces `(input, target)` patch
/// buffers for a position, drawing randomness from an epoch-scoped RNG.
fn optimise<F>(
    mut model: DenoiserModel,
    positions: &[PatchPos],
    cfg: &TrainConfig,
    val: &[ValidationPair],
    mut make_pair: F,
) -> Result<TrainOutcome>
where
    F: FnMut(PatchPos, &mut rand_chacha::ChaCha8Rng) -> Result<(Vec<f32>, Vec<f32>)>,
{
    let size = cfg.patch_size;
    let mut adam = Adam::new(&model.net);
    let mut grads = model.net.zero_grads();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(mix(cfg.seed, 1, epoch as u64), 0);
        let mut order: Vec<usize> = (0..positions.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.clear());
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (input, target) = make_pair(positions[idx], &mut rng)?;
                let rep = model.accumulate_gradients(&input, &target, size, size, scale, &mut grads);
                batch_loss += rep.loss * scale;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NanLoss { epoch, step });
            }
            adam.step(&mut model.net, &grads, lr, 1.0);
            if !model.params_finite() {
                return Err(Error::NanLoss { epoch, step });
            }
            loss_sum += batch_loss;
            batches += 1;
            step += 1;
        }
        let val_mse = if val.is_empty() { f64::NAN } else { validation_mse(&model, val)? };
        let row = TrainLogRow {
            epoch,
            step,
            mean_loss: loss_sum / batches as f64,
            val_mse,
        };
        log::info!(
            "step {:?} epoch {} loss {:.6} val_mse {:.6}",
            cfg.step, epoch, row.mean_loss, row.val_mse
        );
        log.push(row);
        lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome { model, log })
}

/// Step A on clean reflectivity images with synthetic `cfg.looks` speckle.
///
/// A fresh model (identity normalisation) gets its standardisation
/// constants from one speckled realisation of the training images.
pub fn train_step_a(
    mut model: DenoiserModel,
    clean_images: &[Raster],
    cfg: &TrainConfig,
    val: &[ValidationPair],
) -> Result<TrainOutcome> {
    cfg.expect_step(TrainStep::A)?;
    cfg.validate(model.arch().stride())?;
    if clean_images.is_empty() {
        return Err(Error::invalid("no training images"));
    }
    let logs: Vec<Raster> = clean_images
        .iter()
        .map(|v| {
            if v.kind() != RasterKind::Intensity {
                return Err(Error::invalid("step A expects intensity reflectivity images"));
            }
            log_transform(v)
        })
        .collect::<Result<_>>()?;

    if model.norm_mean == 0.0 && model.norm_std == 1.0 {
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
        for (i, v) in clean_images.iter().enumerate() {
            let speckle = SpeckleConfig::new(cfg.looks, 0.0, mix(cfg.seed, 2, i as u64))?;
            let u = sample_speckle(v.width(), v.height(), &speckle)?;
            for (a, b) in v.data().iter().zip(u.data()) {
                let y = (a * b).ln();
                s += y;
                s2 += y * y;
                n += 1.0;
            }
        }
        let mean = s / n;
        model.set_normalization(mean, (s2 / n - mean * mean).max(1e-12).sqrt())?;
    }

    let dims: Vec<_> = clean_images.iter().map(|v| (v.width(), v.height())).collect();
    let mut pos_rng = rng_for(mix(cfg.seed, 3, 0), 0);
    let positions = draw_positions(&dims, cfg.patch_size, cfg.patches, &mut pos_rng)?;
    let size = cfg.patch_size;
    let looks = cfg.looks;
    let supervision = cfg.supervision;
    optimise(model, &positions, cfg, val, move |pos, rng| {
        let x = cut(logs[pos.source].data(), dims[pos.source].0, pos, size);
        let (s1, s2) = (rng.random::<u64>(), rng.random::<u64>());
        let u1 = sample_speckle(size, size, &SpeckleConfig::new(looks, 0.0, s1)?)?;
        let input: Vec<f32> = x.iter().zip(u1.data()).map(|(a, u)| (a + u.ln()) as f32).collect();
        let target: Vec<f32> = match supervision {
            Supervision::Supervised => x.iter().map(|&a| a as f32).collect(),
            Supervision::SelfSupervised => {
                let u2 = sample_speckle(size, size, &SpeckleConfig::new(looks, 0.0, s2)?)?;
                x.iter().zip(u2.data()).map(|(a, u)| (a + u.ln()) as f32).collect()
            }
        };
        Ok((input, target))
    })
}

/// Per-date log-intensities and reflectivity estimates of one stack.
struct PreparedStack {
    width: usize,
    logs: Vec<Raster>,
    estimates: Vec<Raster>,
}

fn prepare_stacks(
    stacks: &[AcquisitionStack],
    estimate: impl Fn(&Raster) -> Result<Raster>,
) -> Result<Vec<PreparedStack>> {
    stacks
        .iter()
        .map(|s| {
            if s.images.len() < 2 {
                return Err(Error::invalid("acquisition stack needs at least 2 dates"));
            }
            let logs: Vec<Raster> = s.images.iter().map(log_transform).collect::<Result<_>>()?;
            let estimates = logs.iter().map(&estimate).collect::<Result<_>>()?;
            Ok(PreparedStack {
                width: s.width(),
                logs,
                estimates,
            })
        })
        .collect()
}

fn fine_tune(
    model: DenoiserModel,
    prepared: Vec<PreparedStack>,
    cfg: &TrainConfig,
    val: &[ValidationPair],
) -> Result<TrainOutcome> {
    let dims: Vec<_> = prepared.iter().map(|p| (p.width, p.logs[0].height())).collect();
    let mut pos_rng = rng_for(mix(cfg.seed, 6, 0), 0);
    let positions = draw_positions(&dims, cfg.patch_size, cfg.patches, &mut pos_rng)?;
    let size = cfg.patch_size;
    optimise(model, &positions, cfg, val, move |pos, rng| {
        let stack = &prepared[pos.source];
        let n = stack.logs.len();
        // uniform ordered pair (i, j), i != j
        let i = rng.random_range(0..n);
        let j = (i + rng.random_range(1..n)) % n;
        let yi = cut(stack.logs[i].data(), stack.width, pos, size);
        let yj = cut(stack.logs[j].data(), stack.width, pos, size);
        let xi = cut(stack.estimates[i].data(), stack.width, pos, size);
        let xj = cut(stack.estimates[j].data(), stack.width, pos, size);
        let input = yi.iter().map(|&v| v as f32).collect();
        let target = yj
            .iter()
            .zip(&xj)
            .zip(&xi)
            .map(|((a, b), c)| (a - b + c) as f32)
            .collect();
        Ok((input, target))
    })
}

/// Half-resolution estimate used in step B: `upsample2(predict(downsample2(y)))`.
pub fn half_resolution_estimate<D: LogDenoiser + ?Sized>(model: &D, y: &Raster) -> Result<Raster> {
    let down = downsample2(y)?;
    let est = model.predict(&down)?;
    upsample2(&est, y.width(), y.height())
}

/// Step B: fine-tune network A on stacks, compensating scene changes with
/// network A's half-resolution estimates.
pub fn train_step_b(
    model_a: DenoiserModel,
    stacks: &[AcquisitionStack],
    cfg: &TrainConfig,
    val: &[ValidationPair],
) -> Result<TrainOutcome> {
    cfg.expect_step(TrainStep::B)?;
    cfg.validate(model_a.arch().stride())?;
    if stacks.is_empty() {
        return Err(Error::invalid("no acquisition stacks"));
    }
    let prepared = prepare_stacks(stacks, |y| half_resolution_estimate(&model_a, y))?;
    fine_tune(model_a, prepared, cfg, val)
}

/// Step C: as step B with network B's full-resolution estimates.
pub fn train_step_c(
    model_b: DenoiserModel,
    stacks: &[AcquisitionStack],
    cfg: &TrainConfig,
    val: &[ValidationPair],
) -> Result<TrainOutcome> {
    cfg.expect_step(TrainStep::C)?;
    cfg.validate(model_b.arch().stride())?;
    if stacks.is_empty() {
        return Err(Error::invalid("no acquisition stacks"));
    }
    let prepared = prepare_stacks(stacks, |y| model_b.predict(y))?;
    fine_tune(model_b, prepared, cfg, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::despeckle::loss::ft_loss;
    use crate::despeckle::unet::Architecture;

    fn log_raster(v: &[f64]) -> Raster {
        Raster::new(v.len(), 1, RasterKind::LogIntensity, v.to_vec()).unwrap()
    }

    #[test]
    fn compensated_target_cases() {
        let y1 = log_raster(&[0.3, -1.0]);
        let y2 = log_raster(&[0.7, 2.0]);
        let x = log_raster(&[0.1, 0.5]);
        assert_eq!(change_compensated_target(&y1, &y2, &x, &x).unwrap().data(), y2.data());
        let x1 = log_raster(&[0.25, -0.5]);
        assert_eq!(change_compensated_target(&y1, &y2, &x1, &y2).unwrap().data(), x1.data());
        let t = change_compensated_target(&log_raster(&[0.0]), &log_raster(&[1.2]), &log_raster(&[0.8]), &log_raster(&[1.0]))
            .unwrap();
        assert!((t.data()[0] - 1.0).abs() < 1e-15);
        assert!(change_compensated_target(&y1, &log_raster(&[1.0]), &x, &x).is_err());
    }

    #[test]
    fn identical_dates_give_finite_loss_at_estimate() {
        let y = log_raster(&[0.1, 0.4, -0.2]);
        let xhat = log_raster(&[0.0, 0.3, -0.1]);
        let t = change_compensated_target(&y, &y, &xhat, &xhat).unwrap();
        assert_eq!(t.data(), y.data());
        assert!(ft_loss(&xhat, &t).unwrap().is_finite());
    }

    #[test]
    fn stack_needs_two_dates() {
        let img = Raster::filled(8, 8, RasterKind::Intensity, 1.0).unwrap();
        assert!(AcquisitionStack::new(vec![img.clone()]).is_err());
        assert!(AcquisitionStack::new(vec![img.clone(), img]).is_ok());
        let single = AcquisitionStack { images: vec![Raster::filled(8, 8, RasterKind::Intensity, 1.0).unwrap()] };
        let model = DenoiserModel::new(Architecture::with_channels(&[2, 2, 2]), 0).unwrap();
        let cfg = TrainConfig { patch_size: 8, ..TrainConfig::step_b() };
        assert!(train_step_b(model, &[single], &cfg, &[]).is_err());
    }

    #[test]
    fn wrong_step_or_patch_size_rejected() {
        let model = DenoiserModel::new(Architecture::with_channels(&[2, 2, 2]), 0).unwrap();
        let img = Raster::filled(16, 16, RasterKind::Intensity, 1.0).unwrap();
        assert!(train_step_a(model.clone(), &[img.clone()], &TrainConfig::step_b(), &[]).is_err());
        let cfg = TrainConfig { patch_size: 10, ..TrainConfig::step_a() };
        assert!(train_step_a(model, &[img], &cfg, &[]).is_err());
    }

    fn tiny_a_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            patch_size: 16,
            patches: 4,
            seed: 5,
            ..TrainConfig::step_a()
        }
    }

    fn tiny_images() -> Vec<Raster> {
        vec![Raster::from_fn(24, 24, RasterKind::Intensity, |r, c| if (r / 6 + c / 6) % 2 == 0 { 1.0 } else { 0.2 }).unwrap()]
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut model = DenoiserModel::new(Architecture::with_channels(&[2, 4, 4]), 1).unwrap();
        model.set_normalization(-0.1, 0.6).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, ..tiny_a_config() };
        let out = train_step_a(model.clone(), &tiny_images(), &cfg, &[]).unwrap();
        assert_eq!(out.model, model);
    }

    #[test]
    fn training_is_deterministic() {
        let model = DenoiserModel::new(Architecture::with_channels(&[2, 4, 4]), 1).unwrap();
        let a = train_step_a(model.clone(), &tiny_images(), &tiny_a_config(), &[]).unwrap();
        let b = train_step_a(model, &tiny_images(), &tiny_a_config(), &[]).unwrap();
        assert_eq!(a.final_loss(), b.final_loss());
        assert_eq!(a.model, b.model);
        assert_eq!(a.log.len(), 2);
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let model = DenoiserModel::new(Architecture::with_channels(&[2, 4, 4]), 1).unwrap();
        let img = &tiny_images()[0];
        let stack = AcquisitionStack::new(vec![img.clone(), img.map(RasterKind::Intensity, |v| v * 1.1).unwrap()]).unwrap();
        let cfg_b = TrainConfig { epochs: 0, patch_size: 16, ..TrainConfig::step_b() };
        let b = train_step_b(model.clone(), &[stack.clone()], &cfg_b, &[]).unwrap();
        assert_eq!(b.model, model);
        let cfg_c = TrainConfig { step: TrainStep::C, ..cfg_b };
        let c = train_step_c(model.clone(), &[stack], &cfg_c, &[]).unwrap();
        assert_eq!(c.model, model);
    }
}
