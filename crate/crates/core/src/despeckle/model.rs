use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{ConvGrad, Real, Tensor};
use super::loss::{grad_slice, loss_slice, LossReport};
use super::unet::{Architecture, Tape, UNet};
use crate::error::{Error, Result};
use crate::raster::{exp_transform, log_transform, pad_reflect, Raster, RasterKind};

/// Inference tile edge for [`DenoiserModel::predict`].
pub const TILE: usize = 256;
/// Overlap between neighbouring tiles; overlapping predictions are averaged.
pub const TILE_OVERLAP: usize = 32;

/// Anything that maps a log-intensity raster to a log-reflectivity estimate
/// of the same shape.
pub trait LogDenoiser {
    fn predict(&self, log_intensity: &Raster) -> Result<Raster>;
}

/// U-Net plus the log-intensity standardisation it was trained with.
///
/// The network sees `z = (y - mean) / std` and the prediction is
/// `mean + std * (head + z)` (or without `z` when the residual path is off).
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel<T = f32> {
    pub net: UNet<T>,
    pub norm_mean: T,
    pub norm_std: T,
}

impl<T: Real> DenoiserModel<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(DenoiserModel {
            net: UNet::init(arch, &mut rng)?,
            norm_mean: T::zero(),
            norm_std: T::one(),
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.net.arch
    }

    pub fn set_normalization(&mut self, mean: f64, std: f64) -> Result<()> {
        if !mean.is_finite() || !(std > 0.0) || !std.is_finite() {
            return Err(Error::invalid(format!("bad normalisation ({mean}, {std})")));
        }
        self.norm_mean = T::of(mean);
        self.norm_std = T::of(std);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> DenoiserModel<U> {
        DenoiserModel {
            net: self.net.cast(),
            norm_mean: U::of(self.norm_mean.as_f64()),
            norm_std: U::of(self.norm_std.as_f64()),
        }
    }

    pub fn params_finite(&self) -> bool {
        self.net
            .convs
            .iter()
            .all(|c| c.weight.iter().chain(&c.bias).all(|v| v.is_finite()))
    }

    fn standardize(&self, y: &[T], h: usize, w: usize) -> Tensor<T> {
        let inv = T::one() / self.norm_std;
        Tensor::from_vec(1, h, w, y.iter().map(|&v| (v - self.norm_mean) * inv).collect())
    }

    fn destandardize(&self, head: &Tensor<T>, z: &Tensor<T>) -> Vec<T> {
        let residual = self.net.arch.residual;
        head.data
            .iter()
            .zip(&z.data)
            .map(|(&o, &zi)| {
                let o = if residual { o + zi } else { o };
                self.norm_mean + self.norm_std * o
            })
            .collect()
    }

    /// Prediction on a buffer whose dims are multiples of the network stride.
    pub fn forward_buffer(&self, y: &[T], h: usize, w: usize) -> Vec<T> {
        let z = self.standardize(y, h, w);
        let head = self.net.forward(&z, None);
        self.destandardize(&head, &z)
    }

    /// One forward/backward pass on a patch. Parameter gradients of the mean
    /// per-pixel loss are accumulated into `grads`, scaled by `scale`.
    pub fn accumulate_gradients(
        &self,
        y: &[T],
        target: &[T],
        h: usize,
        w: usize,
        scale: f64,
        grads: &mut [ConvGrad<T>],
    ) -> LossReport {
        let z = self.standardize(y, h, w);
        let mut tape = Tape::new();
        let head = self.net.forward(&z, Some(&mut tape));
        let pred = self.destandardize(&head, &z);
        let pred: Vec<f64> = pred.iter().map(|v| v.as_f64()).collect();
        let target: Vec<f64> = target.iter().map(|v| v.as_f64()).collect();
        let report = loss_slice(&pred, &target);
        let mut dpred = vec![0.0f64; pred.len()];
        grad_slice(&pred, &target, &mut dpred);
        let k = scale * self.norm_std.as_f64();
        let dhead = Tensor::from_vec(1, h, w, dpred.iter().map(|&g| T::of(g * k)).collect());
        self.net.backward(&tape, &dhead, grads);
        report
    }

    /// Whole-raster prediction. Inputs whose dims are not multiples of the
    /// network stride are reflect-padded and the output cropped back.
    pub fn forward(&self, y: &Raster) -> Result<Raster> {
        let s = self.net.arch.stride();
        let (w, h) = (y.width(), y.height());
        let (pw, ph) = (w.div_ceil(s) * s, h.div_ceil(s) * s);
        let padded = if (pw, ph) == (w, h) { y.clone() } else { pad_reflect(y, pw, ph) };
        let buf: Vec<T> = padded.data().iter().map(|&v| T::of(v)).collect();
        let out = self.forward_buffer(&buf, ph, pw);
        let mut data = Vec::with_capacity(w * h);
        for r in 0..h {
            data.extend(out[r * pw..r * pw + w].iter().map(|v| v.as_f64()));
        }
        Ok(Raster::from_parts(w, h, RasterKind::LogIntensity, data))
    }
}

/// Start offsets covering `n` with windows of `tile` overlapping by at least
/// `overlap`; the last window is flush with the end.
fn tile_starts(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if n <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < n).collect();
    starts.push(n - tile);
    starts
}

impl<T: Real> LogDenoiser for DenoiserModel<T> {
    /// Tiled [`DenoiserModel::forward`] with averaged overlaps.
    fn predict(&self, y: &Raster) -> Result<Raster> {
        let (w, h) = (y.width(), y.height());
        if w <= TILE && h <= TILE {
            return self.forward(y);
        }
        let mut sum = vec![0.0; w * h];
        let mut count = vec![0u32; w * h];
        for &r0 in &tile_starts(h, TILE, TILE_OVERLAP) {
            for &c0 in &tile_starts(w, TILE, TILE_OVERLAP) {
                let (tw, th) = (TILE.min(w), TILE.min(h));
                let out = self.forward(&y.crop(r0, c0, tw, th)?)?;
                for r in 0..th {
                    for c in 0..tw {
                        let i = (r0 + r) * w + c0 + c;
                        sum[i] += out.get(r, c);
                        count[i] += 1;
                    }
                }
            }
        }
        let data = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        Ok(Raster::from_parts(w, h, RasterKind::LogIntensity, data))
    }
}

/// `exp(predict(log(w)))`: despeckled intensity.
pub fn despeckle<D: LogDenoiser + ?Sized>(model: &D, intensity: &Raster) -> Result<Raster> {
    let y = log_transform(intensity)?;
    let x = model.predict(&y)?;
    Ok(exp_transform(&x))
}
