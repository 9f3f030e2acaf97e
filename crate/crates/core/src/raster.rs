//! Row-major raster container and the transforms shared across the crate.
//!
//! All processing happens in the intensity or log-intensity domain. A
//! [`Raster`] carries a [`RasterKind`] tag so that operations such as
//! [`downsample2`] can pick the right averaging domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RasterKind {
    Intensity,
    LogIntensity,
    Response,
    Cost,
    Mask,
}

impl RasterKind {
    pub fn tag(self) -> u8 {
        match self {
            RasterKind::Intensity => 0,
            RasterKind::LogIntensity => 1,
            RasterKind::Response => 2,
            RasterKind::Cost => 3,
            RasterKind::Mask => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => RasterKind::Intensity,
            1 => RasterKind::LogIntensity,
            2 => RasterKind::Response,
            3 => RasterKind::Cost,
            4 => RasterKind::Mask,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    kind: RasterKind,
    data: Vec<f64>,
}

impl Raster {
    /// Builds a raster, checking the length and the per-kind value invariants
    /// (intensity strictly positive, mask in {0, 1}).
    pub fn new(width: usize, height: usize, kind: RasterKind, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty raster {width}x{height}")));
        }
        let len = width
            .checked_mul(height)
            .ok_or_else(|| Error::invalid("raster dimensions overflow"))?;
        if data.len() != len {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        match kind {
            RasterKind::Intensity => {
                if let Some((index, &value)) =
                    data.iter().enumerate().find(|(_, v)| !(**v > 0.0))
                {
                    return Err(Error::NonPositive { index, value });
                }
            }
            RasterKind::Mask => {
                if data.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::invalid("mask raster must contain only 0 or 1"));
                }
            }
            _ => {}
        }
        Ok(Raster {
            width,
            height,
            kind,
            data,
        })
    }

    /// Unchecked constructor for values produced by this crate's own transforms.
    pub(crate) fn from_parts(width: usize, height: usize, kind: RasterKind, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Raster {
            width,
            height,
            kind,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, kind: RasterKind, value: f64) -> Result<Self> {
        Raster::new(width, height, kind, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        kind: RasterKind,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Raster::new(width, height, kind, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> RasterKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_dims(&self, other: &Raster) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    /// Re-tags the raster, re-validating the value invariants of the new kind.
    pub fn with_kind(self, kind: RasterKind) -> Result<Self> {
        Raster::new(self.width, self.height, kind, self.data)
    }

    pub fn map(&self, kind: RasterKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        Raster::new(
            self.width,
            self.height,
            kind,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Copies the `w`x`h` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || row + h > self.height || col + w > self.width {
            return Err(Error::invalid(format!(
                "crop {w}x{h}@({row},{col}) outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for r in row..row + h {
            let start = r * self.width + col;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Raster::from_parts(w, h, self.kind, data))
    }

    /// Rounds every sample to the nearest `f32`, the precision of the on-disk
    /// raster format.
    pub fn quantize_f32(&self) -> Self {
        Raster::from_parts(
            self.width,
            self.height,
            self.kind,
            self.data.iter().map(|&v| v as f32 as f64).collect(),
        )
    }

    /// Rotates the raster 90° clockwise: pixel `(r, c)` moves to `(c, H-1-r)`.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                data[c * h + (h - 1 - r)] = self.data[r * w + c];
            }
        }
        Raster::from_parts(h, w, self.kind, data)
    }
}

/// Natural logarithm of a strictly positive intensity raster.
pub fn log_transform(img: &Raster) -> Result<Raster> {
    if let Some((index, &value)) = img.data.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositive { index, value });
    }
    Ok(Raster::from_parts(
        img.width,
        img.height,
        RasterKind::LogIntensity,
        img.data.iter().map(|v| v.ln()).collect(),
    ))
}

pub fn exp_transform(img: &Raster) -> Raster {
    Raster::from_parts(
        img.width,
        img.height,
        RasterKind::Intensity,
        img.data.iter().map(|v| v.exp()).collect(),
    )
}

/// Halves both dimensions by averaging disjoint 2x2 blocks.
///
/// Odd dimensions are padded by edge replication. Log-intensity input is
/// averaged in the intensity domain and re-logged. Masks are rejected since
/// block means are not binary.
pub fn downsample2(img: &Raster) -> Result<Raster> {
    if img.kind == RasterKind::Mask {
        return Err(Error::invalid("cannot block-average a mask raster"));
    }
    let log_domain = img.kind == RasterKind::LogIntensity;
    let (w, h) = (img.width, img.height);
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(ow * oh);
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for dr in 0..2 {
                let rr = (2 * r + dr).min(h - 1);
                for dc in 0..2 {
                    let cc = (2 * c + dc).min(w - 1);
                    let v = img.data[rr * w + cc];
                    acc += if log_domain { v.exp() } else { v };
                }
            }
            let mean = acc / 4.0;
            out.push(if log_domain { mean.ln() } else { mean });
        }
    }
    Ok(Raster::from_parts(ow, oh, img.kind, out))
}

/// Bilinear factor-2 upsampling to `target_w`x`target_h`.
///
/// Target dims must be `2n` or `2n - 1` of the source dims. Sample positions
/// follow the pixel-centre geometry of [`downsample2`], so output pixel `j`
/// reads source coordinate `(j + 0.5) / 2 - 0.5`, clamped to the grid.
pub fn upsample2(img: &Raster, target_w: usize, target_h: usize) -> Result<Raster> {
    let (w, h) = (img.width, img.height);
    let ok = |src: usize, dst: usize| dst == 2 * src || dst + 1 == 2 * src;
    if !ok(w, target_w) || !ok(h, target_h) {
        return Err(Error::invalid(format!(
            "upsample target {target_w}x{target_h} not within factor 2 of {w}x{h}"
        )));
    }
    let axis = |dst: usize, n: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..target_w).map(|c| axis(c, w)).collect();
    let mut out = Vec::with_capacity(target_w * target_h);
    for r in 0..target_h {
        let (r0, r1, fr) = axis(r, h);
        for &(c0, c1, fc) in &cols {
            let top = img.data[r0 * w + c0] * (1.0 - fc) + img.data[r0 * w + c1] * fc;
            let bot = img.data[r1 * w + c0] * (1.0 - fc) + img.data[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    Ok(Raster::from_parts(target_w, target_h, img.kind, out))
}

/// Equivalent number of looks, mean² / variance (unbiased), over the pixel
/// indices in `region`.
pub fn enl_estimate(img: &Raster, region: &[usize]) -> Result<f64> {
    if region.len() < 2 {
        return Err(Error::invalid("ENL region needs at least 2 pixels"));
    }
    let mut values = Vec::with_capacity(region.len());
    for &i in region {
        let v = *img
            .data
            .get(i)
            .ok_or_else(|| Error::invalid(format!("region pixel {i} outside raster")))?;
        values.push(v);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::UndefinedEnl);
    }
    Ok(mean * mean / var)
}

/// ENL over every pixel of the raster.
pub fn enl_global(img: &Raster) -> Result<f64> {
    let all: Vec<usize> = (0..img.len()).collect();
    enl_estimate(img, &all)
}

/// Pixelwise quotient `noisy / denoised`.
pub fn ratio_image(noisy: &Raster, denoised: &Raster) -> Result<Raster> {
    noisy.check_dims(denoised)?;
    if let Some((index, &value)) = denoised.data.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositive { index, value });
    }
    Ok(Raster::from_parts(
        noisy.width,
        noisy.height,
        RasterKind::Intensity,
        noisy
            .data
            .iter()
            .zip(&denoised.data)
            .map(|(n, d)| n / d)
            .collect(),
    ))
}

/// Symmetric (edge-excluded) reflection padding to `new_w`x`new_h`, anchored
/// at the top-left corner.
pub(crate) fn pad_reflect(img: &Raster, new_w: usize, new_h: usize) -> Raster {
    let reflect = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i % period;
        if m < n {
            m
        } else {
            period - m
        }
    };
    let mut data = Vec::with_capacity(new_w * new_h);
    for r in 0..new_h {
        let rr = reflect(r, img.height);
        for c in 0..new_w {
            data.push(img.data[rr * img.width + reflect(c, img.width)]);
        }
    }
    Raster::from_parts(new_w, new_h, img.kind, data)
}
