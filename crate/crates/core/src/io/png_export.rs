use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::raster::{Raster, RasterKind};

/// How raster values are turned into gray levels before the percentile
/// stretch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PngStyle {
    /// `sqrt(intensity)`, i.e. amplitude.
    Amplitude,
    /// `ln(value)`, used for ratio images.
    LogRatio,
    /// Values as they are.
    Linear,
    /// 0 -> black, 1 -> white, no stretch.
    Mask,
}

impl PngStyle {
    pub fn for_kind(kind: RasterKind) -> Self {
        match kind {
            RasterKind::Intensity => PngStyle::Amplitude,
            RasterKind::Mask => PngStyle::Mask,
            _ => PngStyle::Linear,
        }
    }
}

/// Percentile with linear interpolation between order statistics.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * pct / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Computes the 8-bit gray levels, row-major.
pub fn render_png(raster: &Raster, style: PngStyle, lo_pct: f64, hi_pct: f64) -> Result<Vec<u8>> {
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return Err(Error::invalid(format!("bad percentile range [{lo_pct}, {hi_pct}]")));
    }
    let values: Vec<f64> = match style {
        PngStyle::Mask => {
            return Ok(raster.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect());
        }
        PngStyle::Amplitude => raster.data().iter().map(|v| v.max(0.0).sqrt()).collect(),
        PngStyle::LogRatio => {
            if let Some((index, &value)) = raster.data().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NonPositive { index, value });
            }
            raster.data().iter().map(|v| v.ln()).collect()
        }
        PngStyle::Linear => raster.data().to_vec(),
    };
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Ok(vec![128; values.len()]);
    }
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, lo_pct);
    let hi = percentile(&sorted, hi_pct);
    if !(hi > lo) {
        return Ok(vec![128; values.len()]);
    }
    Ok(values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                return 0;
            }
            (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8
        })
        .collect())
}

pub fn export_png(
    raster: &Raster,
    path: impl AsRef<Path>,
    style: PngStyle,
    lo_pct: f64,
    hi_pct: f64,
) -> Result<()> {
    let pixels = render_png(raster, style, lo_pct, hi_pct)?;
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, raster.width() as u32, raster.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&pixels)?;
        writer.finish()?;
    }
    atomic_write(path.as_ref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Raster {
        Raster::from_fn(n, 1, RasterKind::Intensity, |_, c| (c + 1) as f64).unwrap()
    }

    #[test]
    fn constant_is_mid_gray() {
        let r = Raster::filled(5, 4, RasterKind::Intensity, 3.0).unwrap();
        for style in [PngStyle::Amplitude, PngStyle::LogRatio, PngStyle::Linear] {
            assert!(render_png(&r, style, 2.0, 98.0).unwrap().iter().all(|&g| g == 128));
        }
    }

    #[test]
    fn percentile_clipping() {
        let r = ramp(101);
        let px = render_png(&r, PngStyle::Linear, 2.0, 98.0).unwrap();
        // values 1..=101: 2nd percentile is 3, 98th is 99
        assert!(px[..3].iter().all(|&g| g == 0));
        assert!(px[98..].iter().all(|&g| g == 255));
        assert!(px[3..98].iter().all(|&g| g > 0 && g < 255));
    }

    #[test]
    fn log_ratio_preserves_order() {
        let r = Raster::from_fn(40, 1, RasterKind::Intensity, |_, c| 0.05 * 1.2f64.powi(c as i32)).unwrap();
        let px = render_png(&r, PngStyle::LogRatio, 0.0, 100.0).unwrap();
        assert!(px.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((px[0], px[39]), (0, 255));
        // log spacing makes the geometric ramp roughly linear in gray
        assert!((px[20] as i32 - 131).abs() <= 2, "{}", px[20]);
    }

    #[test]
    fn writes_a_decodable_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let r = ramp(7);
        export_png(&r, &path, PngStyle::Amplitude, 2.0, 98.0).unwrap();
        let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&path).unwrap()));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (7, 1));
        assert_eq!(&buf[..7], &render_png(&r, PngStyle::Amplitude, 2.0, 98.0).unwrap()[..]);
    }
}
