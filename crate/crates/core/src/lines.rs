//! Dark-line detection with a two-region gamma likelihood-ratio test.
//!
//! Each template is a central strip flanked by two side strips. At every
//! pixel the central and pooled side means are compared; the response is
//! the largest statistic over the template bank.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Raster, RasterKind};

pub const DEFAULT_ORIENTATIONS: usize = 8;
pub const DEFAULT_WIDTHS: [usize; 3] = [1, 2, 3];
pub const DEFAULT_LENGTH: usize = 9;
pub const DEFAULT_SIDE_WIDTH: usize = 2;
pub const DEFAULT_GAP: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineTemplate {
    /// Radians in `[0, pi)`, 0 = horizontal, counter-clockwise on screen.
    pub orientation: f64,
    pub width: usize,
    pub length: usize,
    pub side_width: usize,
    pub gap: usize,
}

/// Pixel offsets `(drow, dcol)` of a template; the two sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateMask {
    pub center: Vec<(isize, isize)>,
    pub side: Vec<(isize, isize)>,
}

impl TemplateMask {
    /// Largest `|offset|` along either axis.
    pub fn reach(&self) -> usize {
        self.center
            .iter()
            .chain(&self.side)
            .map(|&(r, c)| r.unsigned_abs().max(c.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    /// Quarter turn counter-clockwise on screen: `(r, c) -> (-c, r)`.
    pub fn rotated(&self) -> Self {
        let rot = |v: &[(isize, isize)]| {
            let mut out: Vec<_> = v.iter().map(|&(r, c)| (-c, r)).collect();
            out.sort_unstable();
            out
        };
        TemplateMask {
            center: rot(&self.center),
            side: rot(&self.side),
        }
    }
}

impl LineTemplate {
    pub fn new(orientation: f64, width: usize, length: usize, side_width: usize, gap: usize) -> Result<Self> {
        let t = LineTemplate {
            orientation,
            width,
            length,
            side_width,
            gap,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..PI).contains(&self.orientation) {
            return Err(Error::invalid(format!("orientation {} outside [0, pi)", self.orientation)));
        }
        if self.width == 0 || self.side_width == 0 || self.length == 0 {
            return Err(Error::invalid("template widths and length must be >= 1"));
        }
        if self.length % 2 == 0 {
            return Err(Error::invalid(format!("template length {} is even", self.length)));
        }
        Ok(())
    }

    /// Nearest-pixel rasterisation (`floor(x + 0.5)`) of the strips.
    pub fn rasterize(&self) -> TemplateMask {
        let (s, c) = self.orientation.sin_cos();
        // along-line and across-line unit vectors in (row, col)
        let along = (-s, c);
        let across = (c, s);
        let half = (self.length / 2) as isize;
        let offset = (self.width as f64 - 1.0) / 2.0;
        let px = |t: f64, a: f64| {
            (
                (t * along.0 + a * across.0 + 0.5).floor() as isize,
                (t * along.1 + a * across.1 + 0.5).floor() as isize,
            )
        };
        let mut center = Vec::new();
        for t in -half..=half {
            for k in 0..self.width {
                center.push(px(t as f64, k as f64 - offset));
            }
        }
        center.sort_unstable();
        center.dedup();
        let mut side = Vec::new();
        for t in -half..=half {
            for j in 1..=self.side_width {
                let a = offset + (self.gap + j) as f64;
                side.push(px(t as f64, a));
                side.push(px(t as f64, -a));
            }
        }
        side.sort_unstable();
        side.dedup();
        side.retain(|p| center.binary_search(p).is_err());
        TemplateMask { center, side }
    }
}

/// Default bank: orientations `k * pi / 8` for `k = 0..8`, widths 1 to 3,
/// length 9, side strips of 2 behind a gap of 1. Ordered by orientation,
/// then width.
pub fn default_bank() -> Vec<LineTemplate> {
    template_bank(DEFAULT_ORIENTATIONS, &DEFAULT_WIDTHS, DEFAULT_LENGTH, DEFAULT_SIDE_WIDTH, DEFAULT_GAP)
        .expect("default bank is valid")
}

pub fn template_bank(
    orientations: usize,
    widths: &[usize],
    length: usize,
    side_width: usize,
    gap: usize,
) -> Result<Vec<LineTemplate>> {
    if orientations == 0 || widths.is_empty() {
        return Err(Error::invalid("empty template bank"));
    }
    let mut bank = Vec::with_capacity(orientations * widths.len());
    for k in 0..orientations {
        for &w in widths {
            bank.push(LineTemplate::new(k as f64 * PI / orientations as f64, w, length, side_width, gap)?);
        }
    }
    Ok(bank)
}

/// Offsets for every template of a bank. When the bank holds a template
/// and its quarter-turn partner (orientation + pi/2, same strip sizes), the
/// partner's offsets are taken as the exact rotation of the first, so the
/// detector commutes with 90 degree rotations up to template order.
pub fn bank_masks(bank: &[LineTemplate]) -> Vec<TemplateMask> {
    let mut masks: Vec<Option<TemplateMask>> = vec![None; bank.len()];
    for (i, t) in bank.iter().enumerate() {
        if masks[i].is_some() {
            continue;
        }
        let m = t.rasterize();
        if t.orientation < PI / 2.0 {
            let partner = bank.iter().position(|u| {
                (u.orientation - (t.orientation + PI / 2.0)).abs() < 1e-9
                    && (u.width, u.length, u.side_width, u.gap) == (t.width, t.length, t.side_width, t.gap)
            });
            if let Some(j) = partner {
                if masks[j].is_none() {
                    masks[j] = Some(m.rotated());
                }
            }
        }
        masks[i] = Some(m);
    }
    masks.into_iter().map(|m| m.expect("filled")).collect()
}

/// Statistic `n ln m - nc ln mc - ns ln ms` for a darker centre, 0 otherwise.
pub fn glrt_statistic(mc: f64, nc: usize, ms: f64, ns: usize) -> Result<f64> {
    if !(mc > 0.0) || !(ms > 0.0) || !mc.is_finite() || !ms.is_finite() {
        return Err(Error::invalid(format!("region means must be positive, got {mc} and {ms}")));
    }
    if nc == 0 || ns == 0 {
        return Err(Error::invalid("empty template region"));
    }
    Ok(statistic(mc, nc as f64, ms, ns as f64))
}

/// Written through `ln1p` of the relative contrast so that a common scale
/// factor cancels before any logarithm is taken.
#[inline]
fn statistic(mc: f64, nc: f64, ms: f64, ns: f64) -> f64 {
    if ms - mc <= 1e-12 * ms {
        return 0.0;
    }
    let n = nc + ns;
    let m = (nc * mc + ns * ms) / n;
    let delta = (mc - ms) / m;
    let d = -nc * (ns * delta / n).ln_1p() - ns * (-nc * delta / n).ln_1p();
    d.max(0.0)
}

/// Response map with the winning template per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub response: Raster,
    pub templates: Vec<LineTemplate>,
    /// Index into `templates` per pixel, `None` where the response is 0.
    /// Absent when the map was loaded from disk.
    pub best: Option<Vec<Option<u16>>>,
}

impl ResponseMap {
    /// Wraps a stored response raster (no template metadata).
    pub fn from_raster(response: Raster) -> Result<Self> {
        if response.kind() != RasterKind::Response {
            return Err(Error::invalid(format!("expected a response raster, got {:?}", response.kind())));
        }
        if let Some((index, &value)) = response
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::invalid(format!("response[{index}] = {value} is not finite and >= 0")));
        }
        Ok(ResponseMap {
            response,
            templates: Vec::new(),
            best: None,
        })
    }

    pub fn d_max(&self) -> f64 {
        self.response.max()
    }

    pub fn best_template(&self, row: usize, col: usize) -> Option<&LineTemplate> {
        let best = self.best.as_ref()?;
        best[self.response.index(row, col)].map(|i| &self.templates[i as usize])
    }
}

pub fn detect_lines(img: &Raster, templates: &[LineTemplate]) -> Result<ResponseMap> {
    if img.kind() != RasterKind::Intensity {
        return Err(Error::invalid(format!("line detection needs intensity, got {:?}", img.kind())));
    }
    if templates.is_empty() {
        return Err(Error::invalid("empty template bank"));
    }
    if templates.len() >= u16::MAX as usize {
        return Err(Error::invalid("template bank too large"));
    }
    for t in templates {
        t.validate()?;
    }
    if let Some((index, &value)) = img.data().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositive { index, value });
    }
    let masks = bank_masks(templates);
    let (w, h) = (img.width(), img.height());
    if masks.iter().all(|m| 2 * m.reach() + 1 > w.min(h)) {
        return Err(Error::invalid(format!("templates do not fit in a {w}x{h} image")));
    }

    let data = img.data();
    let mut response = vec![0.0; w * h];
    let mut best = vec![None; w * h];
    for (ti, mask) in masks.iter().enumerate() {
        let reach = mask.reach();
        if 2 * reach + 1 > w || 2 * reach + 1 > h {
            continue;
        }
        let lin = |v: &[(isize, isize)]| v.iter().map(|&(r, c)| r * w as isize + c).collect::<Vec<_>>();
        let center = lin(&mask.center);
        let side = lin(&mask.side);
        let (nc, ns) = (center.len() as f64, side.len() as f64);
        for row in reach..h - reach {
            for col in reach..w - reach {
                let p = (row * w + col) as isize;
                let sc: f64 = center.iter().map(|&o| data[(p + o) as usize]).sum();
                let ss: f64 = side.iter().map(|&o| data[(p + o) as usize]).sum();
                let d = statistic(sc / nc, nc, ss / ns, ns);
                let k = p as usize;
                if d > response[k] {
                    response[k] = d;
                    best[k] = Some(ti as u16);
                }
            }
        }
    }
    Ok(ResponseMap {
        response: Raster::new(w, h, RasterKind::Response, response)?,
        templates: templates.to_vec(),
        best: Some(best),
    })
}
