//! Binary river/land labeling around a traced centerline, solved exactly
//! by a minimum s-t cut.
//!
//! Energy of a labeling: per-pixel data costs, a hard term pinning the
//! centerline to river, and directed boundary costs between 4-neighbours
//! that are cheap where a dark-to-bright edge is crossed from river to land.

mod maxflow;

use serde::{Deserialize, Serialize};

use crate::centerline::Polyline;
use crate::error::{Error, Result};
use crate::raster::{log_transform, Raster, RasterKind};
use maxflow::FlowGraph;

/// Land cost on centerline pixels.
pub const HARD_CONSTRAINT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    pub lambda: f64,
    pub kappa: f64,
    pub quantile: f64,
    /// Water log-reflectivity; estimated from the centerline when `None`.
    pub rlog: Option<f64>,
}

impl Default for SegParams {
    fn default() -> Self {
        SegParams {
            lambda: 1.0,
            kappa: 1.0,
            quantile: 0.9,
            rlog: None,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::invalid(format!("quantile must be in (0, 1), got {}", self.quantile)));
        }
        if let Some(r) = self.rlog {
            if !r.is_finite() {
                return Err(Error::invalid("rlog must be finite"));
            }
        }
        Ok(())
    }
}

/// Directed boundary cost: paid when `p` is river and `q` is land.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEdge {
    pub p: usize,
    pub q: usize,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfEnergy {
    pub width: usize,
    pub height: usize,
    pub land: Vec<f64>,
    pub river: Vec<f64>,
    pub edges: Vec<PairEdge>,
    pub centerline: Vec<bool>,
}

impl CrfEnergy {
    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.land.len() != n || self.river.len() != n || self.centerline.len() != n {
            return Err(Error::invalid("energy terms do not match the grid size"));
        }
        if self.land.iter().chain(&self.river).any(|v| !v.is_finite()) {
            return Err(Error::invalid("unary costs must be finite"));
        }
        for e in &self.edges {
            if !(e.capacity >= 0.0) || !e.capacity.is_finite() {
                return Err(Error::invalid(format!("pairwise capacity {} is negative", e.capacity)));
            }
            if e.p >= n || e.q >= n {
                return Err(Error::invalid("pairwise edge outside the grid"));
            }
        }
        Ok(())
    }

    /// Energy of a labeling, `true` = river.
    pub fn energy(&self, river: &[bool]) -> f64 {
        let unary: f64 = river
            .iter()
            .enumerate()
            .map(|(i, &r)| if r { self.river[i] } else { self.land[i] })
            .sum();
        let pair: f64 = self
            .edges
            .iter()
            .filter(|e| river[e.p] && !river[e.q])
            .map(|e| e.capacity)
            .sum();
        unary + pair
    }
}

/// Median of `logI` over the centerline pixels.
pub fn estimate_rlog(log_i: &Raster, line: &Polyline) -> Result<f64> {
    let mut v = line_values(log_i, line)?;
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn line_values(r: &Raster, line: &Polyline) -> Result<Vec<f64>> {
    if line.is_empty() {
        return Err(Error::invalid("empty polyline"));
    }
    line.pixels
        .iter()
        .map(|&(row, col)| {
            if row >= r.height() || col >= r.width() {
                Err(Error::invalid(format!("polyline pixel ({row}, {col}) outside the raster")))
            } else {
                Ok(r.get(row, col))
            }
        })
        .collect()
}

/// `(logI - R_log)^2`.
pub fn water_data_term(log_i: &Raster, rlog: f64) -> Result<Raster> {
    log_i.map(RasterKind::Cost, |v| (v - rlog) * (v - rlog))
}

/// `kappa` times the mean water cost along the centerline, ignoring values
/// above the `q`-quantile (linear interpolation between order statistics).
pub fn land_data_term(water: &Raster, line: &Polyline, kappa: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    let mut v = line_values(water, line)?;
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let cut = v[lo] + (h - lo as f64) * (v[hi] - v[lo]);
    let kept: Vec<f64> = v.into_iter().filter(|&x| x <= cut).collect();
    Ok(kappa * kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Capacity of the (river at `p`, land at `q`) boundary.
pub fn edge_capacity(ip: f64, iq: f64, gbar: f64, lambda: f64) -> f64 {
    lambda / (1.0 + (iq - ip).max(0.0) / gbar)
}

/// Mean absolute 4-neighbour difference; 1 on constant images.
pub fn mean_gradient(img: &Raster) -> f64 {
    let (w, h) = (img.width(), img.height());
    let (mut s, mut n) = (0.0, 0usize);
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                s += (img.get(r, c + 1) - img.get(r, c)).abs();
                n += 1;
            }
            if r + 1 < h {
                s += (img.get(r + 1, c) - img.get(r, c)).abs();
                n += 1;
            }
        }
    }
    if n == 0 || !(s > 0.0) {
        1.0
    } else {
        s / n as f64
    }
}

/// Directed capacities for every ordered 4-neighbour pair.
pub fn pairwise_weights(img: &Raster, lambda: f64) -> Result<Vec<PairEdge>> {
    if img.kind() != RasterKind::Intensity {
        return Err(Error::invalid(format!("pairwise weights need intensity, got {:?}", img.kind())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let gbar = mean_gradient(img);
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let mut edges = Vec::with_capacity(4 * w * h);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let mut link = |q: usize| {
                edges.push(PairEdge { p, q, capacity: edge_capacity(d[p], d[q], gbar, lambda) });
                edges.push(PairEdge { p: q, q: p, capacity: edge_capacity(d[q], d[p], gbar, lambda) });
            };
            if c + 1 < w {
                link(p + 1);
            }
            if r + 1 < h {
                link(p + w);
            }
        }
    }
    Ok(edges)
}

/// Exact minimiser of [`CrfEnergy::energy`] as a mask (1 = river).
///
/// Source side = river. Pixel `p` gets `s -> p` = land cost and `p -> t` =
/// river cost (after removing the common part), each edge `(p, q)` becomes
/// arc `p -> q`. Centerline pixels are tied to the source with infinite
/// capacity, which agrees with the finite hard-constraint cost as long as
/// any labeling that respects the centerline is cheaper than it.
pub fn min_energy_labeling(energy: &CrfEnergy) -> Result<Raster> {
    energy.validate()?;
    let n = energy.width * energy.height;
    let (s, t) = (n, n + 1);
    let mut g = FlowGraph::new(n + 2);
    for p in 0..n {
        if energy.centerline[p] {
            g.add_edge(s, p, f64::INFINITY, 0.0);
            continue;
        }
        let (land, river) = (energy.land[p], energy.river[p]);
        if land > river {
            g.add_edge(s, p, land - river, 0.0);
        } else if river > land {
            g.add_edge(p, t, river - land, 0.0);
        }
    }
    // merge the two directions of each neighbour pair into one arc pair
    let mut pairs: std::collections::BTreeMap<(usize, usize), (f64, f64)> = Default::default();
    for e in &energy.edges {
        if e.p == e.q {
            continue;
        }
        let key = (e.p.min(e.q), e.p.max(e.q));
        let slot = pairs.entry(key).or_insert((0.0, 0.0));
        if e.p < e.q {
            slot.0 += e.capacity;
        } else {
            slot.1 += e.capacity;
        }
    }
    for ((a, b), (ab, ba)) in pairs {
        if ab > 0.0 || ba > 0.0 {
            g.add_edge(a, b, ab, ba);
        }
    }
    g.max_flow(s, t);
    let side = g.source_side(s);
    Raster::new(
        energy.width,
        energy.height,
        RasterKind::Mask,
        (0..n).map(|p| if side[p] { 1.0 } else { 0.0 }).collect(),
    )
}

pub fn mask_labels(mask: &Raster) -> Vec<bool> {
    mask.data().iter().map(|&v| v > 0.5).collect()
}

/// Energy terms for an intensity image and a traced centerline.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: Raster,
    pub rlog: f64,
    pub land_cost: f64,
    pub energy: f64,
}

pub fn build_energy(img: &Raster, line: &Polyline, params: &SegParams) -> Result<(CrfEnergy, f64, f64)> {
    params.validate()?;
    let log_i = log_transform(img)?;
    let rlog = match params.rlog {
        Some(r) => r,
        None => estimate_rlog(&log_i, line)?,
    };
    let water = water_data_term(&log_i, rlog)?;
    let land_cost = land_data_term(&water, line, params.kappa, params.quantile)?;
    let n = img.len();
    let mut centerline = vec![false; n];
    for &(r, c) in &line.pixels {
        centerline[img.index(r, c)] = true;
    }
    let land = (0..n)
        .map(|p| if centerline[p] { HARD_CONSTRAINT } else { land_cost })
        .collect();
    let energy = CrfEnergy {
        width: img.width(),
        height: img.height(),
        land,
        river: water.into_data(),
        edges: pairwise_weights(img, params.lambda)?,
        centerline,
    };
    Ok((energy, rlog, land_cost))
}

pub fn segment_river_detailed(img: &Raster, line: &Polyline, params: &SegParams) -> Result<Segmentation> {
    let (energy, rlog, land_cost) = build_energy(img, line, params)?;
    let mask = min_energy_labeling(&energy)?;
    let e = energy.energy(&mask_labels(&mask));
    Ok(Segmentation {
        mask,
        rlog,
        land_cost,
        energy: e,
    })
}

pub fn segment_river(img: &Raster, line: &Polyline, params: &SegParams) -> Result<Raster> {
    Ok(segment_river_detailed(img, line, params)?.mask)
}
