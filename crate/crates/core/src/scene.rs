//! Synthetic river scenes: reflectivity, ground-truth mask and control
//! points, plus multi-date stacks with independent speckle.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::centerline::ControlPoints;
use crate::despeckle::AcquisitionStack;
use crate::error::{Error, Result};
use crate::raster::{Raster, RasterKind};
use crate::speckle::{apply_speckle, generate_speckle, rng_for, SpeckleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Mean river width in pixels, measured across rows.
    pub river_width: f64,
    pub river_reflectivity: f64,
    pub meander_amplitude: f64,
    pub meander_period: f64,
    /// Number of land parcels (Voronoi cells).
    pub fields: usize,
    pub road: bool,
    pub road_reflectivity: f64,
    pub bright_points: usize,
    /// Control points at the top, middle and bottom of the river, this far
    /// from the image border.
    pub node_margin: usize,
    /// Per-date multiplicative spread of land reflectivity (0 = static).
    pub land_change: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 256,
            height: 256,
            river_width: 5.0,
            river_reflectivity: 0.2,
            meander_amplitude: 22.0,
            meander_period: 170.0,
            fields: 48,
            road: true,
            road_reflectivity: 0.3,
            bright_points: 20,
            node_margin: 8,
            land_change: 0.25,
            seed: 7,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::invalid(format!("scene {}x{} is too small", self.width, self.height)));
        }
        if !(self.river_width >= 1.0) || self.river_width > self.width as f64 / 4.0 {
            return Err(Error::invalid(format!("river width {} out of range", self.river_width)));
        }
        for (name, v) in [
            ("river_reflectivity", self.river_reflectivity),
            ("road_reflectivity", self.road_reflectivity),
            ("meander_period", self.meander_period),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.meander_amplitude >= 0.0) || !(self.land_change >= 0.0) || self.land_change >= 1.0 {
            return Err(Error::invalid("meander amplitude must be >= 0 and land change in [0, 1)"));
        }
        if self.fields == 0 {
            return Err(Error::invalid("need at least one land field"));
        }
        if 2 * self.node_margin + 2 >= self.height {
            return Err(Error::invalid("node margin leaves no room for the river"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RiverScene {
    pub reflectivity: Raster,
    pub truth: Raster,
    pub control_points: ControlPoints,
}

/// River axis column (continuous) at a given row.
struct Axis {
    c0: f64,
    a1: f64,
    a2: f64,
    p1: f64,
    p2: f64,
    phi1: f64,
    phi2: f64,
    phi3: f64,
    half_width: f64,
}

impl Axis {
    fn center(&self, r: f64) -> f64 {
        self.c0 + self.a1 * (2.0 * PI * r / self.p1 + self.phi1).sin() + self.a2 * (2.0 * PI * r / self.p2 + self.phi2).sin()
    }

    fn half_width(&self, r: f64) -> f64 {
        self.half_width * (1.0 + 0.15 * (2.0 * PI * r / 61.0 + self.phi3).sin())
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        let rc = r as f64 + 0.5;
        ((c as f64 + 0.5) - self.center(rc)).abs() < self.half_width(rc)
    }
}

/// Reflectivity of acquisition `date`; geometry depends only on the seed,
/// land parcels change by a date-specific factor.
pub fn river_scene_date(cfg: &SceneConfig, date: u64) -> Result<RiverScene> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = rng_for(cfg.seed, 0);
    let axis = Axis {
        c0: w as f64 / 2.0 + rng.random_range(-0.05..0.05) * w as f64,
        a1: cfg.meander_amplitude,
        a2: cfg.meander_amplitude * 0.35,
        p1: cfg.meander_period,
        p2: cfg.meander_period * 0.43,
        phi1: rng.random_range(0.0..2.0 * PI),
        phi2: rng.random_range(0.0..2.0 * PI),
        phi3: rng.random_range(0.0..2.0 * PI),
        half_width: cfg.river_width / 2.0,
    };
    let sites: Vec<(f64, f64, f64)> = (0..cfg.fields)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                // log-uniform parcel reflectivity in [0.5, 2]
                (rng.random_range(-0.693..0.693f64)).exp(),
            )
        })
        .collect();
    let (wave_r, wave_c, wave_phi) = (
        rng.random_range(40.0..90.0),
        rng.random_range(40.0..90.0),
        rng.random_range(0.0..2.0 * PI),
    );
    let road = (
        rng.random_range(0.0..0.3) * w as f64,
        rng.random_range(0.7..1.0) * w as f64,
    );
    let points: Vec<(usize, usize)> = (0..cfg.bright_points)
        .map(|_| (rng.random_range(0..h), rng.random_range(0..w)))
        .collect();

    let mut date_rng = rng_for(cfg.seed, 1 + date);
    let factors: Vec<f64> = (0..cfg.fields)
        .map(|_| {
            if date == 0 || cfg.land_change == 0.0 {
                1.0
            } else {
                1.0 + date_rng.random_range(-cfg.land_change..cfg.land_change)
            }
        })
        .collect();

    let on_road = |r: usize, c: usize| {
        if !cfg.road {
            return false;
        }
        let t = (r as f64 + 0.5) / h as f64;
        let rc = road.0 + t * (road.1 - road.0);
        ((c as f64 + 0.5) - rc).abs() < 1.0
    };
    let is_point = |r: usize, c: usize| points.contains(&(r, c));

    let mut truth = vec![0.0; w * h];
    let mut refl = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            if axis.contains(r, c) {
                truth[k] = 1.0;
                refl[k] = cfg.river_reflectivity;
                continue;
            }
            if on_road(r, c) {
                refl[k] = cfg.road_reflectivity;
                continue;
            }
            let (rf, cf) = (r as f64, c as f64);
            let nearest = sites
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1 .0 - rf).powi(2) + (a.1 .1 - cf).powi(2);
                    let db = (b.1 .0 - rf).powi(2) + (b.1 .1 - cf).powi(2);
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
                .expect("at least one field");
            let modulation = 1.0 + 0.2 * (2.0 * PI * rf / wave_r + wave_phi).sin() * (2.0 * PI * cf / wave_c).cos();
            refl[k] = sites[nearest].2 * factors[nearest] * modulation;
            if is_point(r, c) {
                refl[k] *= 12.0;
            }
        }
    }

    let m = cfg.node_margin;
    let node = |r: usize| -> Result<(usize, usize)> {
        let c = axis.center(r as f64 + 0.5).floor();
        if c < m as f64 || c >= (w - m) as f64 {
            return Err(Error::invalid("river axis leaves the image; lower the meander amplitude"));
        }
        Ok((r, c as usize))
    };
    let nodes = vec![node(m)?, node(h / 2)?, node(h - 1 - m)?];
    Ok(RiverScene {
        reflectivity: Raster::new(w, h, RasterKind::Intensity, refl)?,
        truth: Raster::new(w, h, RasterKind::Mask, truth)?,
        control_points: ControlPoints::new(format!("synthetic-{}", cfg.seed), nodes)?,
    })
}

pub fn river_scene(cfg: &SceneConfig) -> Result<RiverScene> {
    river_scene_date(cfg, 0)
}

/// Speckled observation of `reflectivity`.
pub fn observe(reflectivity: &Raster, speckle: &SpeckleConfig) -> Result<Raster> {
    let u = generate_speckle(reflectivity.width(), reflectivity.height(), speckle)?;
    apply_speckle(reflectivity, &u)
}

/// Dates `1..=dates` of the scene, each with its own land changes and
/// speckle realisation (seed offset by the date).
pub fn speckled_stack(cfg: &SceneConfig, dates: usize, speckle: &SpeckleConfig) -> Result<AcquisitionStack> {
    let images = (1..=dates as u64)
        .map(|d| {
            let scene = river_scene_date(cfg, d)?;
            let sc = SpeckleConfig {
                seed: speckle.seed.wrapping_add(d.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                ..*speckle
            };
            observe(&scene.reflectivity, &sc)
        })
        .collect::<Result<Vec<_>>>()?;
    AcquisitionStack::new(images)
}

/// Clean reflectivity images of varied river scenes, for supervised or
/// synthetic-speckle pre-training.
pub fn training_images(count: usize, size: usize, seed: u64) -> Result<Vec<Raster>> {
    (0..count as u64)
        .map(|i| {
            let cfg = SceneConfig {
                width: size,
                height: size,
                meander_amplitude: size as f64 / 12.0,
                meander_period: size as f64 * 0.7,
                fields: (size * size / 1400).max(4),
                bright_points: size * size / 3000,
                river_width: 3.0 + (i % 4) as f64,
                seed: seed.wrapping_mul(1000).wrapping_add(i),
                ..SceneConfig::default()
            };
            Ok(river_scene(&cfg)?.reflectivity)
        })
        .collect()
}
