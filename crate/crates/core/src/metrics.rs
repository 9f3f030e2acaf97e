//! Pixel confusion counts and precision / recall / F-score, river = positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Raster, RasterKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

pub fn confusion(mask: &Raster, truth: &Raster) -> Result<Confusion> {
    for r in [mask, truth] {
        if r.kind() != RasterKind::Mask {
            return Err(Error::invalid(format!("expected a mask, got {:?}", r.kind())));
        }
    }
    mask.check_dims(truth)?;
    let mut c = Confusion::default();
    for (&m, &t) in mask.data().iter().zip(truth.data()) {
        match (m > 0.5, t > 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Harmonic mean of precision and recall; 0 whenever it would be 0/0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn prf(c: &Confusion) -> Prf {
    let precision = ratio(c.tp as f64, (c.tp + c.fp) as f64);
    let recall = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
    Prf {
        precision,
        recall,
        fscore: f_score(precision, recall),
    }
}

/// One row of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scene: String,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl MetricsRow {
    pub fn new(scene: impl Into<String>, method: impl Into<String>, p: Prf) -> Self {
        MetricsRow {
            scene: scene.into(),
            method: method.into(),
            precision: p.precision,
            recall: p.recall,
            fscore: p.fscore,
        }
    }
}
