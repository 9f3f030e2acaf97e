//! Negative log-likelihood of log-speckle given a predicted log-reflectivity.
//!
//! For a prediction `p` and a log-intensity target `t` the per-pixel loss is
//! `p - t + exp(t - p)`. It is bounded below by 1, reached only at `p = t`.

use crate::error::Result;
use crate::raster::{Raster, RasterKind};

/// Exponent arguments above this are clamped to keep `exp` finite.
pub const EXP_CLAMP: f64 = 50.0;

/// Loss value plus the number of pixels whose exponent hit [`EXP_CLAMP`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub clamped: usize,
}

pub fn ft_loss(pred: &Raster, target: &Raster) -> Result<f64> {
    Ok(ft_loss_report(pred, target)?.loss)
}

pub fn ft_loss_report(pred: &Raster, target: &Raster) -> Result<LossReport> {
    pred.check_dims(target)?;
    Ok(loss_slice(pred.data(), target.data()))
}

/// Gradient of [`ft_loss`] with respect to each prediction pixel:
/// `(1 - exp(t - p)) / N`. Clamped pixels contribute `1 / N`.
pub fn ft_loss_grad(pred: &Raster, target: &Raster) -> Result<Raster> {
    pred.check_dims(target)?;
    let mut grad = vec![0.0; pred.len()];
    grad_slice(pred.data(), target.data(), &mut grad);
    Ok(Raster::from_parts(pred.width(), pred.height(), RasterKind::Response, grad))
}

pub(crate) fn loss_slice<T: Copy + Into<f64>>(pred: &[T], target: &[T]) -> LossReport {
    let mut acc = 0.0;
    let mut clamped = 0;
    for (&p, &t) in pred.iter().zip(target) {
        let (p, t): (f64, f64) = (p.into(), t.into());
        let d = t - p;
        let e = if d > EXP_CLAMP {
            clamped += 1;
            EXP_CLAMP.exp()
        } else {
            d.exp()
        };
        acc += e - d;
    }
    LossReport {
        loss: acc / pred.len() as f64,
        clamped,
    }
}

pub(crate) fn grad_slice<T: Copy + Into<f64>, G: Copy + From<f64>>(
    pred: &[T],
    target: &[T],
    grad: &mut [G],
) {
    let n = pred.len() as f64;
    for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(target) {
        let d = t.into() - p.into();
        let e = if d > EXP_CLAMP { 0.0 } else { d.exp() };
        *g = G::from((1.0 - e) / n);
    }
}
