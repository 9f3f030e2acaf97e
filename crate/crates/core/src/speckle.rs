//! Synthetic speckle generation and the log-domain speckle density.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::raster::{Raster, RasterKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleConfig {
    pub looks: f64,
    /// Standard deviation, in pixels, of the Gaussian low-pass applied to
    /// the complex field. `0` means uncorrelated speckle.
    pub correlation_scale: f64,
    pub seed: u64,
}

impl SpeckleConfig {
    pub fn new(looks: f64, correlation_scale: f64, seed: u64) -> Result<Self> {
        let cfg = SpeckleConfig {
            looks,
            correlation_scale,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.looks > 0.0) || !self.looks.is_finite() {
            return Err(Error::invalid(format!("looks must be > 0, got {}", self.looks)));
        }
        if !(self.correlation_scale >= 0.0) || !self.correlation_scale.is_finite() {
            return Err(Error::invalid(format!(
                "correlation_scale must be >= 0, got {}",
                self.correlation_scale
            )));
        }
        Ok(())
    }
}

/// Seeded generator for substream `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dispatches on `correlation_scale`: zero gives i.i.d. gamma speckle,
/// positive gives the correlated generator.
pub fn generate_speckle(w: usize, h: usize, cfg: &SpeckleConfig) -> Result<Raster> {
    if cfg.correlation_scale > 0.0 {
        sample_correlated_speckle(w, h, cfg)
    } else {
        sample_speckle(w, h, cfg)
    }
}

/// I.i.d. unit-mean gamma speckle with shape `L` (variance `1/L`).
pub fn sample_speckle(w: usize, h: usize, cfg: &SpeckleConfig) -> Result<Raster> {
    cfg.validate()?;
    if w == 0 || h == 0 {
        return Err(Error::invalid("empty speckle field"));
    }
    let gamma = Gamma::new(cfg.looks, 1.0 / cfg.looks).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_for(cfg.seed, 0);
    let data = (0..w * h)
        .map(|_| {
            // a zero draw would break the intensity invariant
            let mut u: f64 = gamma.sample(&mut rng);
            while u <= 0.0 {
                u = gamma.sample(&mut rng);
            }
            u
        })
        .collect();
    Ok(Raster::from_parts(w, h, RasterKind::Intensity, data))
}

/// Spatially correlated speckle: `L` independent circular complex Gaussian
/// fields are low-passed with a Gaussian kernel, detected as squared
/// magnitude, averaged over looks and normalised to unit empirical mean.
pub fn sample_correlated_speckle(w: usize, h: usize, cfg: &SpeckleConfig) -> Result<Raster> {
    cfg.validate()?;
    if !(cfg.correlation_scale > 0.0) {
        return Err(Error::invalid("correlated speckle needs correlation_scale > 0"));
    }
    if cfg.looks.fract() != 0.0 {
        return Err(Error::invalid(format!(
            "correlated speckle needs an integer number of looks, got {}",
            cfg.looks
        )));
    }
    if w == 0 || h == 0 {
        return Err(Error::invalid("empty speckle field"));
    }
    let looks = cfg.looks as usize;
    let kernel = gaussian_kernel(cfg.correlation_scale);
    let radius = kernel.len() / 2;
    let (fw, fh) = (w + 2 * radius, h + 2 * radius);
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");

    let mut acc = vec![0.0; w * h];
    for look in 0..looks {
        // one substream per look so looks can be produced independently
        let mut rng = rng_for(cfg.seed, 1 + look as u64);
        let re: Vec<f64> = (0..fw * fh).map(|_| normal.sample(&mut rng)).collect();
        let im: Vec<f64> = (0..fw * fh).map(|_| normal.sample(&mut rng)).collect();
        let re = filter_valid(&re, fw, fh, &kernel);
        let im = filter_valid(&im, fw, fh, &kernel);
        for (a, (x, y)) in acc.iter_mut().zip(re.iter().zip(&im)) {
            *a += x * x + y * y;
        }
    }
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    let data = acc.into_iter().map(|v| (v / mean).max(f64::MIN_POSITIVE)).collect();
    Ok(Raster::from_parts(w, h, RasterKind::Intensity, data))
}

/// Normalised (unit energy) Gaussian taps truncated at 4 standard deviations.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let energy = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= energy);
    k
}

/// Separable filtering keeping only the fully supported interior.
fn filter_valid(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let (ow, oh) = (w - 2 * r, h - 2 * r);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = kernel.iter().zip(&line[x..x + kernel.len()]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (t, k) in kernel.iter().enumerate() {
            let line = &rows[(y + t) * ow..(y + t + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(line) {
                *o += k * v;
            }
        }
    }
    out
}

/// Pixelwise product `v * u`.
pub fn apply_speckle(reflectivity: &Raster, speckle: &Raster) -> Result<Raster> {
    reflectivity.check_dims(speckle)?;
    let data = reflectivity
        .data()
        .iter()
        .zip(speckle.data())
        .map(|(v, u)| v * u)
        .collect();
    Raster::new(reflectivity.width(), reflectivity.height(), RasterKind::Intensity, data)
}

/// Log-density of log-transformed `L`-look speckle (Fisher-Tippett):
/// `L ln L - ln Γ(L) + L s - L e^s`.
pub fn ft_logpdf(s: f64, looks: f64) -> f64 {
    looks * looks.ln() - ln_gamma(looks) + looks * s - looks * s.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ContinuousCDF, Exp};
    use statrs::function::gamma::{digamma, gamma_lr};

    fn cfg(looks: f64, scale: f64, seed: u64) -> SpeckleConfig {
        SpeckleConfig::new(looks, scale, seed).unwrap()
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var)
    }

    #[test]
    fn config_validation() {
        assert!(SpeckleConfig::new(0.0, 0.0, 1).is_err());
        assert!(SpeckleConfig::new(4.0, -1.0, 1).is_err());
        assert!(sample_correlated_speckle(8, 8, &cfg(4.4, 1.0, 1)).is_err());
        assert!(sample_correlated_speckle(8, 8, &cfg(4.0, 0.0, 1)).is_err());
    }

    #[test]
    fn gamma_moments_l4() {
        let u = sample_speckle(1000, 1000, &cfg(4.0, 0.0, 11)).unwrap();
        let (m, var) = moments(u.data());
        assert!((m - 1.0).abs() <= 0.003, "mean {m}");
        assert!((var - 0.25).abs() <= 0.25 * 0.02, "var {var}");
    }

    #[test]
    fn single_look_passes_ks_against_exponential() {
        let u = sample_speckle(1000, 100, &cfg(1.0, 0.0, 5)).unwrap();
        let mut v = u.into_data();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let exp = Exp::new(1.0).unwrap();
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = exp.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // asymptotic KS critical value at alpha = 0.01
        let crit = 1.628 / n.sqrt();
        assert!(d < crit, "KS D = {d}, critical {crit}");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_speckle(32, 16, &cfg(4.4, 0.0, 9)).unwrap();
        let b = sample_speckle(32, 16, &cfg(4.4, 0.0, 9)).unwrap();
        assert_eq!(a, b);
        let c = sample_correlated_speckle(32, 16, &cfg(4.0, 0.7, 9)).unwrap();
        let d = sample_correlated_speckle(32, 16, &cfg(4.0, 0.7, 9)).unwrap();
        assert_eq!(c, d);
        let e = sample_speckle(32, 16, &cfg(4.4, 0.0, 10)).unwrap();
        assert_ne!(a, e);
    }

    fn lag1_autocorrelation(img: &Raster) -> f64 {
        let (m, var) = moments(img.data());
        let (w, h) = (img.width(), img.height());
        let mut acc = 0.0;
        let mut n = 0usize;
        for r in 0..h {
            for c in 0..w - 1 {
                acc += (img.get(r, c) - m) * (img.get(r, c + 1) - m);
                n += 1;
            }
        }
        acc / n as f64 / var
    }

    #[test]
    fn correlated_field_statistics() {
        let u = sample_correlated_speckle(1024, 1024, &cfg(4.0, 1.0, 3)).unwrap();
        assert!((u.mean() - 1.0).abs() <= 0.01);
        let rho = lag1_autocorrelation(&u);
        assert!(rho > 0.2, "lag-1 autocorrelation {rho}");
    }

    #[test]
    fn vanishing_correlation_recovers_gamma_enl() {
        let u = sample_correlated_speckle(1000, 1000, &cfg(4.0, 1e-3, 21)).unwrap();
        let enl = crate::raster::enl_global(&u).unwrap();
        assert!((enl - 4.0).abs() <= 4.0 * 0.05, "ENL {enl}");
        assert!(lag1_autocorrelation(&u).abs() < 0.01);
    }

    #[test]
    fn apply_speckle_identities() {
        let v = Raster::from_fn(4, 3, RasterKind::Intensity, |r, c| 1.0 + (r * 4 + c) as f64).unwrap();
        let ones = Raster::filled(4, 3, RasterKind::Intensity, 1.0).unwrap();
        assert_eq!(apply_speckle(&v, &ones).unwrap(), v);
        let u = sample_speckle(4, 3, &cfg(4.0, 0.0, 2)).unwrap();
        assert_eq!(apply_speckle(&ones, &u).unwrap(), u);
        assert!(apply_speckle(&v, &Raster::filled(3, 4, RasterKind::Intensity, 1.0).unwrap()).is_err());
    }

    #[test]
    fn apply_speckle_preserves_mean() {
        let v = Raster::filled(1000, 1000, RasterKind::Intensity, 2.5).unwrap();
        let u = sample_speckle(1000, 1000, &cfg(4.0, 0.0, 17)).unwrap();
        let w = apply_speckle(&v, &u).unwrap();
        assert!((w.mean() / v.mean() - 1.0).abs() <= 0.005);
    }

    #[test]
    fn ft_logpdf_single_look_at_zero() {
        assert_relative_eq!(ft_logpdf(0.0, 1.0), -1.0, epsilon = 1e-14);
        assert_relative_eq!(ft_logpdf(0.0, 1.0).exp(), 0.36788, epsilon = 1e-5);
    }

    /// Adaptive Simpson quadrature, used as an independent integration oracle.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
        }
        #[allow(clippy::too_many_arguments)]
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64, fa: f64, b: f64, fb: f64,
            m: f64, fm: f64, whole: f64, tol: f64, depth: u32,
        ) -> f64 {
            let (lm, flm, left) = simpson(f, a, fa, m, fm);
            let (rm, frm, right) = simpson(f, m, fm, b, fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
        }
        let (fa, fb) = (f(a), f(b));
        let (m, fm, whole) = simpson(f, a, fa, b, fb);
        recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
    }

    #[test]
    fn ft_density_integrates_to_one() {
        for &l in &[1.0, 4.0, 4.4] {
            let total = adaptive_simpson(&|s| ft_logpdf(s, l).exp(), -30.0, 10.0, 1e-12);
            assert!((total - 1.0).abs() <= 1e-8, "L={l}: {total}");
        }
    }

    #[test]
    fn ft_density_peaks_at_zero() {
        let step = 1e-3;
        for &l in &[0.5, 1.0, 4.0, 4.4, 10.0] {
            let argmax = (-5000..=3000)
                .map(|i| i as f64 * step)
                .max_by(|a, b| ft_logpdf(*a, l).total_cmp(&ft_logpdf(*b, l)))
                .unwrap();
            assert!(argmax.abs() <= step, "L={l}: argmax {argmax}");
        }
    }

    #[test]
    fn log_speckle_histogram_matches_density() {
        let l = 4.0;
        let u = sample_speckle(1000, 1000, &cfg(l, 0.0, 23)).unwrap();
        let (lo, bw, bins) = (-3.0, 0.1, 40);
        let mut counts = vec![0usize; bins];
        for &x in u.data() {
            let s = x.ln();
            let b = ((s - lo) / bw).floor();
            if b >= 0.0 && (b as usize) < bins {
                counts[b as usize] += 1;
            }
        }
        let n = u.len() as f64;
        // exact bin mass through the gamma CDF: P(s <= a) = P(L, L e^a)
        let cdf = |a: f64| gamma_lr(l, l * a.exp());
        let worst = (0..bins)
            .map(|b| {
                let a = lo + b as f64 * bw;
                let expected = (cdf(a + bw) - cdf(a)) / bw;
                (counts[b] as f64 / (n * bw) - expected).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 0.01, "max density error {worst}");
        // cross-check the bin masses against the closed-form density
        let centre = (cdf(0.05) - cdf(-0.05)) / 0.1;
        assert!((centre - ft_logpdf(0.0, l).exp()).abs() < 2e-3);
    }

    #[test]
    fn log_speckle_mean_is_digamma_minus_log() {
        let l = 4.0;
        let u = sample_speckle(1000, 1000, &cfg(l, 0.0, 29)).unwrap();
        let logs: Vec<f64> = u.data().iter().map(|v| v.ln()).collect();
        let (m, var) = moments(&logs);
        let expected = digamma(l) - l.ln();
        let se = (var / logs.len() as f64).sqrt();
        assert!((m - expected).abs() <= 3.0 * se, "mean {m} vs {expected} (se {se})");
    }
}
