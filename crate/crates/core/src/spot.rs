//! Peaks-over-threshold thresholding with a generalized Pareto tail, fitted
//! once on training values and then updated online.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anchor quantile for the tail.
pub const ANCHOR_LEVEL: f64 = 0.98;
pub const MIN_SAMPLES: usize = 50;
/// Below this many peaks the tail fit is not attempted.
pub const MIN_PEAKS: usize = 10;

const GRID: usize = 64;
const GAMMA_EPS: f64 = 1e-8;

/// Generalized Pareto shape γ and scale σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gpd {
    pub gamma: f64,
    pub sigma: f64,
}

impl Gpd {
    pub fn log_likelihood(&self, ys: &[f64]) -> f64 {
        let Gpd { gamma, sigma } = *self;
        if !(sigma > 0.0) || !gamma.is_finite() {
            return f64::NEG_INFINITY;
        }
        let n = ys.len() as f64;
        if gamma.abs() < GAMMA_EPS {
            return -n * sigma.ln() - ys.iter().sum::<f64>() / sigma;
        }
        let mut acc = 0.0;
        for &y in ys {
            let z = 1.0 + gamma * y / sigma;
            if z <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += z.ln();
        }
        -n * sigma.ln() - (1.0 + 1.0 / gamma) * acc
    }

    /// P(Y > y).
    pub fn survival(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        if self.gamma.abs() < GAMMA_EPS {
            return (-y / self.sigma).exp();
        }
        let z = 1.0 + self.gamma * y / self.sigma;
        if z <= 0.0 {
            0.0
        } else {
            z.powf(-1.0 / self.gamma)
        }
    }
}

/// Method-of-moments estimate.
pub fn fit_moments(ys: &[f64]) -> Option<Gpd> {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    if !(var > 0.0) || !(mean > 0.0) {
        return None;
    }
    let r = mean * mean / var;
    Some(Gpd {
        gamma: 0.5 * (1.0 - r),
        sigma: 0.5 * mean * (r + 1.0),
    })
}

/// Stationary points of the GPD likelihood by Grimshaw's reduction to a
/// one-dimensional root search, bracketed on a grid and refined by bisection.
fn grimshaw_candidates(ys: &[f64]) -> Vec<Gpd> {
    let n = ys.len() as f64;
    let y_max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = ys.iter().sum::<f64>() / n;
    if !(y_min > 0.0) || !(y_max > y_min) {
        return Vec::new();
    }
    let u = |x: f64| ys.iter().map(|y| 1.0 / (1.0 + x * y)).sum::<f64>() / n;
    let v = |x: f64| 1.0 + ys.iter().map(|y| (1.0 + x * y).ln()).sum::<f64>() / n;
    let w = |x: f64| u(x) * v(x) - 1.0;

    let eps = 1e-8 / mean;
    let intervals = [
        (-1.0 / y_max + eps, -eps),
        (eps, 2.0 * (mean - y_min) / (y_min * y_min)),
    ];
    let mut roots = Vec::new();
    for (a, b) in intervals {
        if !(b > a) {
            continue;
        }
        let xs: Vec<f64> = (0..=GRID)
            .map(|i| a + (b - a) * i as f64 / GRID as f64)
            .collect();
        let ws: Vec<f64> = xs.iter().map(|&x| w(x)).collect();
        for i in 0..GRID {
            if !(ws[i].is_finite() && ws[i + 1].is_finite()) || ws[i].signum() == ws[i + 1].signum()
            {
                continue;
            }
            let (mut lo, mut hi, mut wlo) = (xs[i], xs[i + 1], ws[i]);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let wm = w(mid);
                if wm.signum() == wlo.signum() {
                    lo = mid;
                    wlo = wm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    roots
        .into_iter()
        .filter(|x| x.abs() > 0.0)
        .map(|x| {
            let gamma = v(x) - 1.0;
            Gpd {
                gamma,
                sigma: gamma / x,
            }
        })
        .filter(|g| g.sigma > 0.0 && g.sigma.is_finite())
        .collect()
}

/// Moments first; likelihood stationary points and the exponential limit
/// compete with it, and the highest likelihood wins.
pub fn fit_gpd(ys: &[f64]) -> Option<Gpd> {
    let mut candidates: Vec<Gpd> = grimshaw_candidates(ys);
    candidates.extend(fit_moments(ys));
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    if mean > 0.0 {
        candidates.push(Gpd {
            gamma: 0.0,
            sigma: mean,
        });
    }
    candidates
        .into_iter()
        .map(|g| (g.log_likelihood(ys), g))
        .filter(|(ll, _)| ll.is_finite())
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, g)| g)
}

/// Linear-interpolated empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpotOutcome {
    /// Above the current threshold; not absorbed into the model.
    Alarm,
    /// Above the anchor; absorbed as a new peak.
    Excess,
    Normal,
}

/// Per-series threshold level with its tail model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotThreshold {
    pub q: f64,
    pub anchor: f64,
    pub level: f64,
    /// `None` when the empirical fallback is in use.
    pub tail: Option<Gpd>,
    pub n_seen: usize,
    pub peaks: Vec<f64>,
}

impl SpotThreshold {
    /// Fits on `samples` at risk level `q`.
    pub fn fit(samples: &[f64], q: f64) -> Result<Self> {
        if samples.len() < MIN_SAMPLES {
            return Err(Error::TooShort(format!(
                "threshold fit needs >= {MIN_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParam(format!(
                "risk level q={q} outside (0, 1)"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite threshold sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let anchor = quantile_sorted(&sorted, ANCHOR_LEVEL);
        let peaks: Vec<f64> = sorted
            .iter()
            .filter(|&&v| v > anchor)
            .map(|v| v - anchor)
            .collect();
        let mut out = Self {
            q,
            anchor,
            level: anchor,
            tail: None,
            n_seen: samples.len(),
            peaks,
        };
        out.tail = out.fit_tail();
        match out.tail {
            Some(_) => out.level = out.tail_quantile(),
            None => {
                log::warn!(
                    "tail fit unavailable ({} peaks); using empirical {} quantile",
                    out.peaks.len(),
                    1.0 - q
                );
                out.level = quantile_sorted(&sorted, 1.0 - q).max(anchor);
            }
        }
        Ok(out)
    }

    fn fit_tail(&self) -> Option<Gpd> {
        if self.peaks.len() < MIN_PEAKS {
            return None;
        }
        fit_gpd(&self.peaks)
    }

    fn tail_quantile(&self) -> f64 {
        let Some(Gpd { gamma, sigma }) = self.tail else {
            return self.level;
        };
        let r = self.q * self.n_seen as f64 / self.peaks.len() as f64;
        let excess = if gamma.abs() < GAMMA_EPS {
            -sigma * r.ln()
        } else {
            sigma / gamma * (r.powf(-gamma) - 1.0)
        };
        self.anchor + excess.max(0.0)
    }

    pub fn uses_fallback(&self) -> bool {
        self.tail.is_none()
    }

    pub fn exceeds(&self, x: f64) -> bool {
        x > self.level
    }

    /// One streaming step: classify against the current level, then absorb
    /// non-alarming values.
    pub fn update(&mut self, x: f64) -> SpotOutcome {
        if x > self.level {
            return SpotOutcome::Alarm;
        }
        self.n_seen += 1;
        if x > self.anchor && self.tail.is_some() {
            self.peaks.push(x - self.anchor);
            if let Some(g) = self.fit_tail() {
                self.tail = Some(g);
            }
            self.level = self.tail_quantile();
            return SpotOutcome::Excess;
        }
        SpotOutcome::Normal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1, Uniform};

    #[test]
    fn exponential_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..100_000).map(|_| Exp1.sample(&mut rng)).collect();
        let s = SpotThreshold::fit(&xs, 1e-3).unwrap();
        let want = 1000f64.ln();
        assert!((s.level - want).abs() / want < 0.1, "{}", s.level);
    }

    #[test]
    fn uniform_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| u.sample(&mut rng)).collect();
        let s = SpotThreshold::fit(&xs, 1e-2).unwrap();
        assert!((s.level - 0.99).abs() < 0.02, "{}", s.level);
    }

    #[test]
    fn constant_falls_back() {
        let s = SpotThreshold::fit(&[2.5; 200], 1e-3).unwrap();
        assert!(s.uses_fallback());
        assert_eq!(s.level, 2.5);
        assert!(s.level >= s.anchor);
    }

    #[test]
    fn too_few_samples() {
        assert!(SpotThreshold::fit(&[1.0; 10], 1e-3).is_err());
    }

    #[test]
    fn level_non_increasing_in_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..5000).map(|_| Exp1.sample(&mut rng)).collect();
        let levels: Vec<f64> = [1e-4, 1e-3, 5e-3, 1e-2, 1.5e-2]
            .iter()
            .map(|&q| SpotThreshold::fit(&xs, q).unwrap().level)
            .collect();
        assert!(levels.windows(2).all(|w| w[0] >= w[1]), "{levels:?}");
    }

    #[test]
    fn online_update_absorbs_peaks() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<f64> = (0..2000).map(|_| Exp1.sample(&mut rng)).collect();
        let mut s = SpotThreshold::fit(&xs, 1e-3).unwrap();
        let peaks = s.peaks.len();
        assert_eq!(s.update(s.anchor + 1e-3), SpotOutcome::Excess);
        assert_eq!(s.peaks.len(), peaks + 1);
        assert_eq!(s.update(0.0), SpotOutcome::Normal);
        assert_eq!(s.update(1e9), SpotOutcome::Alarm);
        assert_eq!(s.n_seen, 2002);
    }

    #[test]
    fn moments_recover_exponential() {
        let g = fit_moments(&[1.0, 2.0, 3.0]).unwrap();
        assert!(g.sigma > 0.0);
    }
}
