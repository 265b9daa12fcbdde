//! Grid posterior over candidate clock frequencies.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{invalid, Error, Result};

/// Grid points per support window.
pub const DEFAULT_GRID_POINTS: usize = 2048;

/// Normalised density on a uniform grid spanning `[lo, hi]` (inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    lo: f64,
    hi: f64,
    density: Vec<f64>,
}

/// Posterior mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_dev: f64,
}

fn check_support(lo: f64, hi: f64, points: usize) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return invalid(format!("support [{lo}, {hi}] is empty or not finite"));
    }
    if points < 3 {
        return invalid(format!("need at least 3 grid points, got {points}"));
    }
    Ok(())
}

impl PosteriorGrid {
    /// Builds a grid from unnormalised non-negative values.
    pub fn from_values(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        check_support(lo, hi, values.len())?;
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("density values must be finite and non-negative");
        }
        let mut grid = PosteriorGrid {
            lo,
            hi,
            density: values,
        };
        let mass = grid.mass();
        if !(mass > 0.0) {
            return Err(grid.degenerate(None));
        }
        grid.density.iter_mut().for_each(|d| *d /= mass);
        Ok(grid)
    }

    /// Empty stand-in, only valid as a slot to be overwritten.
    pub(crate) fn placeholder() -> Self {
        PosteriorGrid {
            lo: 0.0,
            hi: 0.0,
            density: Vec::new(),
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn points(&self) -> usize {
        self.density.len()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.density.len() - 1) as f64
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    #[inline]
    pub fn frequency(&self, index: usize) -> f64 {
        // endpoint-exact so that rewindow onto the same support is an identity
        let t = index as f64 / (self.density.len() - 1) as f64;
        self.lo + (self.hi - self.lo) * t
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.density.len()).map(move |i| self.frequency(i))
    }

    fn trapezoid(&self, f: impl Fn(usize) -> f64) -> f64 {
        let n = self.density.len();
        let interior: f64 = (1..n - 1).map(&f).sum();
        self.spacing() * (interior + 0.5 * (f(0) + f(n - 1)))
    }

    /// Trapezoidal integral of the density.
    pub fn mass(&self) -> f64 {
        self.trapezoid(|i| self.density[i])
    }

    /// Linear interpolation of the density, zero outside the support.
    pub fn density_at(&self, frequency: f64) -> f64 {
        if !(frequency >= self.lo && frequency <= self.hi) {
            return 0.0;
        }
        let pos = (frequency - self.lo) / self.spacing();
        let i = (pos.floor() as usize).min(self.density.len() - 2);
        let w = (pos - i as f64).clamp(0.0, 1.0);
        self.density[i] * (1.0 - w) + self.density[i + 1] * w
    }

    fn degenerate(&self, step: Option<usize>) -> Error {
        Error::DegeneratePosterior {
            step,
            grid_points: self.density.len(),
            lo: self.lo,
            hi: self.hi,
        }
    }

    /// Writes `frequency_hz,density` rows with a header.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "frequency_hz,density")?;
        for (f, d) in self.frequencies().zip(&self.density) {
            writeln!(out, "{f:.9},{d:.12e}")?;
        }
        Ok(())
    }
}

pub fn uniform_prior(lo: f64, hi: f64, points: usize) -> Result<PosteriorGrid> {
    check_support(lo, hi, points)?;
    Ok(PosteriorGrid {
        lo,
        hi,
        density: vec![1.0 / (hi - lo); points],
    })
}

/// Normal density truncated to `[lo, hi]` and renormalised.
pub fn gaussian_prior(lo: f64, hi: f64, mean: f64, sigma: f64, points: usize) -> Result<PosteriorGrid> {
    check_support(lo, hi, points)?;
    if !(sigma > 0.0) {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    let h = (hi - lo) / (points - 1) as f64;
    let values = (0..points)
        .map(|i| {
            let z = (lo + i as f64 * h - mean) / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    PosteriorGrid::from_values(lo, hi, values)
}

/// Bayes update with a log-likelihood, evaluated in log space and
/// exponentiated after subtracting the maximum.
pub fn update_log(prior: &PosteriorGrid, log_likelihood: impl Fn(f64) -> f64) -> Result<PosteriorGrid> {
    let mut log_post: Vec<f64> = prior
        .density
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p > 0.0 {
                p.ln() + log_likelihood(prior.frequency(i))
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(prior.degenerate(None));
    }
    for v in &mut log_post {
        // NaN from 0·ln 0 style corners is treated as impossible
        *v = if v.is_nan() { 0.0 } else { (*v - max).exp() };
    }
    let mut post = PosteriorGrid {
        lo: prior.lo,
        hi: prior.hi,
        density: log_post,
    };
    let mass = post.mass();
    if !(mass > 0.0) {
        return Err(prior.degenerate(None));
    }
    post.density.iter_mut().for_each(|d| *d /= mass);
    Ok(post)
}

/// Prior × likelihood values given on the prior's own grid, renormalised.
pub fn update_with_values(prior: &PosteriorGrid, likelihood: &[f64]) -> Result<PosteriorGrid> {
    if likelihood.len() != prior.points() {
        return invalid(format!(
            "likelihood has {} values for a {}-point grid",
            likelihood.len(),
            prior.points()
        ));
    }
    // rescale so a tiny but non-zero likelihood cannot overflow on division
    let max = likelihood.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(prior.degenerate(None));
    }
    let mut post = PosteriorGrid {
        lo: prior.lo,
        hi: prior.hi,
        density: prior.density.iter().zip(likelihood).map(|(p, l)| p * (l / max)).collect(),
    };
    let mass = post.mass();
    if !(mass > 1e-280 && mass.is_finite()) {
        return Err(prior.degenerate(None));
    }
    post.density.iter_mut().for_each(|d| *d /= mass);
    Ok(post)
}

/// Pointwise prior × likelihood, renormalised.
pub fn update(prior: &PosteriorGrid, likelihood: impl Fn(f64) -> f64) -> Result<PosteriorGrid> {
    update_log(prior, |f| likelihood(f).ln())
}

/// Posterior mean and standard deviation by trapezoidal quadrature.
pub fn estimate(posterior: &PosteriorGrid) -> Estimate {
    let mass = posterior.mass();
    let mean = posterior.trapezoid(|i| posterior.density[i] * posterior.frequency(i)) / mass;
    let var = posterior.trapezoid(|i| {
        let d = posterior.frequency(i) - mean;
        posterior.density[i] * d * d
    }) / mass;
    Estimate {
        mean,
        std_dev: var.max(0.0).sqrt(),
    }
}

/// Mean and standard deviation of the density `exp(log_density)` on a
/// uniform grid over `[lo, hi]`, without building a [`PosteriorGrid`].
/// Returns `None` when every point has zero weight.
pub fn estimate_from_log_density(lo: f64, hi: f64, log_density: &[f64]) -> Option<Estimate> {
    let n = log_density.len();
    let max = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || n < 3 {
        return None;
    }
    let freq = |i: usize| lo + (hi - lo) * (i as f64 / (n - 1) as f64);
    let weight = |i: usize| {
        let w = (log_density[i] - max).exp();
        let w = if w.is_nan() { 0.0 } else { w };
        if i == 0 || i == n - 1 {
            0.5 * w
        } else {
            w
        }
    };
    let (mut z, mut s1) = (0.0, 0.0);
    for i in 0..n {
        let w = weight(i);
        z += w;
        s1 += w * freq(i);
    }
    let mean = s1 / z;
    let var: f64 = (0..n).map(|i| weight(i) * (freq(i) - mean).powi(2)).sum::<f64>() / z;
    Some(Estimate {
        mean,
        std_dev: var.max(0.0).sqrt(),
    })
}

/// Interpolates the density onto a fresh uniform grid over
/// `[max(lo, old_lo), min(hi, old_hi)]` with the same number of points.
pub fn rewindow(posterior: &PosteriorGrid, lo: f64, hi: f64) -> Result<PosteriorGrid> {
    let new_lo = lo.max(posterior.lo);
    let new_hi = hi.min(posterior.hi);
    if !(new_lo < new_hi) {
        return invalid(format!(
            "window [{lo}, {hi}] does not overlap support [{}, {}]",
            posterior.lo, posterior.hi
        ));
    }
    let points = posterior.points();
    let h = (new_hi - new_lo) / (points - 1) as f64;
    let values: Vec<f64> = (0..points)
        .map(|i| {
            let f = if i == points - 1 { new_hi } else { new_lo + i as f64 * h };
            posterior.density_at(f)
        })
        .collect();
    PosteriorGrid::from_values(new_lo, new_hi, values)
}
