//! Protocol description: cascaded ensembles, resource factors, the adaptive
//! interrogation-time policy and the theoretical precision curves.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::bayes::PosteriorGrid;
use crate::error::{invalid, Result};
use crate::likelihood::{ContrastModel, InterrogationSetting, MeasurementKind, MeasurementModel};
use crate::stats;

/// One ensemble: `copies` GHZ states of `n_particles` each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_particles: usize,
    pub copies: u32,
}

impl Ensemble {
    pub fn new(n_particles: usize, copies: u32) -> Self {
        Ensemble {
            n_particles,
            copies,
        }
    }
}

/// Resources and time-sequence parameters of an estimation protocol.
///
/// When `auxiliary_phase` is set, ensemble 0 carries φ₀ = π/2 (while the
/// interrogation time is below `t_max` in the adaptive loop) and every other
/// ensemble φ_k = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeScheme {
    pub ensembles: Vec<Ensemble>,
    pub kind: MeasurementKind,
    pub t_min: f64,
    pub t_max: f64,
    /// Time-sequence growth rate α.
    pub alpha: f64,
    /// Credible-interval factor g.
    pub g: f64,
    pub auxiliary_phase: bool,
}

/// One ensemble bound to a concrete measurement model and shot setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub model: MeasurementModel,
    pub setting: InterrogationSetting,
    pub copies: u32,
}

impl Channel {
    #[inline]
    pub fn plus_probability(&self, frequency: f64) -> f64 {
        self.model.plus_probability(&self.setting, frequency)
    }

    /// L₊ on the uniform grid `[lo, hi]` with `out.len()` points. Uses a
    /// rotation recurrence, re-seeded every 64 points to bound drift.
    pub fn plus_probability_on_grid(&self, lo: f64, hi: f64, out: &mut [f64]) {
        const BLOCK: usize = 64;
        let n = out.len();
        if n < 2 {
            out.iter_mut().for_each(|p| *p = self.plus_probability(lo));
            return;
        }
        let np = self.model.n_particles;
        let amp = self.model.amplitude();
        let dx = TAU * np as f64 * self.setting.interrogation_time * (hi - lo) / (n - 1) as f64;
        let (sd, cd) = dx.sin_cos();
        let sine = self.model.kind == MeasurementKind::SignReadout;
        for start in (0..n).step_by(BLOCK) {
            let f0 = lo + (hi - lo) * (start as f64 / (n - 1) as f64);
            let (mut s, mut c) = self.setting.fringe_argument(np, f0).sin_cos();
            for p in &mut out[start..(start + BLOCK).min(n)] {
                let fringe = if sine { s } else { c };
                *p = (0.5 * (1.0 + amp * fringe)).clamp(0.0, 1.0);
                (s, c) = (s * cd + c * sd, c * cd - s * sd);
            }
        }
    }

    /// ∂L₊/∂f.
    pub fn plus_probability_slope(&self, frequency: f64) -> f64 {
        let n = self.model.n_particles;
        let x = self.setting.fringe_argument(n, frequency);
        let dx = TAU * n as f64 * self.setting.interrogation_time;
        let d_fringe = match self.model.kind {
            MeasurementKind::Parity => -x.sin(),
            MeasurementKind::SignReadout => x.cos(),
        };
        0.5 * self.model.amplitude() * d_fringe * dx
    }
}

impl CascadeScheme {
    /// Builds a scheme with g derived from α so that the credible window
    /// 2gΔf matches the next fringe period.
    pub fn new(
        ensembles: Vec<Ensemble>,
        kind: MeasurementKind,
        t_min: f64,
        t_max: f64,
        alpha: f64,
        auxiliary_phase: bool,
    ) -> Result<Self> {
        let mut scheme = CascadeScheme {
            ensembles,
            kind,
            t_min,
            t_max,
            alpha,
            g: 1.0,
            auxiliary_phase,
        };
        scheme.validate_resources()?;
        if !(alpha >= 1.0) {
            return invalid(format!("alpha must be at least 1, got {alpha}"));
        }
        scheme.g = scheme.g_for_alpha(alpha);
        Ok(scheme)
    }

    /// Two identical N-particle ensembles splitting `total_copies` as
    /// ⌊M/2⌋ (with auxiliary phase) and the remainder.
    pub fn individual_pair(
        n_particles: usize,
        total_copies: u32,
        kind: MeasurementKind,
        t_min: f64,
        t_max: f64,
        alpha: f64,
    ) -> Result<Self> {
        if total_copies < 2 {
            return invalid("a pair needs at least two copies");
        }
        let m0 = total_copies / 2;
        CascadeScheme::new(
            vec![
                Ensemble::new(n_particles, m0),
                Ensemble::new(n_particles, total_copies - m0),
            ],
            kind,
            t_min,
            t_max,
            alpha,
            true,
        )
    }

    /// Replaces g (and the α it implies).
    pub fn with_credible_factor(mut self, g: f64) -> Result<Self> {
        if !(g > 0.0) {
            return invalid(format!("g must be positive, got {g}"));
        }
        self.g = g;
        self.alpha = self.alpha_from_resources()?;
        Ok(self)
    }

    fn validate_resources(&self) -> Result<()> {
        if self.ensembles.is_empty() {
            return invalid("scheme needs at least one ensemble");
        }
        if let Some(e) = self.ensembles.iter().find(|e| e.n_particles < 1 || e.copies < 1) {
            return invalid(format!("ensemble {e:?} needs N ≥ 1 and M ≥ 1"));
        }
        if !(self.t_min > 0.0 && self.t_min <= self.t_max) {
            return invalid(format!(
                "need 0 < t_min ≤ t_max, got t_min={} t_max={}",
                self.t_min, self.t_max
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_resources()?;
        if !(self.alpha >= 1.0) {
            return invalid(format!("alpha must be at least 1, got {}", self.alpha));
        }
        if !(self.g > 0.0) {
            return invalid(format!("g must be positive, got {}", self.g));
        }
        Ok(())
    }

    pub fn smallest_particle_number(&self) -> usize {
        self.ensembles[0].n_particles
    }

    /// N_t = Σ M_k N_k.
    pub fn total_particles(&self) -> f64 {
        self.ensembles
            .iter()
            .map(|e| e.copies as f64 * e.n_particles as f64)
            .sum()
    }

    /// κ√N_t = √(Σ M_k N_k²).
    pub fn fisher_weight(&self) -> f64 {
        self.ensembles
            .iter()
            .map(|e| e.copies as f64 * (e.n_particles * e.n_particles) as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// κ = √(Σ M_k N_k² / N_t).
    pub fn kappa(&self) -> f64 {
        self.fisher_weight() / self.total_particles().sqrt()
    }

    /// α = κπ√N_t / (g·N₀).
    ///
    /// Reduces to √M·π/g for a pair of identical N-particle ensembles.
    pub fn alpha_from_resources(&self) -> Result<f64> {
        if !(self.g > 0.0) {
            return invalid(format!("g must be positive, got {}", self.g));
        }
        Ok(PI * self.fisher_weight() / (self.g * self.smallest_particle_number() as f64))
    }

    fn g_for_alpha(&self, alpha: f64) -> f64 {
        PI * self.fisher_weight() / (alpha * self.smallest_particle_number() as f64)
    }

    /// Precomputed time sequence: T_min at j = 0, then
    /// min(T_min·α·(1+α²)^((j−1)/2), T_max).
    pub fn interrogation_time(&self, step: usize) -> f64 {
        if step == 0 {
            return self.t_min;
        }
        let a = self.alpha;
        let grown = self.t_min * a * (1.0 + a * a).powf((step as f64 - 1.0) / 2.0);
        grown.min(self.t_max)
    }

    pub fn time_sequence(&self, steps: usize) -> Vec<f64> {
        (0..steps).map(|j| self.interrogation_time(j)).collect()
    }

    /// Measured-variance update min(1/(2gN₀Δf), T_max). No floor at T_min.
    pub fn interrogation_time_realistic(&self, previous_delta_f: f64) -> Result<f64> {
        if !(previous_delta_f > 0.0) {
            return invalid(format!(
                "previous deviation must be positive, got {previous_delta_f}"
            ));
        }
        let n0 = self.smallest_particle_number() as f64;
        Ok((1.0 / (2.0 * self.g * n0 * previous_delta_f)).min(self.t_max))
    }

    /// 1/(2πκ√N_t·√ΣT_i²).
    pub fn theoretical_deviation(&self, times: &[f64]) -> Result<f64> {
        if times.is_empty() {
            return invalid("need at least one interrogation time");
        }
        let sum_sq: f64 = times.iter().map(|t| t * t).sum();
        Ok(1.0 / (TAU * self.fisher_weight() * sum_sq.sqrt()))
    }

    /// Closed-form deviation versus total interrogation time `t` on the
    /// growing part of the sequence: 1/(2πκ√N_t·[T_min + (t − T_min)(√(1+α²) − 1)/α]).
    /// Summing the geometric sequence gives this factor; it equals the often
    /// quoted √(1+α⁻²) − 1 only at α = 1.
    pub fn deviation_growing_regime(&self, total_time: f64) -> f64 {
        let a = self.alpha;
        let denom = self.t_min + (total_time - self.t_min) * ((1.0 + a * a).sqrt() - 1.0) / a;
        1.0 / (TAU * self.fisher_weight() * denom)
    }

    /// Closed-form deviation once the sequence is capped: 1/(2πκ√N_t·√(t·T_max)).
    pub fn deviation_capped_regime(&self, total_time: f64) -> f64 {
        1.0 / (TAU * self.fisher_weight() * (total_time * self.t_max).sqrt())
    }

    /// Auxiliary phase of ensemble `k`.
    pub fn phase_of(&self, k: usize, auxiliary_on: bool) -> f64 {
        if k == 0 && self.auxiliary_phase && auxiliary_on {
            FRAC_PI_2
        } else {
            0.0
        }
    }

    /// Binds every ensemble to a measurement at LO frequency `lo_frequency`
    /// and interrogation time `time`, with contrasts from `contrast`.
    pub fn channels(
        &self,
        lo_frequency: f64,
        time: f64,
        auxiliary_on: bool,
        contrast: &ContrastModel,
    ) -> Result<Vec<Channel>> {
        self.ensembles
            .iter()
            .enumerate()
            .map(|(k, e)| {
                Ok(Channel {
                    model: MeasurementModel::new(
                        self.kind,
                        e.n_particles,
                        contrast.contrast(e.n_particles, time),
                    )?,
                    setting: InterrogationSetting::new(
                        lo_frequency,
                        time,
                        self.phase_of(k, auxiliary_on),
                    )?,
                    copies: e.copies,
                })
            })
            .collect()
    }

    /// Channels for an explicit setting whose auxiliary phase applies to
    /// ensemble 0 and a fixed contrast for every ensemble.
    pub fn channels_for_setting(&self, setting: &InterrogationSetting, contrast: f64) -> Result<Vec<Channel>> {
        self.ensembles
            .iter()
            .enumerate()
            .map(|(k, e)| {
                Ok(Channel {
                    model: MeasurementModel::new(self.kind, e.n_particles, contrast)?,
                    setting: setting.with_phase(if k == 0 { setting.auxiliary_phase } else { 0.0 }),
                    copies: e.copies,
                })
            })
            .collect()
    }
}

/// Copies per ensemble of an exponential cascade N_k = 2^{k−1}N₀ (k ≥ 1):
/// M_k = M_K + v(K − k) for k ≥ 2, and M_K + v(K − 1) split between
/// ensembles 0 and 1 as ⌊·/2⌋ and the remainder.
pub fn exponential_cascade(n0: usize, k_max: usize, last_copies: u32, step: u32) -> Result<Vec<Ensemble>> {
    if k_max < 1 || n0 < 1 || last_copies < 1 {
        return invalid("cascade needs K ≥ 1, N₀ ≥ 1 and M_K ≥ 1");
    }
    let base = last_copies + step * (k_max as u32 - 1);
    let m0 = base / 2;
    if m0 == 0 {
        return invalid("first pair of the cascade has fewer than two copies");
    }
    let mut out = vec![Ensemble::new(n0, m0), Ensemble::new(n0, base - m0)];
    for k in 2..=k_max {
        out.push(Ensemble::new(
            n0 << (k - 1),
            last_copies + step * (k_max - k) as u32,
        ));
    }
    Ok(out)
}

/// Fisher information and Cramér-Rao bound of a single-shot frequentist
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    /// F(f_c) in 1/Hz².
    pub fisher: f64,
    /// d f̄_est / d f_c by central difference.
    pub estimator_slope: f64,
    /// √((d f̄_est/d f_c)² / F) in Hz.
    pub crlb: f64,
}

/// Fisher information of the joint outcome distribution (by exhaustive
/// enumeration) and the Cramér-Rao bound for the grid-posterior-mean
/// estimator built on `prior`.
pub fn fisher_and_crlb(
    scheme: &CascadeScheme,
    setting: &InterrogationSetting,
    contrast: f64,
    prior: &PosteriorGrid,
    true_frequency: f64,
) -> Result<FisherReport> {
    let channels = scheme.channels_for_setting(setting, contrast)?;
    let report = stats::enumerate_outcomes(&channels, prior, true_frequency, 0.0)?;
    Ok(FisherReport {
        fisher: report.fisher,
        estimator_slope: report.estimator_slope,
        crlb: report.crlb(),
    })
}
