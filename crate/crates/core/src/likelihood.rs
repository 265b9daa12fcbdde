//! Analytic Ramsey likelihoods for GHZ probes.
//!
//! Parity readout follows the cosine fringe
//! `L_u = ½{1 + u·(−1)^N·C·cos[2πNT(f − f_L) + φ]}`, interaction-based sign
//! readout the sine fringe `L_u = ½{1 + u·ξ·C·sin[2πNT(f − f_L) + φ]}` with
//! `ξ = (−1)^⌈N/2+1⌉`. Both agree with [`crate::spin_oracle`] to round-off.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{invalid, Result};
use crate::spin_oracle::{NoiseModel, Observable, Readout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Parity,
    SignReadout,
}

impl MeasurementKind {
    /// Fringe sign ξ(N) ∈ {−1, +1}.
    pub fn xi(self, n_particles: usize) -> f64 {
        let exponent = match self {
            MeasurementKind::Parity => n_particles,
            // ⌈N/2 + 1⌉ for both parities of N
            MeasurementKind::SignReadout => (n_particles + 3) / 2,
        };
        if exponent % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Readout and observable realising this kind in the spin oracle.
    pub fn oracle_protocol(self) -> (Readout, Observable) {
        match self {
            MeasurementKind::Parity => (Readout::Parity, Observable::Parity),
            MeasurementKind::SignReadout => (Readout::Interaction, Observable::Sign),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub kind: MeasurementKind,
    pub n_particles: usize,
    pub contrast: f64,
}

impl MeasurementModel {
    pub fn new(kind: MeasurementKind, n_particles: usize, contrast: f64) -> Result<Self> {
        if n_particles < 1 {
            return invalid("n_particles must be at least 1");
        }
        if !(0.0..=1.0).contains(&contrast) {
            return invalid(format!("contrast must lie in [0, 1], got {contrast}"));
        }
        Ok(MeasurementModel {
            kind,
            n_particles,
            contrast,
        })
    }

    pub fn xi(&self) -> f64 {
        self.kind.xi(self.n_particles)
    }

    /// Signed fringe amplitude ξ·C.
    pub fn amplitude(&self) -> f64 {
        self.xi() * self.contrast
    }

    /// The oscillating factor of the fringe at argument `x`.
    #[inline]
    pub fn fringe(&self, x: f64) -> f64 {
        match self.kind {
            MeasurementKind::Parity => x.cos(),
            MeasurementKind::SignReadout => x.sin(),
        }
    }

    /// Probability of `u = +1`. Infallible fast path of [`single_shot`].
    #[inline]
    pub fn plus_probability(&self, setting: &InterrogationSetting, frequency: f64) -> f64 {
        let x = setting.fringe_argument(self.n_particles, frequency);
        (0.5 * (1.0 + self.amplitude() * self.fringe(x))).clamp(0.0, 1.0)
    }
}

/// LO frequency, interrogation time and auxiliary phase of one Ramsey shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterrogationSetting {
    pub lo_frequency: f64,
    pub interrogation_time: f64,
    pub auxiliary_phase: f64,
}

impl InterrogationSetting {
    pub fn new(lo_frequency: f64, interrogation_time: f64, auxiliary_phase: f64) -> Result<Self> {
        if !(interrogation_time > 0.0) {
            return invalid(format!(
                "interrogation time must be positive, got {interrogation_time}"
            ));
        }
        Ok(InterrogationSetting {
            lo_frequency,
            interrogation_time,
            auxiliary_phase,
        })
    }

    /// 2πNT(f − f_L) + φ.
    #[inline]
    pub fn fringe_argument(&self, n_particles: usize, frequency: f64) -> f64 {
        TAU * n_particles as f64 * self.interrogation_time * (frequency - self.lo_frequency)
            + self.auxiliary_phase
    }

    pub fn with_phase(&self, auxiliary_phase: f64) -> Self {
        InterrogationSetting {
            auxiliary_phase,
            ..*self
        }
    }
}

/// Probability of outcome `u ∈ {+1, −1}` for a candidate clock frequency.
pub fn single_shot(
    model: &MeasurementModel,
    setting: &InterrogationSetting,
    candidate_frequency: f64,
    outcome: i8,
) -> Result<f64> {
    let plus = model.plus_probability(setting, candidate_frequency);
    match outcome {
        1 => Ok(plus),
        -1 => Ok(1.0 - plus),
        other => invalid(format!("outcome must be +1 or -1, got {other}")),
    }
}

/// ln C(n, k).
pub fn ln_choose(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// μ·ln L₊ + (M − μ)·ln L₋, with 0·ln 0 = 0. The binomial coefficient is
/// omitted since it does not depend on frequency.
#[inline]
pub fn log_binomial_kernel(plus_probability: f64, copies: u32, successes: u32) -> f64 {
    let mut acc = 0.0;
    if successes > 0 {
        acc += successes as f64 * plus_probability.ln();
    }
    let failures = copies - successes;
    if failures > 0 {
        acc += failures as f64 * (1.0 - plus_probability).ln();
    }
    acc
}

/// Probability of `successes` outcomes `u = +1` among `copies` shots.
pub fn binomial(
    model: &MeasurementModel,
    setting: &InterrogationSetting,
    candidate_frequency: f64,
    copies: u32,
    successes: u32,
) -> Result<f64> {
    if successes > copies {
        return invalid(format!("successes {successes} exceed copies {copies}"));
    }
    let plus = model.plus_probability(setting, candidate_frequency);
    Ok((ln_choose(copies, successes) + log_binomial_kernel(plus, copies, successes)).exp())
}

/// Overall contrast e^{−γTN²/2}·C_σd under dephasing and detection noise.
pub fn contrast_under_noise(
    n_particles: usize,
    time: f64,
    noise: &NoiseModel,
    base_detection_contrast: f64,
) -> Result<f64> {
    if !(time >= 0.0) {
        return invalid(format!("time must be non-negative, got {time}"));
    }
    noise.validate()?;
    if !(0.0..=1.0).contains(&base_detection_contrast) {
        return invalid(format!(
            "detection contrast must lie in [0, 1], got {base_detection_contrast}"
        ));
    }
    let n = n_particles as f64;
    Ok((-noise.gamma * time * n * n / 2.0).exp() * base_detection_contrast)
}

/// Dephasing rate and detection contrast as used by the estimation loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastModel {
    /// Collective dephasing rate γ (1/s).
    pub gamma: f64,
    /// Contrast factor C_σd from detection noise.
    pub detection_contrast: f64,
}

impl Default for ContrastModel {
    fn default() -> Self {
        ContrastModel::IDEAL
    }
}

impl ContrastModel {
    pub const IDEAL: ContrastModel = ContrastModel {
        gamma: 0.0,
        detection_contrast: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        contrast_under_noise(1, 0.0, &NoiseModel::new(self.gamma, 0.0)?, self.detection_contrast)
            .map(|_| ())
    }

    pub fn contrast(&self, n_particles: usize, time: f64) -> f64 {
        let n = n_particles as f64;
        (-self.gamma * time * n * n / 2.0).exp() * self.detection_contrast
    }
}
