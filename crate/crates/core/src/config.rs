//! TOML experiment configuration.
//!
//! A config names one or more schemes (`[[scheme]]` tables) plus shared run
//! settings and optional per-command sections. Every quantity is in SI units
//! (Hz, s); frequencies other than `clock_frequency` are offsets in Hz from
//! the nominal clock frequency.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::abqfe::{CycleProtocol, Policy, RunOptions};
use crate::bayes::DEFAULT_GRID_POINTS;
use crate::error::{Error, Result};
use crate::likelihood::{ContrastModel, MeasurementKind};
use crate::scheme::{CascadeScheme, Ensemble};

/// ⁸⁸Sr clock transition, Hz.
pub const STRONTIUM_CLOCK_FREQUENCY: f64 = 4.295e14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_clock_frequency")]
    pub clock_frequency: f64,
    /// f_c as an offset from `clock_frequency`.
    #[serde(default)]
    pub true_frequency: f64,
    /// First LO frequency, same offset convention.
    #[serde(default)]
    pub initial_lo: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Measurements per adaptive cycle.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(rename = "scheme")]
    pub schemes: Vec<SchemeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_range: Option<DynamicRangeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allan: Option<AllanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sweep: Option<NoiseSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_check: Option<OracleCheckConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Collective dephasing rate γ, 1/s.
    #[serde(default)]
    pub gamma: f64,
    /// Detection-noise contrast C_σd.
    #[serde(default = "one")]
    pub detection_contrast: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            gamma: 0.0,
            detection_contrast: 1.0,
        }
    }
}

impl From<NoiseConfig> for ContrastModel {
    fn from(n: NoiseConfig) -> Self {
        ContrastModel {
            gamma: n.gamma,
            detection_contrast: n.detection_contrast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: MeasurementKind,
    /// `[N, M]` pairs; the first ensemble carries the auxiliary phase.
    pub ensembles: Vec<(usize, u32)>,
    pub t_min: f64,
    pub t_max: f64,
    /// Growth rate α; mutually exclusive with `credible_factor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Credible-interval factor g, from which α follows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credible_factor: Option<f64>,
    #[serde(default = "yes")]
    pub auxiliary_phase: bool,
    /// Prior width for baselines without auxiliary phase, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_sigma: Option<f64>,
}

impl SchemeConfig {
    /// Builds the scheme, with `alpha` overriding the configured rate.
    pub fn build(&self, alpha: Option<f64>) -> Result<CascadeScheme> {
        let ensembles = self.ensembles.iter().map(|&(n, m)| Ensemble::new(n, m)).collect();
        let make = |a: f64| CascadeScheme::new(ensembles, self.kind, self.t_min, self.t_max, a, self.auxiliary_phase);
        match (alpha, self.alpha, self.credible_factor) {
            (Some(a), _, _) => make(a),
            (None, Some(_), Some(_)) => Err(Error::Config(format!(
                "scheme '{}': set either alpha or credible_factor, not both",
                self.name
            ))),
            (None, _, Some(g)) => make(1.0)?.with_credible_factor(g),
            (None, a, None) => make(a.unwrap_or(1.0)),
        }
    }

    /// The configured α (after resolving `credible_factor`).
    pub fn resolved_alpha(&self) -> Result<f64> {
        Ok(self.build(None)?.alpha)
    }
}

/// Which cycle protocol a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    Abqfe,
    /// Fixed T = t_min, repeated to the adaptive cycle's duration.
    TMin,
    /// Fixed T = t_max, repeated to the adaptive cycle's duration.
    TMax,
}

impl ProtocolName {
    pub fn label(self) -> &'static str {
        match self {
            ProtocolName::Abqfe => "abqfe",
            ProtocolName::TMin => "t-min",
            ProtocolName::TMax => "t-max",
        }
    }

    /// Resolves to a cycle protocol. Fixed baselines get as many repetitions
    /// as fit in the adaptive cycle's interrogation time (at least one).
    pub fn protocol(self, scheme: &CascadeScheme, steps: usize, gaussian_sigma: Option<f64>) -> CycleProtocol {
        let fixed = |time: f64| {
            let budget: f64 = scheme.time_sequence(steps).iter().sum();
            CycleProtocol::Fixed {
                time,
                repetitions: ((budget / time).round() as usize).max(1),
                gaussian_sigma,
            }
        };
        match self {
            ProtocolName::Abqfe => CycleProtocol::Adaptive { steps },
            ProtocolName::TMin => fixed(scheme.t_min),
            ProtocolName::TMax => fixed(scheme.t_max),
        }
    }
}

fn all_protocols() -> Vec<ProtocolName> {
    vec![ProtocolName::Abqfe, ProtocolName::TMin, ProtocolName::TMax]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    /// α values to run; empty means each scheme's own.
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Also run the fixed T_min and T_max baselines.
    #[serde(default = "yes")]
    pub baselines: bool,
    /// Dead time per measurement for the sensitivity column, s.
    #[serde(default = "default_dead_time")]
    pub dead_time: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            alphas: Vec::new(),
            baselines: true,
            dead_time: default_dead_time(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicRangeConfig {
    #[serde(default = "default_detuning_points")]
    pub points: usize,
    /// Half-span of the δ grid, Hz; defaults to 1/(2·N₀·t_min).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<f64>,
    #[serde(default = "all_protocols")]
    pub protocols: Vec<ProtocolName>,
    /// Usable range: |δ| where RMSE stays below `factor` × floor.
    #[serde(default = "two")]
    pub factor: f64,
    /// Outcome probability below which exhaustive enumeration prunes a branch.
    #[serde(default = "default_prune")]
    pub prune: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllanConfig {
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    /// Dead time per measurement, s.
    #[serde(default = "default_dead_time")]
    pub dead_time: f64,
    #[serde(default = "all_protocols")]
    pub protocols: Vec<ProtocolName>,
    /// Largest averaging factor is cycles / divisor.
    #[serde(default = "default_divisor")]
    pub max_factor_divisor: usize,
}

impl Default for AllanConfig {
    fn default() -> Self {
        AllanConfig {
            cycles: default_cycles(),
            dead_time: default_dead_time(),
            protocols: all_protocols(),
            max_factor_divisor: default_divisor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweepConfig {
    /// Noise settings; the first is the reference for dB offsets.
    pub points: Vec<NoiseConfig>,
    /// Run lock simulations (with the `[allan]` settings) at each point.
    #[serde(default = "yes")]
    pub allan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckConfig {
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default = "default_phases")]
    pub phases: usize,
    /// Interrogation time of the equivalence sweep, s.
    #[serde(default = "default_oracle_time")]
    pub time: f64,
    /// Dephasing rates for the exponent fit, 1/s.
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    /// Detection-noise widths for the metrological-gain table.
    #[serde(default = "default_sigma_d")]
    pub sigma_d: Vec<f64>,
    /// Particle number of the metrological-gain table.
    #[serde(default = "default_gain_particles")]
    pub gain_particles: usize,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        OracleCheckConfig {
            max_n: default_max_n(),
            phases: default_phases(),
            time: default_oracle_time(),
            gammas: default_gammas(),
            sigma_d: default_sigma_d(),
            gain_particles: default_gain_particles(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; syntax and type errors carry line/column diagnostics.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.clock_frequency > 0.0) {
            return fail(format!("clock_frequency must be positive, got {}", self.clock_frequency));
        }
        if self.replicas < 1 {
            return fail("replicas must be at least 1".into());
        }
        if self.steps < 1 {
            return fail("steps must be at least 1".into());
        }
        if self.grid_points < 2 {
            return fail("grid_points must be at least 2".into());
        }
        if self.schemes.is_empty() {
            return fail("at least one [[scheme]] is required".into());
        }
        ContrastModel::from(self.noise).validate()?;
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].iter().any(|o| o.name == s.name) {
                return fail(format!("duplicate scheme name '{}'", s.name));
            }
            s.build(None).map_err(|e| Error::Config(format!("scheme '{}': {e}", s.name)))?;
            if !s.auxiliary_phase && s.gaussian_sigma.is_none() {
                return fail(format!(
                    "scheme '{}': gaussian_sigma is required without auxiliary phase",
                    s.name
                ));
            }
        }
        if let Some(sc) = &self.scaling {
            if let Some(a) = sc.alphas.iter().find(|a| !(**a >= 1.0)) {
                return fail(format!("scaling.alphas: alpha must be at least 1, got {a}"));
            }
        }
        if let Some(dr) = &self.dynamic_range {
            if dr.points < 1 || dr.protocols.is_empty() || !(dr.factor > 1.0) {
                return fail("dynamic_range needs points ≥ 1, a protocol and factor > 1".into());
            }
        }
        if let Some(a) = &self.allan {
            if a.cycles < 4 || a.max_factor_divisor < 2 || !(a.dead_time >= 0.0) {
                return fail("allan needs cycles ≥ 4, max_factor_divisor ≥ 2, dead_time ≥ 0".into());
            }
        }
        if let Some(ns) = &self.noise_sweep {
            if ns.points.is_empty() {
                return fail("noise_sweep.points must not be empty".into());
            }
            for p in &ns.points {
                ContrastModel::from(*p).validate()?;
            }
        }
        if let Some(o) = &self.oracle_check {
            if o.max_n < 1 || o.phases < 1 || o.gain_particles < 1 || !(o.time > 0.0) {
                return fail("oracle_check needs max_n, phases, gain_particles ≥ 1 and time > 0".into());
            }
        }
        Ok(())
    }

    pub fn run_options(&self) -> RunOptions {
        self.run_options_with(self.noise)
    }

    pub fn run_options_with(&self, noise: NoiseConfig) -> RunOptions {
        RunOptions {
            policy: self.policy,
            contrast: noise.into(),
            grid_points: self.grid_points,
        }
    }
}

fn default_clock_frequency() -> f64 {
    STRONTIUM_CLOCK_FREQUENCY
}
fn default_replicas() -> usize {
    5000
}
fn default_steps() -> usize {
    13
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_kind() -> MeasurementKind {
    MeasurementKind::SignReadout
}
fn default_detuning_points() -> usize {
    41
}
fn default_prune() -> f64 {
    1e-12
}
fn default_cycles() -> usize {
    1000
}
fn default_dead_time() -> f64 {
    1.257
}
fn default_divisor() -> usize {
    8
}
fn default_max_n() -> usize {
    8
}
fn default_phases() -> usize {
    32
}
fn default_oracle_time() -> f64 {
    1e-3
}
fn default_gammas() -> Vec<f64> {
    vec![0.5, 1.0, 2.547, 5.0]
}
fn default_sigma_d() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_gain_particles() -> usize {
    4
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn yes() -> bool {
    true
}
