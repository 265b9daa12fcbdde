//! Adaptive estimation loop, fixed-time baselines and the clock-lock driver.
//!
//! Random streams: a run seeded with `(master_seed, replica)` uses
//! `ChaCha8Rng::seed_from_u64(master_seed)` switched to stream `replica`, so a
//! replica's draws do not depend on how replicas are scheduled across threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::bayes::{self, PosteriorGrid, DEFAULT_GRID_POINTS};
use crate::error::{invalid, Error, Result};
use crate::likelihood::{log_binomial_kernel, ContrastModel, InterrogationSetting};
use crate::scheme::{CascadeScheme, Channel};

/// How T_j is chosen after the first step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Policy {
    /// Closed-form sequence from α.
    #[default]
    Precomputed,
    /// T from the previous posterior deviation; optionally floored at T_min.
    MeasuredVariance {
        #[serde(default)]
        clamp_to_t_min: bool,
    },
}

/// Settings shared by every run of the estimation loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub policy: Policy,
    pub contrast: ContrastModel,
    pub grid_points: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            policy: Policy::Precomputed,
            contrast: ContrastModel::IDEAL,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// State of the adaptive loop after its last completed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbqfeState {
    /// Index of the last completed step.
    pub step: usize,
    /// LO frequency used at the last step.
    pub lo_frequency: f64,
    /// Posterior after the last step (the prior of the next one).
    pub prior: PosteriorGrid,
    pub interrogation_time: f64,
    pub phase: f64,
    pub estimates: Vec<f64>,
    pub deviations: Vec<f64>,
    pub times: Vec<f64>,
    pub lo_history: Vec<f64>,
    /// Steps whose update underflowed; the prior was kept unchanged.
    pub degenerate_steps: Vec<usize>,
}

impl AbqfeState {
    pub fn final_estimate(&self) -> f64 {
        *self.estimates.last().expect("state always holds one step")
    }

    pub fn final_deviation(&self) -> f64 {
        *self.deviations.last().expect("state always holds one step")
    }

    pub fn total_time(&self) -> f64 {
        self.times.iter().sum()
    }
}

/// Per-replica generator: master seed, stream = replica index.
pub fn replica_rng(master_seed: u64, replica: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

/// Draws μ_k ~ Binomial(M_k, L₊(f_c)) for every channel.
pub fn sample_channels<R: Rng + ?Sized>(channels: &[Channel], true_frequency: f64, rng: &mut R) -> Vec<u32> {
    channels
        .iter()
        .map(|c| {
            let p = c.plus_probability(true_frequency).clamp(0.0, 1.0);
            Binomial::new(c.copies as u64, p)
                .expect("probability clamped to [0, 1]")
                .sample(rng) as u32
        })
        .collect()
}

/// Outcome counts for `scheme` at `setting` (auxiliary phase on ensemble 0),
/// with contrasts from `contrast` at the setting's interrogation time.
pub fn sample_outcomes(
    scheme: &CascadeScheme,
    setting: &InterrogationSetting,
    contrast: &ContrastModel,
    true_frequency: f64,
    rng_seed: u64,
) -> Result<Vec<u32>> {
    let channels: Vec<Channel> = scheme
        .channels(setting.lo_frequency, setting.interrogation_time, false, contrast)?
        .into_iter()
        .enumerate()
        .map(|(k, mut c)| {
            if k == 0 {
                c.setting.auxiliary_phase = setting.auxiliary_phase;
            }
            c
        })
        .collect();
    let mut rng = replica_rng(rng_seed, 0);
    Ok(sample_channels(&channels, true_frequency, &mut rng))
}

/// Joint log-likelihood of observed counts, up to frequency-independent terms.
pub fn joint_log_likelihood(channels: &[Channel], outcomes: &[u32], frequency: f64) -> f64 {
    channels
        .iter()
        .zip(outcomes)
        .map(|(c, &mu)| log_binomial_kernel(c.plus_probability(frequency), c.copies, mu))
        .sum()
}

/// Joint likelihood of observed counts on every point of `grid`.
pub fn joint_likelihood_on_grid(channels: &[Channel], outcomes: &[u32], grid: &PosteriorGrid) -> Vec<f64> {
    let n = grid.points();
    let mut lik = vec![1.0; n];
    let mut p = vec![0.0; n];
    for (c, &mu) in channels.iter().zip(outcomes) {
        c.plus_probability_on_grid(grid.lo(), grid.hi(), &mut p);
        let fail = (c.copies - mu) as i32;
        let mu = mu as i32;
        for (l, &q) in lik.iter_mut().zip(&p) {
            *l *= q.powi(mu) * (1.0 - q).powi(fail);
        }
    }
    lik
}

/// Bayes update from sampled counts; falls back to log space when the
/// linear-space product underflows.
fn update_from_counts(prior: &PosteriorGrid, channels: &[Channel], outcomes: &[u32]) -> Result<PosteriorGrid> {
    let lik = joint_likelihood_on_grid(channels, outcomes, prior);
    match bayes::update_with_values(prior, &lik) {
        Err(Error::DegeneratePosterior { .. }) => {
            bayes::update_log(prior, |f| joint_log_likelihood(channels, outcomes, f))
        }
        other => other,
    }
}

struct Loop {
    state: Option<AbqfeState>,
    prior: PosteriorGrid,
}

impl Loop {
    fn new(prior: PosteriorGrid) -> Self {
        Loop { state: None, prior }
    }

    fn estimate(&self) -> f64 {
        match &self.state {
            Some(s) => s.final_estimate(),
            None => bayes::estimate(&self.prior).mean,
        }
    }

    fn measure<R: Rng + ?Sized>(
        &mut self,
        step: usize,
        channels: &[Channel],
        true_frequency: f64,
        rng: &mut R,
    ) -> Result<()> {
        let outcomes = sample_channels(channels, true_frequency, rng);
        let (posterior, degenerate) =
            match update_from_counts(&self.prior, channels, &outcomes) {
                Ok(p) => (p, false),
                Err(Error::DegeneratePosterior { .. }) => (self.prior.clone(), true),
                Err(e) => return Err(e),
            };
        let est = bayes::estimate(&posterior);
        let lo = channels[0].setting.lo_frequency;
        let time = channels[0].setting.interrogation_time;
        let phase = channels[0].setting.auxiliary_phase;
        let state = self.state.get_or_insert_with(|| AbqfeState {
            step,
            lo_frequency: lo,
            prior: PosteriorGrid::placeholder(),
            interrogation_time: time,
            phase,
            estimates: Vec::new(),
            deviations: Vec::new(),
            times: Vec::new(),
            lo_history: Vec::new(),
            degenerate_steps: Vec::new(),
        });
        state.step = step;
        state.lo_frequency = lo;
        state.interrogation_time = time;
        state.phase = phase;
        state.estimates.push(est.mean);
        state.deviations.push(est.std_dev);
        state.times.push(time);
        state.lo_history.push(lo);
        if degenerate {
            state.degenerate_steps.push(step);
        }
        self.prior = posterior;
        Ok(())
    }

    fn finish(self) -> AbqfeState {
        let mut state = self.state.expect("loop ran at least one step");
        state.prior = self.prior;
        state
    }
}

/// Runs `steps` measurements of the adaptive loop (at least one).
///
/// Per step: choose T_j; if T_min < T_j < T_max re-window the prior to a
/// window of length 1/(N₀T_j) around the current estimate; set the LO to
/// the estimate; φ₀ = π/2 while T_j < T_max; sample and update.
pub fn run_abqfe<R: Rng + ?Sized>(
    scheme: &CascadeScheme,
    true_frequency: f64,
    initial_lo: f64,
    steps: usize,
    options: &RunOptions,
    rng: &mut R,
) -> Result<AbqfeState> {
    scheme.validate()?;
    if steps == 0 {
        return invalid("need at least one measurement step");
    }
    let n0 = scheme.smallest_particle_number() as f64;
    let half = 0.5 / (n0 * scheme.t_min);
    let mut lp = Loop::new(bayes::uniform_prior(
        initial_lo - half,
        initial_lo + half,
        options.grid_points,
    )?);

    let mut f_est = initial_lo;
    for j in 0..steps {
        let time = match (options.policy, &lp.state) {
            (Policy::Precomputed, _) | (_, None) => scheme.interrogation_time(j),
            (Policy::MeasuredVariance { clamp_to_t_min }, Some(s)) => {
                let dev = s.final_deviation();
                // a zero deviation means the grid has collapsed; stay at T_max
                let t = if dev > 0.0 {
                    scheme.interrogation_time_realistic(dev)?
                } else {
                    scheme.t_max
                };
                if clamp_to_t_min {
                    t.max(scheme.t_min)
                } else {
                    t
                }
            }
        };
        if j > 0 {
            f_est = lp.estimate();
        }
        if scheme.t_min < time && time < scheme.t_max {
            let half = 0.5 / (n0 * time);
            lp.prior = bayes::rewindow(&lp.prior, f_est - half, f_est + half)?;
        }
        let channels = scheme.channels(f_est, time, time < scheme.t_max, &options.contrast)?;
        lp.measure(j, &channels, true_frequency, rng)?;
    }
    Ok(lp.finish())
}

/// Fixed-time frequentist baseline: `repetitions` measurements at `time`
/// with the LO held at `initial_lo` and no re-windowing. With the scheme's
/// auxiliary phase enabled φ₀ = π/2 and the prior is flat; otherwise the
/// prior is Gaussian with `gaussian_sigma`.
#[allow(clippy::too_many_arguments)]
pub fn run_frequentist_baseline<R: Rng + ?Sized>(
    scheme: &CascadeScheme,
    true_frequency: f64,
    initial_lo: f64,
    time: f64,
    repetitions: usize,
    gaussian_sigma: Option<f64>,
    options: &RunOptions,
    rng: &mut R,
) -> Result<AbqfeState> {
    scheme.validate()?;
    if repetitions == 0 {
        return invalid("need at least one repetition");
    }
    if !(time > 0.0) {
        return invalid(format!("interrogation time must be positive, got {time}"));
    }
    let prior = baseline_prior(scheme, initial_lo, time, gaussian_sigma, options.grid_points)?;
    let mut lp = Loop::new(prior);
    for j in 0..repetitions {
        let channels = scheme.channels(initial_lo, time, true, &options.contrast)?;
        lp.measure(j, &channels, true_frequency, rng)?;
    }
    Ok(lp.finish())
}

/// Channels of a fixed-time baseline with its repetitions merged. The LO
/// and setting are the same for every repetition, so `repetitions` shots of
/// M copies carry exactly the likelihood of one shot of M·repetitions.
pub fn merged_baseline_channels(
    scheme: &CascadeScheme,
    initial_lo: f64,
    time: f64,
    repetitions: usize,
    contrast: &ContrastModel,
) -> Result<Vec<Channel>> {
    let reps = u32::try_from(repetitions)
        .ok()
        .filter(|&r| r > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("bad repetition count {repetitions}")))?;
    let mut channels = scheme.channels(initial_lo, time, true, contrast)?;
    for c in &mut channels {
        c.copies = c.copies.checked_mul(reps).ok_or_else(|| {
            Error::InvalidArgument("merged copy count overflows".into())
        })?;
    }
    Ok(channels)
}

/// Prior for a fixed-time estimate: full fringe period 1/(N₀T) around
/// `center`, flat with the auxiliary phase, Gaussian without.
pub fn baseline_prior(
    scheme: &CascadeScheme,
    center: f64,
    time: f64,
    gaussian_sigma: Option<f64>,
    points: usize,
) -> Result<PosteriorGrid> {
    let half = 0.5 / (scheme.smallest_particle_number() as f64 * time);
    if scheme.auxiliary_phase {
        bayes::uniform_prior(center - half, center + half, points)
    } else {
        match gaussian_sigma {
            Some(sigma) => bayes::gaussian_prior(center - half, center + half, center, sigma, points),
            None => invalid("a scheme without auxiliary phase needs a Gaussian prior width"),
        }
    }
}

/// What a single lock cycle runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CycleProtocol {
    Adaptive {
        steps: usize,
    },
    Fixed {
        time: f64,
        repetitions: usize,
        #[serde(default)]
        gaussian_sigma: Option<f64>,
    },
}

impl CycleProtocol {
    pub fn run<R: Rng + ?Sized>(
        &self,
        scheme: &CascadeScheme,
        true_frequency: f64,
        initial_lo: f64,
        options: &RunOptions,
        rng: &mut R,
    ) -> Result<AbqfeState> {
        match *self {
            CycleProtocol::Adaptive { steps } => {
                run_abqfe(scheme, true_frequency, initial_lo, steps, options, rng)
            }
            CycleProtocol::Fixed {
                time,
                repetitions,
                gaussian_sigma,
            } => run_frequentist_baseline(
                scheme,
                true_frequency,
                initial_lo,
                time,
                repetitions,
                gaussian_sigma,
                options,
                rng,
            ),
        }
    }
}

/// Output of a locked clock: one estimate and one duration per cycle.
///
/// Frequencies are offsets from a nominal reference; `clock_frequency` is
/// the absolute transition frequency used to form fractional values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockRecord {
    pub clock_frequency: f64,
    pub true_frequency: f64,
    pub dead_time: f64,
    pub estimates: Vec<f64>,
    pub cycle_durations: Vec<f64>,
}

impl LockRecord {
    /// y − 1 = (f_est − f_c)/f_c per cycle.
    pub fn fractional_deviations(&self) -> Vec<f64> {
        self.estimates
            .iter()
            .map(|f| (f - self.true_frequency) / self.clock_frequency)
            .collect()
    }

    /// y = f_est/f_c per cycle.
    pub fn fractional_frequencies(&self) -> Vec<f64> {
        self.fractional_deviations().into_iter().map(|d| 1.0 + d).collect()
    }

    /// f_est^{i} − f_est^{i−1}.
    pub fn error_signal(&self) -> Vec<f64> {
        self.estimates.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Mean cycle duration, the Allan base interval τ₀.
    pub fn mean_cycle_duration(&self) -> f64 {
        self.cycle_durations.iter().sum::<f64>() / self.cycle_durations.len() as f64
    }
}

/// Locks the LO over `cycles` cycles. Each cycle restarts the time sequence
/// and prior, centred on the previous cycle's final estimate.
#[allow(clippy::too_many_arguments)]
pub fn run_lock<R: Rng + ?Sized>(
    scheme: &CascadeScheme,
    protocol: &CycleProtocol,
    clock_frequency: f64,
    true_frequency: f64,
    initial_lo: f64,
    cycles: usize,
    dead_time: f64,
    options: &RunOptions,
    rng: &mut R,
) -> Result<LockRecord> {
    if cycles == 0 {
        return invalid("need at least one lock cycle");
    }
    if !(dead_time >= 0.0) {
        return invalid(format!("dead time must be non-negative, got {dead_time}"));
    }
    if !(clock_frequency > 0.0) {
        return invalid(format!("clock frequency must be positive, got {clock_frequency}"));
    }
    let mut lo = initial_lo;
    let mut estimates = Vec::with_capacity(cycles);
    let mut durations = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        let state = protocol.run(scheme, true_frequency, lo, options, rng)?;
        lo = state.final_estimate();
        estimates.push(lo);
        durations.push(state.times.iter().map(|t| t + dead_time).sum());
    }
    Ok(LockRecord {
        clock_frequency,
        true_frequency,
        dead_time,
        estimates,
        cycle_durations: durations,
    })
}
