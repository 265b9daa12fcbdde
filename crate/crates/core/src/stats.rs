//! Evaluation metrics: exhaustive-outcome RMSE and Fisher information,
//! Monte Carlo aggregates, overlapping Allan deviation and sensitivity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::abqfe::AbqfeState;
use crate::bayes::{self, PosteriorGrid};
use crate::error::{invalid, Error, Result};
use crate::likelihood::{ln_choose, InterrogationSetting};
use crate::scheme::{CascadeScheme, Channel};

/// Largest outcome-tuple count enumerated exhaustively.
pub const MAX_TUPLES: u128 = 10_000_000;

/// Moments of the grid-posterior-mean estimator over every outcome tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnumerationReport {
    /// Tuples visited (all of them unless pruning was requested).
    pub tuples: u64,
    /// Probability mass at f_c covered by the visited tuples.
    pub covered_mass: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub variance: f64,
    pub rmse: f64,
    /// Probability-weighted posterior standard deviation.
    pub mean_posterior_deviation: f64,
    /// F(f_c), 1/Hz².
    pub fisher: f64,
    /// d f̄_est/d f_c.
    pub estimator_slope: f64,
}

impl EnumerationReport {
    /// √((d f̄_est/d f_c)²/F); zero when the estimator does not respond.
    pub fn crlb(&self) -> f64 {
        if self.estimator_slope == 0.0 {
            0.0
        } else {
            (self.estimator_slope * self.estimator_slope / self.fisher).sqrt()
        }
    }
}

struct ChannelTables {
    copies: u32,
    /// log-kernel per outcome count, over the grid
    log_kernel: Vec<Vec<f64>>,
    /// outcome probabilities at f_c − h, f_c, f_c + h
    prob: [Vec<f64>; 3],
    /// ∂ ln P/∂f at f_c per outcome count
    score: Vec<f64>,
}

fn binomial_pmf(copies: u32, p: f64) -> Vec<f64> {
    (0..=copies)
        .map(|mu| {
            let fail = copies - mu;
            let lp = if mu == 0 { 0.0 } else { mu as f64 * p.ln() };
            let lq = if fail == 0 { 0.0 } else { fail as f64 * (1.0 - p).ln() };
            (ln_choose(copies, mu) + lp + lq).exp()
        })
        .collect()
}

fn channel_tables(c: &Channel, grid: &[f64], true_frequency: f64, h: f64) -> ChannelTables {
    let p_grid: Vec<f64> = grid.iter().map(|&f| c.plus_probability(f)).collect();
    let ln_p: Vec<f64> = p_grid.iter().map(|p| p.ln()).collect();
    let ln_q: Vec<f64> = p_grid.iter().map(|p| (1.0 - p).ln()).collect();
    let log_kernel = (0..=c.copies)
        .map(|mu| {
            let fail = c.copies - mu;
            (0..grid.len())
                .map(|i| {
                    let a = if mu == 0 { 0.0 } else { mu as f64 * ln_p[i] };
                    let b = if fail == 0 { 0.0 } else { fail as f64 * ln_q[i] };
                    a + b
                })
                .collect()
        })
        .collect();
    let prob = [
        binomial_pmf(c.copies, c.plus_probability(true_frequency - h)),
        binomial_pmf(c.copies, c.plus_probability(true_frequency)),
        binomial_pmf(c.copies, c.plus_probability(true_frequency + h)),
    ];
    let p = c.plus_probability(true_frequency);
    let dp = c.plus_probability_slope(true_frequency);
    let score = (0..=c.copies)
        .map(|mu| {
            let fail = c.copies - mu;
            let a = if mu == 0 { 0.0 } else { mu as f64 / p };
            let b = if fail == 0 { 0.0 } else { fail as f64 / (1.0 - p) };
            (a - b) * dp
        })
        .collect();
    ChannelTables {
        copies: c.copies,
        log_kernel,
        prob,
        score,
    }
}

struct Leaf {
    prob: [f64; 3],
    estimate: f64,
    deviation: f64,
    score: f64,
}

struct Walker<'a> {
    tables: &'a [ChannelTables],
    lo: f64,
    hi: f64,
    prune: f64,
    acc: Vec<Vec<f64>>,
    leaves: Vec<Leaf>,
}

impl Walker<'_> {
    fn walk(&mut self, depth: usize, prob: [f64; 3], score: f64) -> Result<()> {
        if depth == self.tables.len() {
            return self.leaf(prob, score);
        }
        let table = &self.tables[depth];
        for mu in 0..=table.copies as usize {
            let p = [
                prob[0] * table.prob[0][mu],
                prob[1] * table.prob[1][mu],
                prob[2] * table.prob[2][mu],
            ];
            if self.prune > 0.0 && p.iter().all(|&x| x < self.prune) {
                continue;
            }
            let (head, tail) = self.acc.split_at_mut(depth + 1);
            let src = &head[depth];
            let dst = &mut tail[0];
            for ((d, s), k) in dst.iter_mut().zip(src).zip(&table.log_kernel[mu]) {
                *d = s + k;
            }
            let s = if table.prob[1][mu] > 0.0 {
                score + table.score[mu]
            } else {
                0.0
            };
            self.walk(depth + 1, p, s)?;
        }
        Ok(())
    }

    fn leaf(&mut self, prob: [f64; 3], score: f64) -> Result<()> {
        if prob.iter().all(|&p| p == 0.0) {
            return Ok(());
        }
        let acc = &self.acc[self.tables.len()];
        let est = bayes::estimate_from_log_density(self.lo, self.hi, acc);
        match est {
            Some(e) => self.leaves.push(Leaf {
                prob,
                estimate: e.mean,
                deviation: e.std_dev,
                score,
            }),
            None => {
                return Err(Error::DegeneratePosterior {
                    step: None,
                    grid_points: acc.len(),
                    lo: self.lo,
                    hi: self.hi,
                })
            }
        }
        Ok(())
    }
}

/// Enumerates every outcome tuple {μ_k} of `channels`, computing the
/// posterior-mean estimate of each on `prior`, and accumulates bias,
/// variance, RMSE, Fisher information and the estimator slope at f_c.
///
/// Branches whose probability at f_c and f_c ± h all fall below `prune`
/// are skipped; `prune = 0` enumerates exactly.
pub fn enumerate_outcomes(
    channels: &[Channel],
    prior: &PosteriorGrid,
    true_frequency: f64,
    prune: f64,
) -> Result<EnumerationReport> {
    if channels.is_empty() {
        return invalid("need at least one channel");
    }
    let tuples: u128 = channels.iter().map(|c| c.copies as u128 + 1).product();
    if tuples > MAX_TUPLES {
        return Err(Error::ResourceLimit {
            what: "outcome enumeration",
            required: tuples,
            limit: MAX_TUPLES,
        });
    }
    let grid: Vec<f64> = prior.frequencies().collect();
    let n_max = channels.iter().map(|c| c.model.n_particles).max().unwrap_or(1) as f64;
    let t = channels
        .iter()
        .map(|c| c.setting.interrogation_time)
        .fold(0.0, f64::max);
    let h = 1e-4 / (TAU * n_max * t);
    let tables: Vec<ChannelTables> = channels
        .iter()
        .map(|c| channel_tables(c, &grid, true_frequency, h))
        .collect();
    let log_prior: Vec<f64> = prior.density().iter().map(|d| d.ln()).collect();
    let mut acc = vec![vec![0.0; grid.len()]; channels.len() + 1];
    acc[0].copy_from_slice(&log_prior);

    let mut walker = Walker {
        tables: &tables,
        lo: prior.lo(),
        hi: prior.hi(),
        prune,
        acc,
        leaves: Vec::new(),
    };
    walker.walk(0, [1.0; 3], 0.0)?;
    let leaves = walker.leaves;

    let z: f64 = leaves.iter().map(|l| l.prob[1]).sum();
    if !(z > 0.0) {
        return invalid("no outcome tuple has positive probability at the true frequency");
    }
    let weighted = |i: usize, f: &dyn Fn(&Leaf) -> f64| -> f64 {
        leaves.iter().map(|l| l.prob[i] * f(l)).sum::<f64>()
    };
    let mean = weighted(1, &|l| l.estimate) / z;
    let variance = weighted(1, &|l| (l.estimate - mean).powi(2)) / z;
    let bias = mean - true_frequency;
    let lo_mean = weighted(0, &|l| l.estimate) / leaves.iter().map(|l| l.prob[0]).sum::<f64>();
    let hi_mean = weighted(2, &|l| l.estimate) / leaves.iter().map(|l| l.prob[2]).sum::<f64>();
    Ok(EnumerationReport {
        tuples: leaves.len() as u64,
        covered_mass: z,
        mean_estimate: mean,
        bias,
        variance,
        rmse: (bias * bias + variance).sqrt(),
        mean_posterior_deviation: weighted(1, &|l| l.deviation) / z,
        fisher: weighted(1, &|l| l.score * l.score),
        estimator_slope: (hi_mean - lo_mean) / (2.0 * h),
    })
}

/// RMSE, bias and variance of a frequentist estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveRmse {
    pub rmse: f64,
    pub bias: f64,
    pub variance: f64,
}

/// Exact RMSE of a single-shot estimate over all outcome tuples. The
/// setting's auxiliary phase applies to ensemble 0 and `contrast` to all.
pub fn exhaustive_rmse(
    scheme: &CascadeScheme,
    setting: &InterrogationSetting,
    contrast: f64,
    true_frequency: f64,
    prior: &PosteriorGrid,
) -> Result<ExhaustiveRmse> {
    let channels = scheme.channels_for_setting(setting, contrast)?;
    let r = enumerate_outcomes(&channels, prior, true_frequency, 0.0)?;
    Ok(ExhaustiveRmse {
        rmse: r.rmse,
        bias: r.bias,
        variance: r.variance,
    })
}

/// Replica aggregates at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    /// Replica-averaged cumulative interrogation time.
    pub total_time: f64,
    pub mean_estimate: f64,
    /// (1/R)·√Σ(f_r − f̄)², the literal Monte Carlo spread definition behind the
    /// reference curves.
    pub spread: f64,
    /// (1/R)·√Σ(f_r − f_c)².
    pub rmse: f64,
    /// √(Σ(f_r − f̄)²/R).
    pub std_dev: f64,
    /// √(Σ(f_r − f_c)²/R).
    pub rms_error: f64,
    pub bias: f64,
    pub median_posterior_deviation: f64,
    pub mean_posterior_deviation: f64,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub replicas: usize,
    pub true_frequency: f64,
    pub steps: Vec<StepSummary>,
}

impl MonteCarloSummary {
    pub fn last(&self) -> &StepSummary {
        self.steps.last().expect("summary holds at least one step")
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregates replica runs of equal length step by step.
pub fn summarize(runs: &[AbqfeState], true_frequency: f64) -> Result<MonteCarloSummary> {
    let Some(first) = runs.first() else {
        return invalid("need at least one replica");
    };
    let steps = first.estimates.len();
    if runs.iter().any(|r| r.estimates.len() != steps) {
        return invalid("replicas have different step counts");
    }
    let r = runs.len() as f64;
    let summaries = (0..steps)
        .map(|j| {
            let est: Vec<f64> = runs.iter().map(|s| s.estimates[j]).collect();
            let mut dev: Vec<f64> = runs.iter().map(|s| s.deviations[j]).collect();
            let total_time = runs.iter().map(|s| s.times[..=j].iter().sum::<f64>()).sum::<f64>() / r;
            let mean = est.iter().sum::<f64>() / r;
            let ss_mean: f64 = est.iter().map(|f| (f - mean).powi(2)).sum();
            let ss_true: f64 = est.iter().map(|f| (f - true_frequency).powi(2)).sum();
            let mean_dev = dev.iter().sum::<f64>() / r;
            StepSummary {
                step: j,
                total_time,
                mean_estimate: mean,
                spread: ss_mean.sqrt() / r,
                rmse: ss_true.sqrt() / r,
                std_dev: (ss_mean / r).sqrt(),
                rms_error: (ss_true / r).sqrt(),
                bias: mean - true_frequency,
                median_posterior_deviation: median(&mut dev),
                mean_posterior_deviation: mean_dev,
                mean_abs_error: est.iter().map(|f| (f - true_frequency).abs()).sum::<f64>() / r,
            }
        })
        .collect();
    Ok(MonteCarloSummary {
        replicas: runs.len(),
        true_frequency,
        steps: summaries,
    })
}

/// One point of an RMSE-versus-detuning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningPoint {
    pub detuning: f64,
    pub rmse: f64,
}

/// Evaluates `rmse_at(δ)` over the grid in parallel, preserving grid order.
pub fn dynamic_range_scan<F>(detunings: &[f64], rmse_at: F) -> Result<Vec<DetuningPoint>>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    detunings
        .par_iter()
        .map(|&d| rmse_at(d).map(|rmse| DetuningPoint { detuning: d, rmse }))
        .collect()
}

/// Symmetric grid of `points` detunings over [−span, span].
pub fn detuning_grid(span: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(span > 0.0) {
        return invalid("detuning grid needs at least two points and a positive span");
    }
    Ok((0..points)
        .map(|i| {
            // mirror the upper half so the grid is exactly symmetric
            let j = i.min(points - 1 - i);
            let v = -span + 2.0 * span * j as f64 / (points - 1) as f64;
            if i == j {
                v
            } else {
                -v
            }
        })
        .collect())
}

/// Floor and usable half-width of an RMSE curve. The floor is the RMSE at
/// the grid point nearest δ = 0 (the design point); on each side the
/// half-width runs to the first crossing of `factor × floor`, linearly
/// interpolated, and the two sides are averaged. A side that never crosses
/// contributes its full extent. The global minimum is reported separately
/// because fringe extrema can produce isolated, symmetric-posterior dips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsableRange {
    pub floor: f64,
    pub minimum: f64,
    pub half_width: f64,
}

pub fn usable_range(curve: &[DetuningPoint], factor: f64) -> Result<UsableRange> {
    if curve.len() < 2 {
        return invalid("curve needs at least two points");
    }
    if curve.windows(2).any(|w| !(w[1].detuning > w[0].detuning)) {
        return invalid("curve detunings must be strictly increasing");
    }
    let (center, _) = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.detuning.abs().total_cmp(&b.1.detuning.abs()))
        .expect("non-empty");
    let floor = curve[center].rmse;
    let limit = factor * floor;
    let origin = curve[center].detuning;
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> f64 {
        let mut prev = center;
        for i in range {
            if curve[i].rmse >= limit {
                let (a, b) = (&curve[prev], &curve[i]);
                let w = (limit - a.rmse) / (b.rmse - a.rmse);
                let d = a.detuning + w * (b.detuning - a.detuning);
                return (d - origin).abs();
            }
            prev = i;
        }
        (curve[prev].detuning - origin).abs()
    };
    let right = crossing(&mut (center + 1..curve.len()));
    let left = crossing(&mut (0..center).rev());
    Ok(UsableRange {
        floor,
        minimum: curve.iter().map(|p| p.rmse).fold(f64::INFINITY, f64::min),
        half_width: 0.5 * (left + right),
    })
}

/// σ_y at averaging time τ = m·τ₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllanPoint {
    pub m: usize,
    pub tau: f64,
    pub deviation: f64,
}

/// Overlapping Allan deviation at every m ≤ ⌊L/2⌋.
pub fn overlapping_allan(y: &[f64], tau0: f64) -> Result<Vec<AllanPoint>> {
    let factors: Vec<usize> = (1..=y.len() / 2).collect();
    overlapping_allan_at(y, tau0, &factors)
}

/// Overlapping Allan deviation at the given averaging factors:
/// σ²(mτ₀) = Σ_j (Σ_{i=j}^{j+m−1} (y_{i+m} − y_i))² / (2m²(L − 2m + 1)).
pub fn overlapping_allan_at(y: &[f64], tau0: f64, factors: &[usize]) -> Result<Vec<AllanPoint>> {
    let len = y.len();
    if len < 3 {
        return invalid(format!("Allan deviation needs at least 3 samples, got {len}"));
    }
    if !(tau0 > 0.0) {
        return invalid(format!("tau0 must be positive, got {tau0}"));
    }
    // prefix sums of the centred series keep the cancellations exact enough
    let mean = y.iter().sum::<f64>() / len as f64;
    let mut prefix = vec![0.0; len + 1];
    for (i, v) in y.iter().enumerate() {
        prefix[i + 1] = prefix[i] + (v - mean);
    }
    factors
        .iter()
        .map(|&m| {
            if m == 0 || 2 * m > len {
                return invalid(format!("averaging factor {m} out of range for {len} samples"));
            }
            let terms = len - 2 * m + 1;
            let sum: f64 = (0..terms)
                .map(|j| {
                    let d = (prefix[j + 2 * m] - prefix[j + m]) - (prefix[j + m] - prefix[j]);
                    d * d
                })
                .sum();
            let var = sum / (2.0 * (m * m) as f64 * terms as f64);
            Ok(AllanPoint {
                m,
                tau: m as f64 * tau0,
                deviation: var.sqrt(),
            })
        })
        .collect()
}

/// Powers of two up to ⌊L/divisor⌋, the usual fitting range.
pub fn octave_factors(len: usize, divisor: usize) -> Vec<usize> {
    let max = (len / divisor.max(1)).max(1);
    std::iter::successors(Some(1usize), |m| Some(m * 2))
        .take_while(|&m| m <= max)
        .collect()
}

/// Least-squares line through (ln x, ln y): returns (slope, intercept).
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("log-log fit needs two or more paired points");
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return invalid("log-log fit needs positive values");
    }
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("log-log fit needs distinct x values");
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Amplitude A of σ_y = A/√τ, fitted in log space with the slope fixed.
/// Each point is weighted by its approximate degrees of freedom
/// (L − 2m + 1)/m, so the long-τ points, built from few independent
/// samples, do not dominate.
pub fn white_noise_amplitude(points: &[AllanPoint], series_len: usize) -> Result<f64> {
    if points.is_empty() || points.iter().any(|p| !(p.deviation > 0.0)) {
        return invalid("amplitude fit needs positive deviations");
    }
    if points.iter().any(|p| 2 * p.m > series_len) {
        return invalid("averaging factor exceeds half the series length");
    }
    let (mut wsum, mut acc) = (0.0, 0.0);
    for p in points {
        let w = (series_len - 2 * p.m + 1) as f64 / p.m as f64;
        wsum += w;
        acc += w * (p.deviation * p.tau.sqrt()).ln();
    }
    Ok((acc / wsum).exp())
}

/// η = (Δf/f_c)·√T_cycle.
pub fn sensitivity(deviation: f64, clock_frequency: f64, cycle_duration: f64) -> Result<f64> {
    if !(clock_frequency > 0.0) || !(cycle_duration > 0.0) || !(deviation >= 0.0) {
        return invalid("sensitivity needs Δf ≥ 0, f_c > 0 and T_cycle > 0");
    }
    Ok(deviation / clock_frequency * cycle_duration.sqrt())
}
