//! Exact collective-spin simulator in the symmetric Dicke sector.
//!
//! States are (N+1)×(N+1) density matrices over |N/2, m⟩ with index
//! `k = m + N/2`, i.e. ascending m. GHZ dynamics under Ĵ_z, Ĵ_x² and global
//! rotations never leave this sector, so nothing is truncated.
//!
//! This module is the brute-force reference for the analytic likelihoods in
//! [`crate::likelihood`]; it favours exactness over speed.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{invalid, Result};

pub type CMatrix = DMatrix<Complex64>;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Collective dephasing and detection-noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Collective dephasing rate γ in 1/s (Lindblad operator Ĵ_z).
    pub gamma: f64,
    /// Gaussian detection-noise width σ_d in units of m. Zero disables it.
    pub sigma_d: f64,
}

impl NoiseModel {
    pub const NOISELESS: NoiseModel = NoiseModel {
        gamma: 0.0,
        sigma_d: 0.0,
    };

    pub fn new(gamma: f64, sigma_d: f64) -> Result<Self> {
        let model = NoiseModel { gamma, sigma_d };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.sigma_d >= 0.0) {
            return invalid(format!(
                "noise parameters must be non-negative (gamma={}, sigma_d={})",
                self.gamma, self.sigma_d
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Observables diagonal in Ĵ_z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// ±1 alternating on adjacent m: eigenvalue (−1)^(N/2 − m), the parity
    /// of the number of particles in |1⟩.
    Parity,
    /// Sgn[Ĵ_z]: +1 for m > 0, −1 for m ≤ 0.
    Sign,
    /// Half-population difference m itself.
    HalfPopulation,
}

impl Observable {
    /// Eigenvalue for Dicke index `k` (m = k − N/2) of an N-particle system.
    pub fn eigenvalue(self, n_particles: usize, k: usize) -> f64 {
        let twice_m = 2 * k as i64 - n_particles as i64;
        match self {
            // N/2 − m = N − k
            Observable::Parity => {
                if (n_particles - k) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Observable::Sign => {
                if twice_m > 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Observable::HalfPopulation => twice_m as f64 / 2.0,
        }
    }
}

/// Density matrix of N two-level particles in the symmetric J = N/2 sector.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveState {
    n_particles: usize,
    rho: CMatrix,
}

impl CollectiveState {
    /// Wraps an explicit density matrix, checking trace, hermiticity and positivity.
    pub fn from_density_matrix(n_particles: usize, rho: CMatrix) -> Result<Self> {
        if n_particles < 1 {
            return invalid("n_particles must be at least 1");
        }
        let dim = n_particles + 1;
        if rho.nrows() != dim || rho.ncols() != dim {
            return invalid(format!(
                "density matrix must be {dim}x{dim}, got {}x{}",
                rho.nrows(),
                rho.ncols()
            ));
        }
        let state = CollectiveState { n_particles, rho };
        if (state.trace() - 1.0).abs() > 1e-12 {
            return invalid(format!("trace {} differs from 1", state.trace()));
        }
        if state.hermiticity_error() > 1e-12 {
            return invalid("density matrix is not Hermitian");
        }
        if state.min_eigenvalue() < -1e-10 {
            return invalid("density matrix has negative eigenvalues");
        }
        Ok(state)
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.n_particles + 1
    }

    pub fn density_matrix(&self) -> &CMatrix {
        &self.rho
    }

    /// m value for Dicke index `k`.
    pub fn m_of(&self, k: usize) -> f64 {
        k as f64 - self.n_particles as f64 / 2.0
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    /// Largest element-wise deviation from hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let dim = self.dim();
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                worst = worst.max((self.rho[(i, j)] - self.rho[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Diagonal populations p_m in ascending-m order.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.rho[(k, k)].re).collect()
    }

    fn conjugate(&self, unitary: &CMatrix) -> CollectiveState {
        CollectiveState {
            n_particles: self.n_particles,
            rho: unitary * &self.rho * unitary.adjoint(),
        }
    }
}

/// Collective angular-momentum matrices in the J = N/2 Dicke basis.
pub struct SpinOperators {
    pub jx: CMatrix,
    pub jy: CMatrix,
    pub jz: CMatrix,
}

impl SpinOperators {
    pub fn new(n_particles: usize) -> Self {
        let dim = n_particles + 1;
        let j = n_particles as f64 / 2.0;
        let mut jplus = CMatrix::zeros(dim, dim);
        for k in 0..n_particles {
            let m = k as f64 - j;
            jplus[(k + 1, k)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
        let jminus = jplus.adjoint();
        let half = Complex64::new(0.5, 0.0);
        let jx = (&jplus + &jminus) * half;
        let jy = (&jplus - &jminus) * Complex64::new(0.0, -0.5);
        let jz = CMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |k, _| {
            Complex64::new(k as f64 - j, 0.0)
        }));
        SpinOperators { jx, jy, jz }
    }

    pub fn axis(&self, axis: Axis) -> &CMatrix {
        match axis {
            Axis::X => &self.jx,
            Axis::Y => &self.jy,
            Axis::Z => &self.jz,
        }
    }
}

/// exp(−i·phase(Ĥ)) for Hermitian Ĥ, through its eigendecomposition.
fn unitary_function(hermitian: &CMatrix, phase: impl Fn(f64) -> f64) -> CMatrix {
    let eig = SymmetricEigen::new(hermitian.clone());
    let v = &eig.eigenvectors;
    let diag = nalgebra::DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&lambda| Complex64::from_polar(1.0, -phase(lambda))),
    );
    v * CMatrix::from_diagonal(&diag) * v.adjoint()
}

/// GHZ state (|0⟩^⊗N + |1⟩^⊗N)/√2, supported on m = ±N/2.
pub fn make_ghz(n_particles: usize) -> Result<CollectiveState> {
    if n_particles < 1 {
        return invalid("n_particles must be at least 1");
    }
    let dim = n_particles + 1;
    let mut rho = CMatrix::zeros(dim, dim);
    let half = Complex64::new(0.5, 0.0);
    for &(a, b) in &[(0, 0), (0, dim - 1), (dim - 1, 0), (dim - 1, dim - 1)] {
        rho[(a, b)] = half;
    }
    Ok(CollectiveState { n_particles, rho })
}

/// Free Ramsey evolution under Ĥ = δĴ_z with collective dephasing (L = Ĵ_z).
///
/// Uses the exact element-wise solution
/// ρ_{m,m'} ← ρ_{m,m'} · e^{−iδ(m−m')t} · e^{−γ(m−m')²t}.
pub fn evolve_ramsey(
    state: &CollectiveState,
    detuning: f64,
    time: f64,
    noise: &NoiseModel,
) -> Result<CollectiveState> {
    if !(time >= 0.0) {
        return invalid(format!("evolution time must be non-negative, got {time}"));
    }
    noise.validate()?;
    let dim = state.dim();
    let mut rho = state.rho.clone();
    for a in 0..dim {
        for b in 0..dim {
            let dm = a as f64 - b as f64;
            let factor = Complex64::from_polar(
                (-noise.gamma * dm * dm * time).exp(),
                -detuning * dm * time,
            );
            rho[(a, b)] *= factor;
        }
    }
    Ok(CollectiveState {
        n_particles: state.n_particles,
        rho,
    })
}

/// Conjugation by exp(−i·angle·Ĵ_axis).
pub fn apply_rotation(state: &CollectiveState, axis: Axis, angle: f64) -> CollectiveState {
    if axis == Axis::Z {
        // diagonal: phase e^{−iθ(m−m')}
        let dim = state.dim();
        let mut rho = state.rho.clone();
        for a in 0..dim {
            for b in 0..dim {
                rho[(a, b)] *= Complex64::from_polar(1.0, -angle * (a as f64 - b as f64));
            }
        }
        return CollectiveState {
            n_particles: state.n_particles,
            rho,
        };
    }
    let ops = SpinOperators::new(state.n_particles);
    let u = unitary_function(ops.axis(axis), |lambda| angle * lambda);
    state.conjugate(&u)
}

/// One-axis-twisting readout exp(−i(π/2)Ĵ_x²), followed for odd N by the
/// extra π/2 rotation that maps the twisted state back onto Ĵ_z.
///
/// In this basis (|0⟩ ↔ m = +N/2, Ĵ_y = (Ĵ₊ − Ĵ₋)/2i) that rotation is about
/// x; a y rotation would leave a cosine-type odd-N fringe.
pub fn apply_oat_readout(state: &CollectiveState) -> CollectiveState {
    let ops = SpinOperators::new(state.n_particles);
    let twist = unitary_function(&ops.jx, |lambda| FRAC_PI_2 * lambda * lambda);
    let twisted = state.conjugate(&twist);
    if state.n_particles % 2 == 1 {
        apply_rotation(&twisted, Axis::X, FRAC_PI_2)
    } else {
        twisted
    }
}

/// Row-normalised Gaussian blur of populations over the discrete m axis.
fn blur(populations: &[f64], sigma_d: f64) -> Vec<f64> {
    let dim = populations.len();
    let mut out: Vec<f64> = (0..dim)
        .map(|m| {
            let mut weighted = 0.0;
            let mut weight = 0.0;
            for (n, &p) in populations.iter().enumerate() {
                let d = m as f64 - n as f64;
                let kernel = (-d * d / (2.0 * sigma_d * sigma_d)).exp();
                weighted += kernel * p;
                weight += kernel;
            }
            weighted / weight
        })
        .collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Outcome distribution over m, including Gaussian detection noise.
///
/// Each output bin averages the true populations with Gaussian weights
/// normalised over the finite m axis; the resulting vector is then
/// renormalised to sum to one. σ_d = 0 returns the exact diagonal.
pub fn measure_distribution(state: &CollectiveState, noise: &NoiseModel) -> Vec<f64> {
    let populations: Vec<f64> = state.populations().into_iter().map(|p| p.max(0.0)).collect();
    if noise.sigma_d == 0.0 {
        let total: f64 = populations.iter().sum();
        return populations.into_iter().map(|p| p / total).collect();
    }
    blur(&populations, noise.sigma_d)
}

/// ⟨Ô⟩ = Σ_m p_m O(m) for a distribution over the N+1 Dicke levels.
pub fn expectation(observable: Observable, distribution: &[f64]) -> Result<f64> {
    if distribution.len() < 2 {
        return invalid("distribution needs at least two levels");
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return invalid(format!("distribution sums to {total}, expected 1"));
    }
    let n = distribution.len() - 1;
    Ok(distribution
        .iter()
        .enumerate()
        .map(|(k, p)| p * observable.eigenvalue(n, k))
        .sum())
}

/// Readout protocol appended after the Ramsey interrogation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// π/2 rotation about y, then parity.
    Parity,
    /// One-axis twisting (plus y rotation for odd N), then Ĵ_z statistics.
    Interaction,
}

/// Distribution over m after GHZ preparation, Ramsey interrogation with
/// detuning `detuning` (rad/s) for `time`, auxiliary phase `aux_phase` on the
/// collective fringe, and the chosen readout.
pub fn ramsey_distribution(
    n_particles: usize,
    readout: Readout,
    detuning: f64,
    time: f64,
    aux_phase: f64,
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    let ghz = make_ghz(n_particles)?;
    let evolved = evolve_ramsey(&ghz, detuning, time, noise)?;
    // φ = 2πN f_a T is a z rotation by φ/N per unit m
    let shifted = apply_rotation(&evolved, Axis::Z, aux_phase / n_particles as f64);
    let read = match readout {
        Readout::Parity => apply_rotation(&shifted, Axis::Y, FRAC_PI_2),
        Readout::Interaction => apply_oat_readout(&shifted),
    };
    Ok(measure_distribution(&read, noise))
}

/// Probability of the ±1 outcome `u` of a two-valued observable.
pub fn binary_probability(observable: Observable, distribution: &[f64], u: i8) -> f64 {
    let n = distribution.len() - 1;
    distribution
        .iter()
        .enumerate()
        .filter(|&(k, _)| observable.eigenvalue(n, k) == f64::from(u))
        .map(|(_, p)| p)
        .sum()
}

/// Ratio ⟨Ô⟩_noisy / ⟨Ô⟩_ideal at collective phase `phase`, time `time`.
pub fn contrast(
    n_particles: usize,
    readout: Readout,
    observable: Observable,
    phase: f64,
    time: f64,
    noise: &NoiseModel,
) -> Result<f64> {
    let ideal = ramsey_distribution(n_particles, readout, 0.0, time, phase, &NoiseModel::NOISELESS)?;
    let noisy = ramsey_distribution(n_particles, readout, 0.0, time, phase, noise)?;
    Ok(expectation(observable, &noisy)? / expectation(observable, &ideal)?)
}

/// Least-squares slope (through the origin) of −ln C against γ·T·N² for
/// the dephasing contrast of `readout`/`observable` at an extremal phase.
///
/// The element-wise Lindblad solution gives a coefficient of 1 for the
/// GHZ corner coherence.
pub fn dephasing_exponent(
    n_particles: usize,
    readout: Readout,
    observable: Observable,
    gammas: &[f64],
    time: f64,
) -> Result<f64> {
    let phase = match readout {
        Readout::Parity => 0.0,
        Readout::Interaction => FRAC_PI_2,
    };
    let n2 = (n_particles * n_particles) as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &gamma in gammas {
        let noise = NoiseModel::new(gamma, 0.0)?;
        let c = contrast(n_particles, readout, observable, phase, time, &noise)?;
        let x = gamma * time * n2;
        sxx += x * x;
        sxy += x * (-c.ln());
    }
    if sxx == 0.0 {
        return invalid("dephasing fit needs at least one positive gamma");
    }
    Ok(sxy / sxx)
}

/// Metrological gain in dB, 20·log10(Δf_SCS / Δf_opt), of a GHZ readout.
///
/// Δf_opt is the error-propagation optimum ΔÔ/|∂⟨Ô⟩/∂f| over the fringe,
/// Δf_SCS = 1/(2πT√N). Larger is better; Heisenberg-limited detection of
/// N particles gives 10·log10(N).
pub fn metrological_gain_db(
    n_particles: usize,
    readout: Readout,
    observable: Observable,
    sigma_d: f64,
) -> Result<f64> {
    let noise = NoiseModel::new(0.0, sigma_d)?;
    let n = n_particles as f64;
    // work in collective phase θ = 2πNT·δf, so ∂/∂f = 2πNT ∂/∂θ
    let moments = |theta: f64| -> Result<(f64, f64)> {
        let dist = ramsey_distribution(n_particles, readout, 0.0, 1.0, theta, &noise)?;
        let mean = expectation(observable, &dist)?;
        let second: f64 = dist
            .iter()
            .enumerate()
            .map(|(k, p)| p * observable.eigenvalue(n_particles, k).powi(2))
            .sum();
        Ok((mean, (second - mean * mean).max(0.0)))
    };
    let h = 1e-5;
    let mut best = f64::INFINITY;
    let samples = 720;
    for i in 0..samples {
        let theta = std::f64::consts::TAU * (i as f64 + 0.5) / samples as f64;
        let (_, var) = moments(theta)?;
        let slope = (moments(theta + h)?.0 - moments(theta - h)?.0) / (2.0 * h);
        if slope.abs() < 1e-9 {
            continue;
        }
        best = best.min(var.sqrt() / slope.abs());
    }
    // Δf_opt/Δf_SCS = (ΔÔ/|∂θ⟨Ô⟩|)·(2πT√N)/(2πNT) = (ΔÔ/|∂θ⟨Ô⟩|)/√N
    let ratio = best / n.sqrt();
    Ok(-20.0 * ratio.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ghz_single_qubit_is_plus_state() {
        let s = make_ghz(1).unwrap();
        let rho = s.density_matrix();
        for &(a, b) in &[(0, 0), (1, 1), (0, 1), (1, 0)] {
            assert!(close(rho[(a, b)].re, 0.5, 1e-15));
        }
    }

    #[test]
    fn ghz_four_has_only_corners() {
        let s = make_ghz(4).unwrap();
        let rho = s.density_matrix();
        for a in 0..5 {
            for b in 0..5 {
                let corner = (a == 0 || a == 4) && (b == 0 || b == 4);
                let expected = if corner { 0.5 } else { 0.0 };
                assert_eq!(rho[(a, b)].norm(), expected);
            }
        }
        assert!(close(s.purity(), 1.0, 1e-15));
    }

    #[test]
    fn ghz_rejects_zero_particles() {
        assert!(make_ghz(0).is_err());
    }

    #[test]
    fn evolution_identity_without_detuning_or_noise() {
        let s = make_ghz(5).unwrap();
        let out = evolve_ramsey(&s, 0.0, 3.7, &NoiseModel::NOISELESS).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn evolution_phase_is_collective() {
        let phi = 0.3;
        let s = make_ghz(4).unwrap();
        let out = evolve_ramsey(&s, phi / 2.0, 2.0, &NoiseModel::NOISELESS).unwrap();
        // ρ_{+N/2,−N/2} has m − m' = 4
        let c = out.density_matrix()[(4, 0)];
        let expected = Complex64::from_polar(0.5, -4.0 * phi);
        assert!((c - expected).norm() < 1e-14);
    }

    #[test]
    fn evolution_rejects_negative_time() {
        let s = make_ghz(2).unwrap();
        assert!(evolve_ramsey(&s, 0.0, -1.0, &NoiseModel::NOISELESS).is_err());
    }

    /// Right-hand side of the Lindblad equation with L = Ĵ_z, written out
    /// with matrix products rather than element-wise.
    fn lindblad_rhs(rho: &CMatrix, h: &CMatrix, l: &CMatrix, gamma: f64) -> CMatrix {
        let i = Complex64::new(0.0, 1.0);
        let g = Complex64::new(gamma, 0.0);
        let ldl = l.adjoint() * l;
        let commutator = h * rho - rho * h;
        let dissipator = (l * rho * l.adjoint()) * Complex64::new(2.0, 0.0) - rho * &ldl - &ldl * rho;
        commutator * (-i) + dissipator * g
    }

    #[test]
    fn dephasing_matches_rk4_integration() {
        let n = 2;
        let gamma = 1.0;
        let time = 0.1;
        let detuning = 7.0;
        let s = make_ghz(n).unwrap();
        let ops = SpinOperators::new(n);
        let h = &ops.jz * Complex64::new(detuning, 0.0);
        let steps = 2000;
        let dt = time / steps as f64;
        let mut rho = s.density_matrix().clone();
        let c = |x: f64| Complex64::new(x, 0.0);
        for _ in 0..steps {
            let k1 = lindblad_rhs(&rho, &h, &ops.jz, gamma);
            let k2 = lindblad_rhs(&(&rho + &k1 * c(dt / 2.0)), &h, &ops.jz, gamma);
            let k3 = lindblad_rhs(&(&rho + &k2 * c(dt / 2.0)), &h, &ops.jz, gamma);
            let k4 = lindblad_rhs(&(&rho + &k3 * c(dt)), &h, &ops.jz, gamma);
            rho += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0);
        }
        let exact = evolve_ramsey(&s, detuning, time, &NoiseModel::new(gamma, 0.0).unwrap()).unwrap();
        assert!((exact.density_matrix() - &rho).norm() < 1e-10);
        // corner coherence magnitude 0.5·e^{−γ(m−m')²t} = 0.5·e^{−0.4}
        let corner = exact.density_matrix()[(2, 0)].norm();
        assert!(close(corner, 0.5 * (-0.4f64).exp(), 1e-15));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let s = evolve_ramsey(&make_ghz(3).unwrap(), 1.0, 0.2, &NoiseModel::NOISELESS).unwrap();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let r = apply_rotation(&s, axis, 0.0);
            assert!((r.density_matrix() - s.density_matrix()).norm() < 1e-13);
        }
    }

    #[test]
    fn half_pi_y_rotation_of_spin_up_equalises() {
        let mut rho = CMatrix::zeros(2, 2);
        rho[(1, 1)] = Complex64::new(1.0, 0.0);
        let up = CollectiveState::from_density_matrix(1, rho).unwrap();
        let r = apply_rotation(&up, Axis::Y, FRAC_PI_2);
        let p = r.populations();
        assert!(close(p[0], 0.5, 1e-14) && close(p[1], 0.5, 1e-14));
    }

    #[test]
    fn full_turn_returns_even_n_state() {
        let s = evolve_ramsey(&make_ghz(4).unwrap(), 0.7, 1.0, &NoiseModel::NOISELESS).unwrap();
        let r = apply_rotation(&s, Axis::Y, 2.0 * PI);
        assert!((r.density_matrix() - s.density_matrix()).norm() < 1e-10);
        // odd N picks up a global −1, invisible in ρ
        let s3 = evolve_ramsey(&make_ghz(3).unwrap(), 0.7, 1.0, &NoiseModel::NOISELESS).unwrap();
        let r3 = apply_rotation(&s3, Axis::Y, 2.0 * PI);
        assert!((r3.density_matrix() - s3.density_matrix()).norm() < 1e-10);
    }

    #[test]
    fn rotations_and_twist_preserve_trace_and_purity() {
        let s = evolve_ramsey(&make_ghz(6).unwrap(), 1.3, 0.5, &NoiseModel::new(0.2, 0.0).unwrap()).unwrap();
        let before = s.purity();
        for out in [
            apply_rotation(&s, Axis::X, 0.9),
            apply_rotation(&s, Axis::Y, -2.1),
            apply_oat_readout(&s),
        ] {
            assert!(close(out.trace(), 1.0, 1e-12));
            assert!(close(out.purity(), before, 1e-12));
            assert!(out.hermiticity_error() < 1e-12);
            assert!(out.min_eigenvalue() > -1e-10);
        }
    }

    #[test]
    fn oat_readout_n4_quarter_phase_concentrates_on_edges() {
        let dist =
            ramsey_distribution(4, Readout::Interaction, 0.0, 1.0, FRAC_PI_2, &NoiseModel::NOISELESS).unwrap();
        // p_{±N/2} = ½{1 ± (−1)^⌈N/2+1⌉}: (−1)^3 = −1 puts everything at m = −2
        assert!(close(dist[0], 1.0, 1e-12));
        assert!(dist[1..].iter().all(|&p| p.abs() < 1e-12));
    }

    #[test]
    fn oat_readout_n2_zero_phase_is_balanced() {
        let dist = ramsey_distribution(2, Readout::Interaction, 0.0, 1.0, 0.0, &NoiseModel::NOISELESS).unwrap();
        assert!(close(dist[0], 0.5, 1e-12));
        assert!(close(dist[2], 0.5, 1e-12));
        assert!(dist[1].abs() < 1e-12);
    }

    #[test]
    fn detection_noise_limits() {
        let s = make_ghz(4).unwrap();
        let exact = measure_distribution(&s, &NoiseModel::NOISELESS);
        assert_eq!(exact, vec![0.5, 0.0, 0.0, 0.0, 0.5]);

        let uniform = vec![0.2; 5];
        let blurred = blur(&uniform, 1.3);
        assert!(blurred.iter().all(|&p| close(p, 0.2, 1e-15)));
    }

    #[test]
    fn detection_noise_blur_is_symmetric_and_normalised() {
        let s = make_ghz(4).unwrap();
        let out = measure_distribution(&s, &NoiseModel::new(0.0, 0.5).unwrap());
        assert!(close(out.iter().sum::<f64>(), 1.0, 1e-15));
        for k in 0..5 {
            assert!(close(out[k], out[4 - k], 1e-15));
        }
        // direct arithmetic: edge rows average (1/2)·w0 and the far corner
        let w = |d: f64| (-d * d / 0.5).exp();
        let edge = 0.5 * (w(0.0) + w(4.0)) / (w(0.0) + w(1.0) + w(2.0) + w(3.0) + w(4.0));
        let next = 0.5 * (w(1.0) + w(3.0)) / (w(1.0) + w(0.0) + w(1.0) + w(2.0) + w(3.0));
        let mid = 0.5 * (w(2.0) + w(2.0)) / (w(2.0) + w(1.0) + w(0.0) + w(1.0) + w(2.0));
        let total = 2.0 * edge + 2.0 * next + mid;
        assert!(close(out[0], edge / total, 1e-15));
        assert!(close(out[1], next / total, 1e-15));
        assert!(close(out[2], mid / total, 1e-15));
    }

    #[test]
    fn sign_of_zero_is_non_positive() {
        let dist = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(expectation(Observable::Sign, &dist).unwrap(), -1.0);
    }

    #[test]
    fn sign_expectation_n4_quarter_phase() {
        let dist =
            ramsey_distribution(4, Readout::Interaction, 0.0, 1.0, FRAC_PI_2, &NoiseModel::NOISELESS).unwrap();
        assert!(close(expectation(Observable::Sign, &dist).unwrap(), -1.0, 1e-12));
    }

    #[test]
    fn symmetric_distribution_has_zero_half_population() {
        let dist = vec![0.1, 0.3, 0.0, 0.3, 0.1];
        let total: f64 = dist.iter().sum();
        let dist: Vec<f64> = dist.iter().map(|p| p / total).collect();
        assert!(expectation(Observable::HalfPopulation, &dist).unwrap().abs() < 1e-15);
    }

    #[test]
    fn expectation_rejects_unnormalized() {
        assert!(expectation(Observable::Parity, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn parity_pipeline_matches_cosine_fringe() {
        for n in 1..=8usize {
            for i in 0..32 {
                let phase = 2.0 * PI * i as f64 / 32.0;
                let dist = ramsey_distribution(n, Readout::Parity, 0.0, 1.0, phase, &NoiseModel::NOISELESS).unwrap();
                let expected = if n % 2 == 0 { 1.0 } else { -1.0 } * phase.cos();
                let got = expectation(Observable::Parity, &dist).unwrap();
                assert!(close(got, expected, 1e-9), "n={n} phase={phase}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn sign_pipeline_matches_sine_fringe() {
        for n in 1..=8usize {
            let xi = if ((n + 3) / 2) % 2 == 0 { 1.0 } else { -1.0 };
            for i in 0..32 {
                let phase = 2.0 * PI * i as f64 / 32.0;
                let dist =
                    ramsey_distribution(n, Readout::Interaction, 0.0, 1.0, phase, &NoiseModel::NOISELESS).unwrap();
                let got = expectation(Observable::Sign, &dist).unwrap();
                assert!(close(got, xi * phase.sin(), 1e-9), "n={n} phase={phase}: {got}");
            }
        }
    }

    #[test]
    fn dephasing_exponent_of_element_wise_solution() {
        let coeff = dephasing_exponent(4, Readout::Parity, Observable::Parity, &[0.5, 1.0, 2.547], 3e-3).unwrap();
        assert!(close(coeff, 1.0, 1e-9), "fitted coefficient {coeff}");
    }

    #[test]
    fn detection_noise_gain_ordering() {
        for &sigma in &[0.5, 0.75, 1.0] {
            let parity = metrological_gain_db(4, Readout::Parity, Observable::Parity, sigma).unwrap();
            let half = metrological_gain_db(4, Readout::Interaction, Observable::HalfPopulation, sigma).unwrap();
            let sign = metrological_gain_db(4, Readout::Interaction, Observable::Sign, sigma).unwrap();
            assert!(sign >= half && half >= parity, "σ={sigma}: {sign} {half} {parity}");
        }
    }

    #[test]
    fn noiseless_gain_is_heisenberg() {
        let g = metrological_gain_db(4, Readout::Interaction, Observable::Sign, 0.0).unwrap();
        assert!(close(g, 10.0 * 4f64.log10(), 1e-3), "{g}");
    }
}
