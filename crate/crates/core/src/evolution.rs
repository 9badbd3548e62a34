//! Time evolution: Krylov (Lanczos) propagation, dense eigendecomposition for
//! small chains, and second-order Trotter (Strang) circuits.

use faer::{Mat, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::SparseHamiltonian;
use crate::state::{gates, Matrix2, StateVector};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Sorted, non-negative sample times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `n` log-spaced points in `[t_min, t_max]`, optionally preceded by `t = 0`.
    pub fn log(t_min: f64, t_max: f64, n: usize, include_zero: bool) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min) || n < 2 {
            return Err(Error::Config(format!(
                "log grid needs 0 < t_min < t_max and n >= 2 (got {t_min}, {t_max}, {n})"
            )));
        }
        let (a, b) = (t_min.log10(), t_max.log10());
        let mut times = Vec::with_capacity(n + 1);
        if include_zero {
            times.push(0.0);
        }
        times.extend((0..n).map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)));
        // pin the endpoints exactly
        let last = times.len() - 1;
        times[last] = t_max;
        times[usize::from(include_zero)] = t_min;
        Ok(Self { times })
    }

    /// `n` equally spaced points `t_max·k/(n-1)`, `k = 0…n-1`.
    pub fn linear(t_max: f64, n: usize) -> Result<Self> {
        if !(t_max > 0.0) || n < 2 {
            return Err(Error::Config("linear grid needs t_max > 0 and n >= 2".into()));
        }
        Ok(Self {
            times: (0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect(),
        })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Config("time grid is empty".into()));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config("times must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self::log(0.1, 1e3, 120, true).expect("default grid is valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    /// Krylov subspace dimension.
    pub dimension: usize,
    /// Local error tolerance per accepted step.
    pub tolerance: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            dimension: 30,
            tolerance: 1e-10,
        }
    }
}

/// How to propagate under a time-independent Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagator {
    Krylov,
    Eigen,
    /// Dense diagonalization up to [`EIGEN_AUTO_MAX_QUBITS`], Krylov beyond.
    Auto,
    /// Second-order Strang steps of size `dt` (the digital protocol).
    Digital { dt: f64 },
}

impl Propagator {
    /// Whether `evolve` diagonalizes densely for `n_qubits` sites.
    pub fn uses_eigen(&self, n_qubits: usize) -> bool {
        match self {
            Propagator::Eigen => true,
            Propagator::Auto => n_qubits <= EIGEN_AUTO_MAX_QUBITS,
            Propagator::Krylov | Propagator::Digital { .. } => false,
        }
    }
}

/// Largest chain for which `Propagator::Auto` diagonalizes.
pub const EIGEN_AUTO_MAX_QUBITS: usize = 12;

/// Hard limit for dense diagonalization (memory ~ 8·4^L bytes).
pub const EIGEN_MAX_QUBITS: usize = 13;

/// Evolves `psi0` and returns `ψ(t)` at every grid time.
pub fn evolve(
    ham: &SparseHamiltonian,
    psi0: &StateVector,
    grid: &TimeGrid,
    propagator: Propagator,
    krylov: &KrylovConfig,
) -> Result<Vec<StateVector>> {
    match propagator {
        Propagator::Digital { dt } => digital_evolve(ham, psi0, grid, dt),
        p if p.uses_eigen(ham.n_qubits()) => EigenPropagator::new(ham)?.evolve(psi0, grid),
        _ => exact_evolve(ham, psi0, grid, krylov),
    }
}

fn check_inputs(ham: &SparseHamiltonian, psi0: &StateVector) -> Result<()> {
    if psi0.dim() != ham.dim() {
        return Err(Error::Dimension(format!(
            "{}-qubit state under a {}-qubit Hamiltonian",
            psi0.n_qubits(),
            ham.n_qubits()
        )));
    }
    psi0.check_normalized()
}

fn checked(state: StateVector) -> Result<StateVector> {
    state.check_normalized()?;
    Ok(state)
}

/// Lanczos basis and tridiagonal spectrum for one Krylov step.
struct LanczosStep {
    basis: Vec<Vec<Complex64>>,
    ritz_values: Vec<f64>,
    /// Rows: Krylov index; columns: Ritz vector.
    ritz_vectors: Mat<f64>,
    /// Residual norm β_m (zero after a happy breakdown).
    residual: f64,
}

impl LanczosStep {
    fn build(ham: &SparseHamiltonian, v0: &[Complex64], m: usize) -> Result<Self> {
        let dim = v0.len();
        let m = m.min(dim).max(1);
        let breakdown = 1e-12 * ham.norm_bound().max(1.0);
        let mut basis: Vec<Vec<Complex64>> = vec![v0.to_vec()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut w = vec![ZERO; dim];
        let mut residual = 0.0;
        for k in 0..m {
            ham.apply(&basis[k], &mut w);
            let a: f64 = basis[k].iter().zip(&w).map(|(v, x)| (v.conj() * x).re).sum();
            alpha.push(a);
            // one full Gram–Schmidt pass against the whole basis
            for b in &basis {
                let overlap: Complex64 = b.iter().zip(&w).map(|(v, x)| v.conj() * x).sum();
                w.iter_mut().zip(b).for_each(|(x, v)| *x -= overlap * v);
            }
            let norm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm < breakdown {
                residual = 0.0;
                break;
            }
            residual = norm;
            if k + 1 < m {
                beta.push(norm);
                basis.push(w.iter().map(|x| x / norm).collect());
            }
        }
        let n = alpha.len();
        basis.truncate(n);
        let t = Mat::from_fn(n, n, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = t
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::LinAlg(format!("tridiagonal eigensolver failed: {e:?}")))?;
        let ritz_values = (0..n).map(|i| eig.S().column_vector()[i]).collect();
        let ritz_vectors = eig.U().to_owned();
        Ok(Self {
            basis,
            ritz_values,
            ritz_vectors,
            residual,
        })
    }

    /// Coefficients of `exp(-i T τ) e_1` in the Krylov basis.
    fn coefficients(&self, tau: f64) -> Vec<Complex64> {
        let n = self.ritz_values.len();
        let q = &self.ritz_vectors;
        let weights: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(q[(0, k)], -self.ritz_values[k] * tau))
            .collect();
        (0..n)
            .map(|i| (0..n).map(|k| weights[k] * q[(i, k)]).sum())
            .collect()
    }

    fn error_estimate(&self, tau: f64) -> f64 {
        if self.residual == 0.0 {
            return 0.0;
        }
        let c = self.coefficients(tau);
        self.residual * c[c.len() - 1].norm()
    }

    /// Largest accepted step not exceeding `max_tau`; found by halving then
    /// bisection, without additional matrix-vector products.
    fn accepted_step(&self, max_tau: f64, tolerance: f64) -> f64 {
        if self.error_estimate(max_tau) <= tolerance {
            return max_tau;
        }
        let mut hi = max_tau;
        let mut lo = max_tau * 0.5;
        while self.error_estimate(lo) > tolerance {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-300 {
                return 0.0;
            }
        }
        for _ in 0..12 {
            let mid = 0.5 * (lo + hi);
            if self.error_estimate(mid) <= tolerance {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn state_at(&self, tau: f64) -> Vec<Complex64> {
        let c = self.coefficients(tau);
        let mut out = vec![ZERO; self.basis[0].len()];
        for (ck, vk) in c.iter().zip(&self.basis) {
            out.iter_mut().zip(vk).for_each(|(o, v)| *o += ck * v);
        }
        out
    }
}

/// Krylov propagation with adaptive sub-stepping. A single Lanczos basis
/// serves every grid time that falls inside its accepted step.
pub fn exact_evolve(
    ham: &SparseHamiltonian,
    psi0: &StateVector,
    grid: &TimeGrid,
    cfg: &KrylovConfig,
) -> Result<Vec<StateVector>> {
    check_inputs(ham, psi0)?;
    if cfg.dimension < 2 || !(cfg.tolerance > 0.0) {
        return Err(Error::Config("Krylov dimension must be >= 2 and tolerance > 0".into()));
    }
    let times = grid.times();
    let mut out = Vec::with_capacity(times.len());
    let mut current = psi0.amplitudes().to_vec();
    let mut t_cur = 0.0;
    let mut next = 0;
    while next < times.len() && times[next] <= t_cur {
        out.push(checked(StateVector::from_amplitudes(current.clone())?)?);
        next += 1;
    }
    let t_end = grid.t_max();
    while next < times.len() {
        let step = LanczosStep::build(ham, &current, cfg.dimension)?;
        let max_tau = t_end - t_cur;
        let tau = step.accepted_step(max_tau, cfg.tolerance);
        if tau <= 1e-13 * t_end.max(1.0) {
            return Err(Error::Convergence {
                residual: step.error_estimate(1e-13 * t_end.max(1.0)),
                tolerance: cfg.tolerance,
            });
        }
        let reached = if tau >= max_tau { t_end } else { t_cur + tau };
        while next < times.len() && times[next] <= reached {
            let amps = step.state_at(times[next] - t_cur);
            out.push(checked(StateVector::from_amplitudes(amps)?)?);
            next += 1;
        }
        current = step.state_at(reached - t_cur);
        t_cur = reached;
        log::trace!("krylov step to t = {t_cur:.6e} (tau = {tau:.3e})");
    }
    Ok(out)
}

/// Full spectral decomposition of a (real symmetric) Hamiltonian.
pub struct EigenPropagator {
    n_qubits: usize,
    energies: Vec<f64>,
    vectors: Mat<f64>,
}

impl EigenPropagator {
    pub fn new(ham: &SparseHamiltonian) -> Result<Self> {
        if ham.n_qubits() > EIGEN_MAX_QUBITS {
            return Err(Error::Resource(format!(
                "dense diagonalization limited to {EIGEN_MAX_QUBITS} qubits"
            )));
        }
        let d = ham.dim();
        let dense = ham.to_dense();
        let m = Mat::from_fn(d, d, |i, j| dense[i * d + j]);
        drop(dense);
        let eig = m
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::LinAlg(format!("eigensolver failed: {e:?}")))?;
        let energies = (0..d).map(|i| eig.S().column_vector()[i]).collect();
        Ok(Self {
            n_qubits: ham.n_qubits(),
            energies,
            vectors: eig.U().to_owned(),
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// All grid times at once: `ψ(t) = V (e^{-iEt} ⊙ Vᵀ ψ0)` as one product.
    pub fn evolve(&self, psi0: &StateVector, grid: &TimeGrid) -> Result<Vec<StateVector>> {
        if psi0.n_qubits() != self.n_qubits {
            return Err(Error::Dimension("state and propagator sizes differ".into()));
        }
        psi0.check_normalized()?;
        let d = self.energies.len();
        let nt = grid.len();
        let amps = psi0.amplitudes();
        let v = &self.vectors;
        // c = Vᵀ ψ0, real and imaginary parts separately
        let psi_mat = Mat::from_fn(d, 2, |i, j| if j == 0 { amps[i].re } else { amps[i].im });
        let c = v.transpose() * &psi_mat;
        let times = grid.times();
        // columns [Re(coeff(t_0..)) | Im(coeff(t_0..))]
        let coeffs = Mat::from_fn(d, 2 * nt, |k, col| {
            let t = times[col % nt];
            let phase = Complex64::from_polar(1.0, -self.energies[k] * t);
            let z = phase * Complex64::new(c[(k, 0)], c[(k, 1)]);
            if col < nt {
                z.re
            } else {
                z.im
            }
        });
        let states = v * &coeffs;
        (0..nt)
            .map(|ti| {
                let a = (0..d)
                    .map(|i| Complex64::new(states[(i, ti)], states[(i, nt + ti)]))
                    .collect();
                checked(StateVector::from_amplitudes(a)?)
            })
            .collect()
    }
}

/// Convenience wrapper around [`EigenPropagator`].
pub fn eigen_evolve(ham: &SparseHamiltonian, psi0: &StateVector, grid: &TimeGrid) -> Result<Vec<StateVector>> {
    check_inputs(ham, psi0)?;
    EigenPropagator::new(ham)?.evolve(psi0, grid)
}

/// One second-order Trotter step
/// `U_diag(δt/2) · Π_i R_x(2hδt) · U_diag(δt/2)` where `U_diag` applies all
/// Z-diagonal terms (couplings and tilt) as a single phase per basis state.
#[derive(Clone, Debug)]
pub struct StrangStepSpec {
    pub dt: f64,
    half_phases: Vec<Complex64>,
    rx: Matrix2,
    n_qubits: usize,
}

impl StrangStepSpec {
    pub fn new(ham: &SparseHamiltonian, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("Trotter step must be positive (got {dt})")));
        }
        let half_phases = ham
            .diagonal()
            .iter()
            .map(|e| Complex64::from_polar(1.0, -e * dt / 2.0))
            .collect();
        Ok(Self {
            dt,
            half_phases,
            rx: gates::rx(2.0 * ham.x_field() * dt),
            n_qubits: ham.n_qubits(),
        })
    }

    /// Rotation angle of the transverse-field layer.
    pub fn rx_angle(h: f64, dt: f64) -> f64 {
        2.0 * h * dt
    }

    /// Tilt contribution to the single-qubit Z phase at site `i`: `2 F i δt`.
    pub fn tilt_phase(f: f64, site: usize, dt: f64) -> f64 {
        2.0 * f * site as f64 * dt
    }

    pub fn apply(&self, psi: &mut StateVector) -> Result<()> {
        if psi.n_qubits() != self.n_qubits {
            return Err(Error::Dimension("state and circuit sizes differ".into()));
        }
        psi.apply_diagonal_in_place(&self.half_phases)?;
        for site in 0..self.n_qubits {
            psi.apply_1q_unchecked(site, &self.rx);
        }
        psi.apply_diagonal_in_place(&self.half_phases)?;
        Ok(())
    }
}

/// Applies one Strang step to `psi`.
pub fn strang_step(ham: &SparseHamiltonian, psi: &mut StateVector, dt: f64) -> Result<()> {
    StrangStepSpec::new(ham, dt)?.apply(psi)
}

/// Trotterized evolution sampled on `grid`; every grid time must be an
/// integer multiple of `dt`.
pub fn digital_evolve(
    ham: &SparseHamiltonian,
    psi0: &StateVector,
    grid: &TimeGrid,
    dt: f64,
) -> Result<Vec<StateVector>> {
    check_inputs(ham, psi0)?;
    let step = StrangStepSpec::new(ham, dt)?;
    let mut targets = Vec::with_capacity(grid.len());
    for &t in grid.times() {
        let n = (t / dt).round();
        if (n * dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::Alignment(format!(
                "time {t} is not a multiple of the Trotter step {dt}"
            )));
        }
        targets.push(n as u64);
    }
    let mut psi = psi0.clone();
    let mut done = 0u64;
    let mut out = Vec::with_capacity(targets.len());
    for n in targets {
        while done < n {
            step.apply(&mut psi)?;
            done += 1;
        }
        out.push(checked(psi.clone())?);
    }
    Ok(out)
}
