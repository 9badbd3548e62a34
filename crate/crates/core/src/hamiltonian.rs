//! Tilted transverse-field Ising models and the initial-state families.
//!
//! All models share the form
//! `H = Σ_{i<j} J_ij Z_i Z_j + h Σ_i X_i + F Σ_i i Z_i`, sites `i = 0…L-1`,
//! open boundaries. The nearest-neighbor chain is the special case
//! `J_ij = J δ_{j,i+1}`. `Z|0⟩ = +|0⟩`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::state::{BitString, StateVector, ABSOLUTE_MAX_QUBITS, DEFAULT_MAX_QUBITS};

/// Default power-law exponent for trapped-ion couplings `J0/|i-j|^α`.
pub const DEFAULT_POWER_LAW_EXPONENT: f64 = 1.13;

/// Largest chain searched exhaustively for `|z_⋆⟩`.
pub const MAX_EXHAUSTIVE_QUBITS: usize = 20;

/// Nearest-neighbor tilted TFIM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub l: usize,
    pub j: f64,
    pub h: f64,
    pub f: f64,
}

impl ChainSpec {
    pub fn new(l: usize, j: f64, h: f64, f: f64) -> Self {
        Self { l, j, h, f }
    }

    pub fn to_long_range(&self) -> LongRangeSpec {
        let mut couplings = vec![vec![0.0; self.l]; self.l];
        for i in 0..self.l.saturating_sub(1) {
            couplings[i][i + 1] = self.j;
            couplings[i + 1][i] = self.j;
        }
        LongRangeSpec {
            l: self.l,
            couplings,
            h: self.h,
            f: self.f,
        }
    }
}

/// Power-law coupling generator `J_ij = j0 / |i-j|^exponent` for
/// `|i-j| ≤ cutoff`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub j0: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default)]
    pub cutoff: Option<usize>,
}

fn default_exponent() -> f64 {
    DEFAULT_POWER_LAW_EXPONENT
}

impl PowerLaw {
    pub fn couplings(&self, l: usize) -> Vec<Vec<f64>> {
        let cutoff = self.cutoff.unwrap_or(l);
        let mut m = vec![vec![0.0; l]; l];
        for (i, row) in m.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                let d = i.abs_diff(k);
                if d > 0 && d <= cutoff {
                    *v = self.j0 / (d as f64).powf(self.exponent);
                }
            }
        }
        m
    }
}

/// Long-range Ising model with an explicit symmetric coupling matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRangeSpec {
    pub l: usize,
    pub couplings: Vec<Vec<f64>>,
    pub h: f64,
    pub f: f64,
}

impl LongRangeSpec {
    pub fn from_power_law(l: usize, law: &PowerLaw, h: f64, f: f64) -> Self {
        Self {
            l,
            couplings: law.couplings(l),
            h,
            f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.couplings.len() != self.l || self.couplings.iter().any(|r| r.len() != self.l) {
            return Err(Error::Config(format!(
                "coupling matrix must be {0}x{0}",
                self.l
            )));
        }
        for i in 0..self.l {
            if self.couplings[i][i] != 0.0 {
                return Err(Error::Config(format!("coupling J[{i}][{i}] must be zero")));
            }
            for k in 0..i {
                if (self.couplings[i][k] - self.couplings[k][i]).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "coupling matrix is not symmetric at ({i}, {k})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Either model family.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Chain(ChainSpec),
    LongRange(LongRangeSpec),
}

impl ModelSpec {
    pub fn l(&self) -> usize {
        match self {
            ModelSpec::Chain(c) => c.l,
            ModelSpec::LongRange(m) => m.l,
        }
    }

    pub fn to_long_range(&self) -> LongRangeSpec {
        match self {
            ModelSpec::Chain(c) => c.to_long_range(),
            ModelSpec::LongRange(m) => m.clone(),
        }
    }
}

impl From<ChainSpec> for ModelSpec {
    fn from(c: ChainSpec) -> Self {
        ModelSpec::Chain(c)
    }
}

impl From<LongRangeSpec> for ModelSpec {
    fn from(m: LongRangeSpec) -> Self {
        ModelSpec::LongRange(m)
    }
}

/// Z-diagonal part stored densely plus a uniform transverse field applied
/// implicitly: `H ψ = diagonal ⊙ ψ + h Σ_i X_i ψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseHamiltonian {
    n_qubits: usize,
    diagonal: Vec<f64>,
    x_field: f64,
}

impl SparseHamiltonian {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn x_field(&self) -> f64 {
        self.x_field
    }

    /// `out = H · input`
    pub fn apply(&self, input: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(input.len(), self.diagonal.len());
        debug_assert_eq!(out.len(), self.diagonal.len());
        let h = self.x_field;
        let n = self.n_qubits;
        for (s, (o, d)) in out.iter_mut().zip(&self.diagonal).enumerate() {
            let mut acc = input[s] * *d;
            if h != 0.0 {
                let mut flips = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    flips += input[s ^ (1 << i)];
                }
                acc += flips * h;
            }
            *o = acc;
        }
    }

    pub fn apply_state(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.dim() != self.dim() {
            return Err(Error::Dimension("state and Hamiltonian sizes differ".into()));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim()];
        self.apply(psi.amplitudes(), &mut out);
        StateVector::from_amplitudes(out)
    }

    /// Re⟨ψ|H|ψ⟩
    pub fn energy(&self, psi: &StateVector) -> Result<f64> {
        let h_psi = self.apply_state(psi)?;
        Ok(psi.inner(&h_psi)?.re)
    }

    /// Dense row-major real matrix (the model is real symmetric).
    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d * d];
        for s in 0..d {
            m[s * d + s] = self.diagonal[s];
            for i in 0..self.n_qubits {
                m[s * d + (s ^ (1 << i))] += self.x_field;
            }
        }
        m
    }

    /// Upper bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let dmax = self.diagonal.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        dmax + self.x_field.abs() * self.n_qubits as f64
    }
}

/// Builds the Hamiltonian; `max_qubits` bounds L from above.
pub fn build_hamiltonian(spec: &ModelSpec, max_qubits: usize) -> Result<SparseHamiltonian> {
    let lr = spec.to_long_range();
    let l = lr.l;
    if l < 2 || l > max_qubits.min(ABSOLUTE_MAX_QUBITS) {
        return Err(Error::Resource(format!(
            "chain length {l} outside [2, {}]",
            max_qubits.min(ABSOLUTE_MAX_QUBITS)
        )));
    }
    lr.validate()?;
    Ok(SparseHamiltonian {
        n_qubits: l,
        diagonal: diagonal_energies(&lr),
        x_field: lr.h,
    })
}

/// Eigenvalues of the Z-only terms on every computational state.
pub fn diagonal_energies(spec: &LongRangeSpec) -> Vec<f64> {
    let l = spec.l;
    let mut pairs = Vec::new();
    for i in 0..l {
        for k in (i + 1)..l {
            let c = spec.couplings[i][k];
            if c != 0.0 {
                pairs.push((i, k, c));
            }
        }
    }
    (0..1usize << l)
        .map(|s| {
            let z = |i: usize| if (s >> i) & 1 == 0 { 1.0 } else { -1.0 };
            let zz: f64 = pairs.iter().map(|&(i, k, c)| c * z(i) * z(k)).sum();
            let tilt: f64 = (0..l).map(|i| spec.f * i as f64 * z(i)).sum();
            zz + tilt
        })
        .collect()
}

/// Computational state minimizing `|⟨z|H_diag|z⟩|`; ties go to the smallest index.
pub fn find_z_star(spec: &ChainSpec) -> Result<BitString> {
    if spec.l > MAX_EXHAUSTIVE_QUBITS {
        return Err(Error::Resource(format!(
            "exhaustive z-star search limited to {MAX_EXHAUSTIVE_QUBITS} sites"
        )));
    }
    Ok(argmin_abs(&diagonal_energies(&spec.to_long_range())))
}

fn argmin_abs(diag: &[f64]) -> BitString {
    let mut best = 0;
    for (s, e) in diag.iter().enumerate() {
        if e.abs() < diag[best].abs() {
            best = s;
        }
    }
    BitString(best as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    ZPolarized,
    XPolarized,
    YPolarized,
    ZStar,
    RandomBloch,
}

impl InitialKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitialKind::ZPolarized => "z_polarized",
            InitialKind::XPolarized => "x_polarized",
            InitialKind::YPolarized => "y_polarized",
            InitialKind::ZStar => "z_star",
            InitialKind::RandomBloch => "random_bloch",
        }
    }

    /// True for the families whose members are stabilizer states.
    pub fn is_stabilizer(&self) -> bool {
        !matches!(self, InitialKind::RandomBloch)
    }
}

impl std::fmt::Display for InitialKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InitialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "z_polarized" => InitialKind::ZPolarized,
            "x_polarized" => InitialKind::XPolarized,
            "y_polarized" => InitialKind::YPolarized,
            "z_star" => InitialKind::ZStar,
            "random_bloch" => InitialKind::RandomBloch,
            other => return Err(Error::Config(format!("unknown initial-state kind {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSpec {
    pub kind: InitialKind,
    /// Ensemble size; only meaningful for `random_bloch`.
    pub ensemble_size: usize,
    pub seed: u64,
}

impl InitialStateSpec {
    pub fn new(kind: InitialKind) -> Self {
        Self {
            kind,
            ensemble_size: 1,
            seed: 0,
        }
    }

    pub fn random_bloch(ensemble_size: usize, seed: u64) -> Self {
        Self {
            kind: InitialKind::RandomBloch,
            ensemble_size,
            seed,
        }
    }
}

/// Prepares the initial state (or ensemble) for the model `ham` acts on.
/// Deterministic families return a single state.
pub fn prepare_initial_state(spec: &InitialStateSpec, ham: &SparseHamiltonian) -> Result<Vec<StateVector>> {
    let l = ham.n_qubits();
    let h = FRAC_1_SQRT_2;
    let single = |site: [Complex64; 2]| StateVector::product(&vec![site; l]);
    Ok(match spec.kind {
        InitialKind::ZPolarized => vec![StateVector::zero_state(l)?],
        InitialKind::XPolarized => vec![single([Complex64::new(h, 0.0), Complex64::new(h, 0.0)])?],
        InitialKind::YPolarized => vec![single([Complex64::new(h, 0.0), Complex64::new(0.0, h)])?],
        InitialKind::ZStar => {
            let z = argmin_abs(ham.diagonal());
            vec![StateVector::basis(l, z.0 as usize)?]
        }
        InitialKind::RandomBloch => {
            if spec.ensemble_size == 0 {
                return Err(Error::Config("random_bloch ensemble size must be at least 1".into()));
            }
            let mut rng = SeededRng::new(spec.seed, 0);
            (0..spec.ensemble_size)
                .map(|_| random_bloch_product(l, &mut rng))
                .collect::<Result<_>>()?
        }
    })
}

/// Per site: `φ ~ U[0, 2π)`, `cos θ ~ U[-1, 1]`, state `R_z(φ) R_y(θ) |0⟩`.
pub fn random_bloch_product(l: usize, rng: &mut SeededRng) -> Result<StateVector> {
    let sites: Vec<[Complex64; 2]> = (0..l)
        .map(|_| {
            let phi = rng.random::<f64>() * 2.0 * PI;
            let cos_theta = 2.0 * rng.random::<f64>() - 1.0;
            let theta = cos_theta.clamp(-1.0, 1.0).acos();
            let c = (theta / 2.0).cos();
            let s = (theta / 2.0).sin();
            [
                Complex64::from_polar(c, -phi / 2.0),
                Complex64::from_polar(s, phi / 2.0),
            ]
        })
        .collect();
    StateVector::product(&sites)
}

/// `build_hamiltonian` with the default size limit.
pub fn build_default(spec: &ModelSpec) -> Result<SparseHamiltonian> {
    build_hamiltonian(spec, DEFAULT_MAX_QUBITS)
}
