//! Dense statevectors, Pauli strings and single/two-qubit gate application.
//!
//! Site `i` is bit `i` of the basis-state index (little-endian). Pauli masks
//! and measured bitstrings use the same convention.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Largest chain length accepted by default.
pub const DEFAULT_MAX_QUBITS: usize = 14;

/// Hard ceiling on the statevector size regardless of configuration.
pub const ABSOLUTE_MAX_QUBITS: usize = 26;

/// Normalization tolerance used by operations with a normalized-input contract.
pub const NORM_TOLERANCE: f64 = 1e-6;

pub type Matrix2 = [[Complex64; 2]; 2];
pub type Matrix4 = [[Complex64; 4]; 4];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// A pure state on `n_qubits` sites.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_size(n_qubits, ABSOLUTE_MAX_QUBITS)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::Dimension(format!(
                "basis index {index} out of range for {n_qubits} qubits"
            )));
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(Self { n_qubits, amps })
    }

    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    /// Wraps raw amplitudes; the length must be a power of two. No
    /// normalization is applied.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let dim = amps.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "amplitude length {dim} is not a power of two"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        check_size(n_qubits, ABSOLUTE_MAX_QUBITS)?;
        Ok(Self { n_qubits, amps })
    }

    /// Product state from per-site single-qubit states `(a0, a1)`; site 0 first.
    pub fn product(sites: &[[Complex64; 2]]) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(Error::Dimension("product state needs at least one site".into()));
        }
        check_size(n, ABSOLUTE_MAX_QUBITS)?;
        let mut amps = vec![ONE; 1 << n];
        for (s, a) in amps.iter_mut().enumerate() {
            for (i, site) in sites.iter().enumerate() {
                *a *= site[(s >> i) & 1];
            }
        }
        Ok(Self { n_qubits: n, amps })
    }

    /// Haar-random pure state (normalized complex Gaussian vector).
    pub fn haar_random(n_qubits: usize, rng: &mut SeededRng) -> Result<Self> {
        check_size(n_qubits, ABSOLUTE_MAX_QUBITS)?;
        let amps: Vec<Complex64> = (0..1usize << n_qubits)
            .map(|_| {
                let re: f64 = rng.sample(rand_distr::StandardNormal);
                let im: f64 = rng.sample(rand_distr::StandardNormal);
                Complex64::new(re, im)
            })
            .collect();
        let mut state = Self { n_qubits, amps };
        state.renormalize()?;
        Ok(state)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Rescales to unit norm. Fails on the zero vector.
    pub fn renormalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Contract("cannot normalize a zero or non-finite vector".into()));
        }
        let inv = 1.0 / n;
        self.amps.iter_mut().for_each(|a| *a *= inv);
        Ok(())
    }

    /// Errors unless the norm is within [`NORM_TOLERANCE`] of one.
    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Contract(format!(
                "state is not normalized (norm = {n:.9})"
            )));
        }
        Ok(())
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "inner product of {}- and {}-qubit states",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Global-phase-invariant fidelity |⟨self|other⟩|².
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// Probability of each computational basis outcome.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn apply_pauli(&self, p: &PauliString) -> Result<StateVector> {
        let mut out = self.clone();
        out.apply_pauli_in_place(p)?;
        Ok(out)
    }

    /// Applies the Hermitian Pauli `i^{|x∧z|} X^x Z^z`.
    pub fn apply_pauli_in_place(&mut self, p: &PauliString) -> Result<()> {
        p.check_fits(self.n_qubits)?;
        let phase = p.hermitian_phase();
        let x = p.x_mask as usize;
        let z = p.z_mask as usize;
        let old = self.amps.clone();
        for (s, a) in self.amps.iter_mut().enumerate() {
            let src = s ^ x;
            let sign = if (z & src).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            *a = phase * old[src] * sign;
        }
        Ok(())
    }

    /// ⟨ψ|P|ψ⟩ for the Hermitian Pauli; real for normalized input.
    pub fn pauli_expectation(&self, p: &PauliString) -> Result<f64> {
        self.check_normalized()?;
        p.check_fits(self.n_qubits)?;
        let phase = p.hermitian_phase();
        let x = p.x_mask as usize;
        let z = p.z_mask as usize;
        let mut acc = ZERO;
        for (s, a) in self.amps.iter().enumerate() {
            let src = s ^ x;
            let sign = if (z & src).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc += a.conj() * self.amps[src] * sign;
        }
        Ok((phase * acc).re)
    }

    pub fn apply_single_qubit_unitary(&self, site: usize, u: &Matrix2) -> Result<StateVector> {
        let mut out = self.clone();
        out.apply_single_qubit_unitary_in_place(site, u)?;
        Ok(out)
    }

    pub fn apply_single_qubit_unitary_in_place(&mut self, site: usize, u: &Matrix2) -> Result<()> {
        if site >= self.n_qubits {
            return Err(Error::Dimension(format!(
                "site {site} out of range for {} qubits",
                self.n_qubits
            )));
        }
        check_unitary2(u)?;
        self.apply_1q_unchecked(site, u);
        Ok(())
    }

    /// Applies a 2×2 matrix on `site` without validating it.
    pub(crate) fn apply_1q_unchecked(&mut self, site: usize, u: &Matrix2) {
        let bit = 1usize << site;
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for s0 in base..base + bit {
                let s1 = s0 | bit;
                let a0 = self.amps[s0];
                let a1 = self.amps[s1];
                self.amps[s0] = u[0][0] * a0 + u[0][1] * a1;
                self.amps[s1] = u[1][0] * a0 + u[1][1] * a1;
            }
            base += 2 * bit;
        }
    }

    /// Applies a 4×4 unitary on `(site_a, site_b)`; the matrix index is
    /// `bit_a + 2·bit_b`.
    pub fn apply_two_qubit_unitary_in_place(
        &mut self,
        site_a: usize,
        site_b: usize,
        u: &Matrix4,
    ) -> Result<()> {
        if site_a >= self.n_qubits || site_b >= self.n_qubits || site_a == site_b {
            return Err(Error::Dimension(format!(
                "invalid site pair ({site_a}, {site_b}) for {} qubits",
                self.n_qubits
            )));
        }
        check_unitary4(u)?;
        let ba = 1usize << site_a;
        let bb = 1usize << site_b;
        for s in 0..self.amps.len() {
            if s & (ba | bb) != 0 {
                continue;
            }
            let idx = [s, s | ba, s | bb, s | ba | bb];
            let v = idx.map(|k| self.amps[k]);
            for (row, &k) in idx.iter().enumerate() {
                self.amps[k] = (0..4).map(|col| u[row][col] * v[col]).sum();
            }
        }
        Ok(())
    }

    /// Multiplies amplitude `s` by `phases[s]`.
    pub fn apply_diagonal_in_place(&mut self, phases: &[Complex64]) -> Result<()> {
        if phases.len() != self.amps.len() {
            return Err(Error::Dimension("diagonal length differs from state dimension".into()));
        }
        self.amps.iter_mut().zip(phases).for_each(|(a, p)| *a *= p);
        Ok(())
    }

    pub fn sample_bitstring(&self, rng: &mut SeededRng) -> Result<BitString> {
        Ok(self.sampler()?.sample(rng))
    }

    /// Cumulative-distribution sampler for repeated computational-basis shots.
    pub fn sampler(&self) -> Result<BasisSampler> {
        self.check_normalized()?;
        Ok(BasisSampler::from_probabilities(&self.probabilities()))
    }

    /// `self ⊗ other` with `self` on the low sites.
    pub fn tensor_product(&self, other: &StateVector, max_qubits: usize) -> Result<StateVector> {
        self.check_normalized()?;
        other.check_normalized()?;
        let n = self.n_qubits + other.n_qubits;
        if n > max_qubits.min(ABSOLUTE_MAX_QUBITS) {
            return Err(Error::Resource(format!(
                "tensor product would have {n} qubits (limit {max_qubits})"
            )));
        }
        let mut amps = Vec::with_capacity(1 << n);
        for b in &other.amps {
            for a in &self.amps {
                amps.push(a * b);
            }
        }
        Ok(StateVector { n_qubits: n, amps })
    }
}

fn check_size(n: usize, max: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Dimension("state needs at least one qubit".into()));
    }
    if n > max {
        return Err(Error::Resource(format!("{n} qubits exceeds the limit of {max}")));
    }
    Ok(())
}

/// Samples basis indices from a fixed probability vector.
#[derive(Clone, Debug)]
pub struct BasisSampler {
    cumulative: Vec<f64>,
}

impl BasisSampler {
    pub fn from_probabilities(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p.max(0.0);
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> BitString {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let u: f64 = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        BitString(idx.min(self.cumulative.len() - 1) as u64)
    }
}

/// Measurement outcome; bit `i` is site `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BitString(pub u64);

impl BitString {
    pub fn bit(&self, site: usize) -> bool {
        (self.0 >> site) & 1 == 1
    }

    pub fn fits(&self, n_qubits: usize) -> bool {
        n_qubits >= 64 || self.0 >> n_qubits == 0
    }
}

/// `X^{x_mask} Z^{z_mask}` with the Hermitian phase `i^{|x∧z|}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliString {
    pub x_mask: u64,
    pub z_mask: u64,
}

impl PauliString {
    pub const IDENTITY: PauliString = PauliString { x_mask: 0, z_mask: 0 };

    pub fn new(x_mask: u64, z_mask: u64) -> Self {
        Self { x_mask, z_mask }
    }

    pub fn x(site: usize) -> Self {
        Self::new(1 << site, 0)
    }

    pub fn y(site: usize) -> Self {
        Self::new(1 << site, 1 << site)
    }

    pub fn z(site: usize) -> Self {
        Self::new(0, 1 << site)
    }

    pub fn is_identity(&self) -> bool {
        self.x_mask == 0 && self.z_mask == 0
    }

    /// Number of non-identity sites.
    pub fn weight(&self) -> u32 {
        (self.x_mask | self.z_mask).count_ones()
    }

    pub fn hermitian_phase(&self) -> Complex64 {
        match (self.x_mask & self.z_mask).count_ones() % 4 {
            0 => ONE,
            1 => I,
            2 => -ONE,
            _ => -I,
        }
    }

    pub fn check_fits(&self, n_qubits: usize) -> Result<()> {
        let limit = if n_qubits >= 64 { u64::MAX } else { (1u64 << n_qubits) - 1 };
        if (self.x_mask | self.z_mask) & !limit != 0 {
            return Err(Error::Dimension(format!(
                "Pauli string {self} is wider than {n_qubits} qubits"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for PauliString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let width = (64 - (self.x_mask | self.z_mask).leading_zeros()).max(1) as usize;
        for i in 0..width {
            let c = match ((self.x_mask >> i) & 1, (self.z_mask >> i) & 1) {
                (0, 0) => 'I',
                (1, 0) => 'X',
                (1, 1) => 'Y',
                _ => 'Z',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PauliString {
    type Err = Error;

    /// Parses `"XIZY"`; character `i` acts on site `i`.
    fn from_str(s: &str) -> Result<Self> {
        if s.len() > 64 {
            return Err(Error::Dimension("Pauli label longer than 64 sites".into()));
        }
        let mut p = PauliString::IDENTITY;
        for (i, c) in s.chars().enumerate() {
            match c {
                'I' => {}
                'X' => p.x_mask |= 1 << i,
                'Y' => {
                    p.x_mask |= 1 << i;
                    p.z_mask |= 1 << i;
                }
                'Z' => p.z_mask |= 1 << i,
                _ => return Err(Error::Config(format!("invalid Pauli label character {c:?}"))),
            }
        }
        Ok(p)
    }
}

fn check_unitary2(u: &Matrix2) -> Result<()> {
    let mut dev: f64 = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let v: Complex64 = (0..2).map(|k| u[k][r].conj() * u[k][c]).sum();
            let target = if r == c { ONE } else { ZERO };
            dev = dev.max((v - target).norm());
        }
    }
    if dev > 1e-10 {
        return Err(Error::Contract(format!("matrix is not unitary (deviation {dev:.3e})")));
    }
    Ok(())
}

fn check_unitary4(u: &Matrix4) -> Result<()> {
    let mut dev: f64 = 0.0;
    for r in 0..4 {
        for c in 0..4 {
            let v: Complex64 = (0..4).map(|k| u[k][r].conj() * u[k][c]).sum();
            let target = if r == c { ONE } else { ZERO };
            dev = dev.max((v - target).norm());
        }
    }
    if dev > 1e-10 {
        return Err(Error::Contract(format!("matrix is not unitary (deviation {dev:.3e})")));
    }
    Ok(())
}

/// Standard gate matrices (`u[row][col]`).
pub mod gates {
    use super::{Matrix2, Matrix4, I, ONE, ZERO};
    use num_complex::Complex64;
    use std::f64::consts::FRAC_1_SQRT_2;

    pub fn identity() -> Matrix2 {
        [[ONE, ZERO], [ZERO, ONE]]
    }

    pub fn hadamard() -> Matrix2 {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        [[h, h], [h, -h]]
    }

    pub fn phase_s() -> Matrix2 {
        [[ONE, ZERO], [ZERO, I]]
    }

    pub fn t_gate() -> Matrix2 {
        [[ONE, ZERO], [ZERO, Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]]
    }

    pub fn pauli_x() -> Matrix2 {
        [[ZERO, ONE], [ONE, ZERO]]
    }

    pub fn pauli_y() -> Matrix2 {
        [[ZERO, -I], [I, ZERO]]
    }

    pub fn pauli_z() -> Matrix2 {
        [[ONE, ZERO], [ZERO, -ONE]]
    }

    /// exp(-iθX/2)
    pub fn rx(theta: f64) -> Matrix2 {
        let c = Complex64::new((theta / 2.0).cos(), 0.0);
        let s = Complex64::new(0.0, -(theta / 2.0).sin());
        [[c, s], [s, c]]
    }

    /// exp(-iθY/2)
    pub fn ry(theta: f64) -> Matrix2 {
        let c = Complex64::new((theta / 2.0).cos(), 0.0);
        let s = Complex64::new((theta / 2.0).sin(), 0.0);
        [[c, -s], [s, c]]
    }

    /// exp(-iφZ/2)
    pub fn rz(phi: f64) -> Matrix2 {
        [
            [Complex64::from_polar(1.0, -phi / 2.0), ZERO],
            [ZERO, Complex64::from_polar(1.0, phi / 2.0)],
        ]
    }

    pub fn matmul(a: &Matrix2, b: &Matrix2) -> Matrix2 {
        let mut out = [[ZERO; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        out
    }

    pub fn dagger(a: &Matrix2) -> Matrix2 {
        [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
    }

    /// Controlled-Z (symmetric in its two sites).
    pub fn cz() -> Matrix4 {
        let mut u = [[ZERO; 4]; 4];
        u[0][0] = ONE;
        u[1][1] = ONE;
        u[2][2] = ONE;
        u[3][3] = -ONE;
        u
    }

    /// CNOT with control on the first site of the pair (index bit 0).
    pub fn cnot() -> Matrix4 {
        let mut u = [[ZERO; 4]; 4];
        u[0][0] = ONE;
        u[3][1] = ONE;
        u[2][2] = ONE;
        u[1][3] = ONE;
        u
    }
}

#[cfg(test)]
mod tests {
    use super::gates::*;
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    fn t_state() -> StateVector {
        StateVector::product(&[[
            Complex64::new(FRAC_1_SQRT_2, 0.0),
            Complex64::from_polar(FRAC_1_SQRT_2, FRAC_PI_4),
        ]])
        .unwrap()
    }

    fn plus() -> [Complex64; 2] {
        [Complex64::new(FRAC_1_SQRT_2, 0.0); 2]
    }

    /// Dense 2^L matrix of a Pauli string built by Kronecker products.
    fn dense_pauli(p: &PauliString, n: usize) -> Vec<Vec<Complex64>> {
        let mut m = vec![vec![ONE]];
        // Kronecker with site n-1 outermost so that site i is bit i.
        for site in (0..n).rev() {
            let single = match ((p.x_mask >> site) & 1, (p.z_mask >> site) & 1) {
                (0, 0) => identity(),
                (1, 0) => pauli_x(),
                (1, 1) => pauli_y(),
                _ => pauli_z(),
            };
            let d = m.len();
            let mut next = vec![vec![ZERO; 2 * d]; 2 * d];
            for r in 0..d {
                for c in 0..d {
                    for a in 0..2 {
                        for b in 0..2 {
                            next[2 * r + a][2 * c + b] = m[r][c] * single[a][b];
                        }
                    }
                }
            }
            m = next;
        }
        m
    }

    fn random_state(n: usize, seed: u64) -> StateVector {
        StateVector::haar_random(n, &mut SeededRng::new(seed, 0)).unwrap()
    }

    #[test]
    fn identity_pauli_leaves_state() {
        let s = random_state(3, 1);
        assert_eq!(s.apply_pauli(&PauliString::IDENTITY).unwrap(), s);
    }

    #[test]
    fn z_on_one_flips_sign() {
        let one = StateVector::basis(1, 1).unwrap();
        let out = one.apply_pauli(&PauliString::z(0)).unwrap();
        assert!((out.amplitudes()[1] + ONE).norm() < 1e-15);
    }

    #[test]
    fn y_on_zero_gives_i_one() {
        // Oracle: [[0,-i],[i,0]] · (1,0)ᵀ = (0, i)ᵀ
        let y = pauli_y();
        let expected = [y[0][0], y[1][0]];
        let out = StateVector::zero_state(1).unwrap().apply_pauli(&PauliString::y(0)).unwrap();
        assert!((out.amplitudes()[0] - expected[0]).norm() < 1e-15);
        assert!((out.amplitudes()[1] - expected[1]).norm() < 1e-15);
        assert!((out.amplitudes()[1] - I).norm() < 1e-15);
    }

    #[test]
    fn expectation_examples() {
        let plus_state = StateVector::product(&[plus()]).unwrap();
        assert!((plus_state.pauli_expectation(&PauliString::x(0)).unwrap() - 1.0).abs() < 1e-12);
        let zero = StateVector::zero_state(1).unwrap();
        assert!(zero.pauli_expectation(&PauliString::x(0)).unwrap().abs() < 1e-12);
        // Oracle: ⟨T|X|T⟩ = 2 Re(conj(a0) a1) = cos(π/4)
        let t = t_state();
        let a = t.amplitudes();
        let oracle = 2.0 * (a[0].conj() * a[1]).re;
        let got = t.pauli_expectation(&PauliString::x(0)).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn expectation_requires_normalization() {
        let s = StateVector::from_amplitudes(vec![ONE, ONE]).unwrap();
        assert!(matches!(s.pauli_expectation(&PauliString::x(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn wide_mask_is_dimension_error() {
        let s = StateVector::zero_state(2).unwrap();
        assert!(matches!(s.apply_pauli(&PauliString::x(2)), Err(Error::Dimension(_))));
    }

    #[test]
    fn expectation_matches_dense_kronecker_oracle() {
        for n in 1..=4 {
            let s = random_state(n, 10 + n as u64);
            for x in 0..(1u64 << n) {
                for z in 0..(1u64 << n) {
                    let p = PauliString::new(x, z);
                    let m = dense_pauli(&p, n);
                    let a = s.amplitudes();
                    let mut acc = ZERO;
                    for r in 0..a.len() {
                        for c in 0..a.len() {
                            acc += a[r].conj() * m[r][c] * a[c];
                        }
                    }
                    let got = s.pauli_expectation(&p).unwrap();
                    assert!(acc.im.abs() < 1e-12);
                    assert!((got - acc.re).abs() < 1e-12, "{p}: {got} vs {}", acc.re);
                }
            }
        }
    }

    #[test]
    fn single_qubit_gates() {
        let zero = StateVector::zero_state(1).unwrap();
        assert_eq!(zero.apply_single_qubit_unitary(0, &identity()).unwrap(), zero);
        let plus_state = StateVector::product(&[plus()]).unwrap();
        let rotated = zero.apply_single_qubit_unitary(0, &ry(FRAC_PI_2)).unwrap();
        assert!((rotated.fidelity(&plus_state).unwrap() - 1.0).abs() < 1e-12);
        let s = random_state(3, 5);
        let hh = s
            .apply_single_qubit_unitary(1, &hadamard())
            .unwrap()
            .apply_single_qubit_unitary(1, &hadamard())
            .unwrap();
        assert!((hh.fidelity(&s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_unitary_rejected() {
        let s = StateVector::zero_state(1).unwrap();
        let bad = [[ONE, ONE], [ZERO, ONE]];
        assert!(matches!(s.apply_single_qubit_unitary(0, &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn sampling_deterministic_and_supported() {
        let zero = StateVector::zero_state(3).unwrap();
        let mut rng = SeededRng::new(3, 0);
        for _ in 0..100 {
            assert_eq!(zero.sample_bitstring(&mut rng).unwrap(), BitString(0));
        }
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let bell = StateVector::from_amplitudes(vec![h, ZERO, ZERO, h]).unwrap();
        let sampler = bell.sampler().unwrap();
        let mut rng = SeededRng::new(4, 0);
        for _ in 0..10_000 {
            let b = sampler.sample(&mut rng).0;
            assert!(b == 0 || b == 3);
        }
        let a: Vec<_> = {
            let mut r = SeededRng::new(9, 1);
            (0..50).map(|_| sampler.sample(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = SeededRng::new(9, 1);
            (0..50).map(|_| sampler.sample(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let s = StateVector::product(&[plus(), plus()]).unwrap();
        let sampler = s.sampler().unwrap();
        let mut rng = SeededRng::new(11, 0);
        let shots = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..shots {
            counts[sampler.sample(&mut rng).0 as usize] += 1;
        }
        let sigma = (shots as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 0.25 * shots as f64).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sampling_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for n in 1..=4 {
            let s = random_state(n, 100 + n as u64);
            let probs = s.probabilities();
            let sampler = s.sampler().unwrap();
            let mut rng = SeededRng::new(200 + n as u64, 0);
            let shots = 100_000;
            let mut counts = vec![0usize; probs.len()];
            for _ in 0..shots {
                counts[sampler.sample(&mut rng).0 as usize] += 1;
            }
            let chi2: f64 = counts
                .iter()
                .zip(&probs)
                .map(|(&c, &p)| {
                    let e = p * shots as f64;
                    (c as f64 - e).powi(2) / e
                })
                .sum();
            let dist = ChiSquared::new((probs.len() - 1) as f64).unwrap();
            let p_value = 1.0 - dist.cdf(chi2);
            assert!(p_value > 0.001, "L={n}: chi2 = {chi2}, p = {p_value}");
        }
    }

    #[test]
    fn tensor_product_examples() {
        let z = StateVector::zero_state(1).unwrap();
        let zz = z.tensor_product(&z, DEFAULT_MAX_QUBITS).unwrap();
        assert_eq!(zz, StateVector::zero_state(2).unwrap());
        let a = random_state(2, 1);
        let b = random_state(3, 2);
        let ab = a.tensor_product(&b, DEFAULT_MAX_QUBITS).unwrap();
        assert!((ab.norm() - 1.0).abs() < 1e-12);
        assert!(matches!(
            random_state(8, 3).tensor_product(&random_state(8, 4), DEFAULT_MAX_QUBITS),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn tensor_product_site_ordering() {
        // a = |1⟩ on the low site, b = |0⟩ on the high site → index 0b01
        let a = StateVector::basis(1, 1).unwrap();
        let b = StateVector::basis(1, 0).unwrap();
        let ab = a.tensor_product(&b, 4).unwrap();
        assert_eq!(ab, StateVector::basis(2, 1).unwrap());
    }

    #[test]
    fn pauli_label_roundtrip() {
        let p: PauliString = "XIZY".parse().unwrap();
        assert_eq!(p.x_mask, 0b1001);
        assert_eq!(p.z_mask, 0b1100);
        assert_eq!(p.to_string(), "XIZY");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pauli_is_involution(n in 1usize..=8, seed in 0u64..1000, x in any::<u64>(), z in any::<u64>()) {
            let mask = (1u64 << n) - 1;
            let p = PauliString::new(x & mask, z & mask);
            let s = random_state(n, seed);
            let twice = s.apply_pauli(&p).unwrap().apply_pauli(&p).unwrap();
            prop_assert!((twice.fidelity(&s).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((twice.norm() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn expectation_via_apply_matches_direct(n in 1usize..=4, seed in 0u64..1000, x in any::<u64>(), z in any::<u64>()) {
            let mask = (1u64 << n) - 1;
            let p = PauliString::new(x & mask, z & mask);
            let s = random_state(n, seed);
            let via_apply = s.inner(&s.apply_pauli(&p).unwrap()).unwrap();
            let direct = s.pauli_expectation(&p).unwrap();
            prop_assert!(via_apply.im.abs() < 1e-12);
            prop_assert!((via_apply.re - direct).abs() < 1e-12);
            prop_assert!(direct.abs() <= 1.0 + 1e-12);
        }
    }
}
