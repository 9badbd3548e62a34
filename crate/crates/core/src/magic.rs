//! Stabilizer Rényi entropies and bipartite entanglement.
//!
//! Pauli moments `m(P) = ⟨ψ|P|ψ⟩²` are obtained one X-mask at a time: for a
//! fixed `a`, `f(s) = ψ*(s⊕a) ψ(s)` and its Walsh–Hadamard transform gives
//! `⟨X^a Z^b⟩` for every `b`. The SRE of order α is
//! `M_α = log2(D⁻¹ Σ_P m(P)^α) / (1 - α)` (Shannon limit at α = 1).

use faer::Side;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::StateVector;
use crate::wht::fwht_real;

/// Largest chain for which [`pauli_moments`] materializes all `4^L` moments.
pub const MOMENT_TABLE_MAX_QUBITS: usize = 10;

/// X-masks processed per work unit; partial sums are combined in a fixed
/// order so results do not depend on the thread count.
const CHUNK: usize = 64;

fn check_order(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Domain(format!(
            "stabilizer Rényi entropy needs a finite order alpha > 0 (got {alpha})"
        )));
    }
    Ok(())
}

/// `⟨X^a Z^b⟩` up to its sign, for every `b`, written into `out`.
///
/// Every expectation is real, so for each `b` exactly one of the transforms
/// of `Re f` and `Im f` is non-zero; transforming their sum yields the value
/// (up to sign) with a single real transform.
fn expectations_for_mask(amps: &[Complex64], a: usize, out: &mut [f64]) {
    for (s, o) in out.iter_mut().enumerate() {
        let f = amps[s ^ a].conj() * amps[s];
        *o = f.re + f.im;
    }
    fwht_real(out);
}

/// All Pauli moments, indexed `a·D + b` for the string `X^a Z^b`.
pub fn pauli_moments(psi: &StateVector) -> Result<Vec<f64>> {
    psi.check_normalized()?;
    if psi.n_qubits() > MOMENT_TABLE_MAX_QUBITS {
        return Err(Error::Resource(format!(
            "a full moment table is limited to {MOMENT_TABLE_MAX_QUBITS} qubits; use moment_sums"
        )));
    }
    let d = psi.dim();
    let amps = psi.amplitudes();
    let mut table = vec![0.0; d * d];
    table
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(a, row)| {
            expectations_for_mask(amps, a, row);
            row.iter_mut().for_each(|v| *v *= *v);
        });
    Ok(table)
}

/// Streamed sums over all `4^L` moments.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSums {
    pub n_qubits: usize,
    /// Orders requested, with `Σ_P m^α` for each (α = 1 holds `Σ m log2 m`).
    pub orders: Vec<f64>,
    pub sums: Vec<f64>,
    /// `Σ_P m(P)`; equals `D` for a pure state.
    pub total: f64,
}

impl MomentSums {
    pub fn sre(&self, alpha: f64) -> Result<f64> {
        let k = self
            .orders
            .iter()
            .position(|&o| o == alpha)
            .ok_or_else(|| Error::Contract(format!("order {alpha} was not accumulated")))?;
        let d = (1u64 << self.n_qubits) as f64;
        Ok(if alpha == 1.0 {
            // H(p) - log2 D with p = m / D
            -self.sums[k] / d
        } else {
            (self.sums[k] / d).log2() / (1.0 - alpha)
        })
    }
}

/// Accumulates `Σ m^α` for each order without storing the moments.
pub fn moment_sums(psi: &StateVector, orders: &[f64]) -> Result<MomentSums> {
    for &a in orders {
        check_order(a)?;
    }
    psi.check_normalized()?;
    let d = psi.dim();
    let amps = psi.amplitudes();
    let k = orders.len();
    let n_chunks = d.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; k + 1];
            let mut buf = vec![0.0; d];
            for a in (c * CHUNK)..((c + 1) * CHUNK).min(d) {
                expectations_for_mask(amps, a, &mut buf);
                for &e in &buf {
                    let m = e * e;
                    acc[k] += m;
                    for (slot, &alpha) in acc.iter_mut().zip(orders) {
                        *slot += power(m, alpha);
                    }
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0; k + 1];
    for p in partials {
        sums.iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    let total = sums.pop().expect("total slot");
    Ok(MomentSums {
        n_qubits: psi.n_qubits(),
        orders: orders.to_vec(),
        sums,
        total,
    })
}

#[inline]
fn power(m: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        if m > 0.0 {
            m * m.log2()
        } else {
            0.0
        }
    } else if alpha == 2.0 {
        m * m
    } else if m > 0.0 {
        m.powf(alpha)
    } else {
        0.0
    }
}

/// Stabilizer Rényi entropy of order `alpha` (bits).
pub fn sre(psi: &StateVector, alpha: f64) -> Result<f64> {
    moment_sums(psi, &[alpha])?.sre(alpha)
}

/// `M_α` for several orders from a single pass over the moments.
pub fn sre_many(psi: &StateVector, orders: &[f64]) -> Result<Vec<f64>> {
    let sums = moment_sums(psi, orders)?;
    orders.iter().map(|&a| sums.sre(a)).collect()
}

/// Haar-average value of `M_2`: `log2(D + 3) - 2`.
pub fn haar_reference(n_qubits: usize) -> f64 {
    (((1u64 << n_qubits) + 3) as f64).log2() - 2.0
}

/// Entropies of the reduced state on a region of sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entanglement {
    /// Von Neumann entropy (bits).
    pub s1: f64,
    /// Second Rényi entropy (bits).
    pub s2: f64,
    /// Eigenvalues of the reduced density matrix, descending.
    pub spectrum: Vec<f64>,
    /// Set when the region is empty or the whole system.
    pub trivial_cut: bool,
}

impl Entanglement {
    /// Rényi entropy of any order from the stored spectrum.
    pub fn renyi(&self, alpha: f64) -> Result<f64> {
        renyi_from_spectrum(&self.spectrum, alpha)
    }
}

/// `S_α = log2(Σ λ^α) / (1 - α)`; α = 1 is the von Neumann entropy.
pub fn renyi_from_spectrum(spectrum: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("Rényi order must be finite and >= 0 (got {alpha})")));
    }
    let pos = spectrum.iter().filter(|&&l| l > 1e-14);
    Ok(if alpha == 1.0 {
        -pos.map(|l| l * l.log2()).sum::<f64>()
    } else {
        pos.map(|l| l.powf(alpha)).sum::<f64>().log2() / (1.0 - alpha)
    })
}

/// Sites `0…⌊L/2⌋-1`.
pub fn half_chain_mask(n_qubits: usize) -> u64 {
    (1u64 << (n_qubits / 2)) - 1
}

/// Entanglement between the sites in `region` (bit mask) and the rest.
pub fn entanglement(psi: &StateVector, region: u64) -> Result<Entanglement> {
    psi.check_normalized()?;
    let l = psi.n_qubits();
    if l < 64 && region >> l != 0 {
        return Err(Error::Dimension(format!("region mask {region:#x} exceeds {l} sites")));
    }
    let n_a = region.count_ones() as usize;
    if n_a == 0 || n_a == l {
        return Ok(Entanglement {
            s1: 0.0,
            s2: 0.0,
            spectrum: vec![1.0],
            trivial_cut: true,
        });
    }
    // reduce onto the smaller side; the nonzero spectra coincide
    let (keep, n_keep) = if 2 * n_a <= l {
        (region, n_a)
    } else {
        (!region & ((1u64 << l) - 1), l - n_a)
    };
    let keep_sites: Vec<usize> = (0..l).filter(|i| keep >> i & 1 == 1).collect();
    let rest_sites: Vec<usize> = (0..l).filter(|i| keep >> i & 1 == 0).collect();
    let (dk, dr) = (1usize << n_keep, 1usize << (l - n_keep));
    let scatter = |bits: usize, sites: &[usize]| -> usize {
        sites
            .iter()
            .enumerate()
            .map(|(k, &s)| ((bits >> k) & 1) << s)
            .sum()
    };
    let rows: Vec<usize> = (0..dk).map(|i| scatter(i, &keep_sites)).collect();
    let cols: Vec<usize> = (0..dr).map(|j| scatter(j, &rest_sites)).collect();
    let amps = psi.amplitudes();
    let m = faer::Mat::<Complex64>::from_fn(dk, dr, |i, j| amps[rows[i] | cols[j]]);
    let rho = &m * m.adjoint();
    let eig = rho
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("reduced-state eigensolver failed: {e:?}")))?;
    let mut spectrum: Vec<f64> = (0..dk)
        .map(|i| eig.S().column_vector()[i].re.max(0.0))
        .collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    let purity: f64 = (0..dk)
        .flat_map(|i| (0..dk).map(move |j| (i, j)))
        .map(|(i, j)| rho[(i, j)].norm_sqr())
        .sum();
    Ok(Entanglement {
        s1: renyi_from_spectrum(&spectrum, 1.0)?,
        s2: -purity.log2(),
        spectrum,
        trivial_cut: false,
    })
}

/// Rényi entanglement entropy of order `alpha` for `region`.
pub fn renyi_entanglement(psi: &StateVector, region: u64, alpha: f64) -> Result<f64> {
    let e = entanglement(psi, region)?;
    if alpha == 2.0 {
        Ok(e.s2)
    } else {
        e.renyi(alpha)
    }
}
