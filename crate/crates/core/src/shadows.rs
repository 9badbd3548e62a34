//! Randomized-measurement estimators built from random local Clifford
//! rotations followed by computational-basis shots.
//!
//! For two shots `s, s'` of one setting the kernel
//! `(-2)^{-|s ⊕ s'|_A}` averages to `Tr ρ_A² / 2^{|A|}`, and for four shots
//! the kernel `(-2)^{-|s1 ⊕ s2 ⊕ s3 ⊕ s4|}` averages to `D⁻² Σ_P ⟨P⟩⁴`.
//! Both are evaluated as U-statistics over distinct shots, so every
//! per-setting estimate is unbiased.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quench::{read_rows, write_rows};
use crate::rng::{stream_id, SeededRng};
use crate::state::{gates, BitString, Matrix2, StateVector};

pub const N_CLIFFORDS: usize = 24;

/// Default number of random settings.
pub const DEFAULT_SETTINGS: usize = 200;

/// Default shots per setting.
pub const DEFAULT_SHOTS: usize = 16;

/// Fewest settings accepted for a bootstrap.
pub const MIN_BOOTSTRAP_SETTINGS: usize = 10;

const SHOT_MAGIC: &[u8; 8] = b"SHOTBAT1";

/// The 24 single-qubit Cliffords as `P_p · A_k` with `A_k` one of the six
/// axis permutations `{I, H, S, SH, HS, HSH}` and `P_p ∈ {I, X, Y, Z}`;
/// index `4k + p`.
pub fn clifford_table() -> [Matrix2; N_CLIFFORDS] {
    let h = gates::hadamard();
    let s = gates::phase_s();
    let perms = [
        gates::identity(),
        h,
        s,
        gates::matmul(&s, &h),
        gates::matmul(&h, &s),
        gates::matmul(&h, &gates::matmul(&s, &h)),
    ];
    let paulis = [gates::identity(), gates::pauli_x(), gates::pauli_y(), gates::pauli_z()];
    let mut out = [gates::identity(); N_CLIFFORDS];
    for (k, a) in perms.iter().enumerate() {
        for (p, q) in paulis.iter().enumerate() {
            out[4 * k + p] = gates::matmul(q, a);
        }
    }
    out
}

/// Measurement record of one randomized-measurement experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotBatch {
    pub n_qubits: usize,
    pub seed: u64,
    /// Sites whose reduced purity is estimated.
    pub region_mask: u64,
    /// `settings[u][i]`: Clifford index applied to site `i` in setting `u`.
    pub settings: Vec<Vec<u8>>,
    /// `shots[u]`: computational-basis outcomes of setting `u`.
    pub shots: Vec<Vec<BitString>>,
}

impl ShotBatch {
    pub fn n_settings(&self) -> usize {
        self.settings.len()
    }

    pub fn n_shots(&self) -> usize {
        self.shots.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > 64 {
            return Err(Error::Dimension(format!("{} qubits in shot batch", self.n_qubits)));
        }
        if self.settings.len() != self.shots.len() {
            return Err(Error::Dimension("settings and shot lists differ in length".into()));
        }
        let n_m = self.n_shots();
        for (u, (c, s)) in self.settings.iter().zip(&self.shots).enumerate() {
            if c.len() != self.n_qubits || s.len() != n_m {
                return Err(Error::Dimension(format!("setting {u} has the wrong shape")));
            }
            if c.iter().any(|&x| x as usize >= N_CLIFFORDS) {
                return Err(Error::Dimension(format!("setting {u} has an invalid Clifford index")));
            }
            if s.iter().any(|b| !b.fits(self.n_qubits)) {
                return Err(Error::Dimension(format!("setting {u} has an out-of-range outcome")));
            }
        }
        Ok(())
    }

    /// Little-endian binary record: magic, `L: u32`, `N_U: u32`, `N_M: u32`,
    /// `seed: u64`, `region: u64`, then per setting `L` Clifford bytes and
    /// `N_M` outcomes of `ceil(L/8)` bytes each.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        w.write_all(SHOT_MAGIC)?;
        w.write_all(&(self.n_qubits as u32).to_le_bytes())?;
        w.write_all(&(self.n_settings() as u32).to_le_bytes())?;
        w.write_all(&(self.n_shots() as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.region_mask.to_le_bytes())?;
        let nb = self.n_qubits.div_ceil(8);
        for (c, s) in self.settings.iter().zip(&self.shots) {
            w.write_all(c)?;
            for b in s {
                w.write_all(&b.0.to_le_bytes()[..nb])?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SHOT_MAGIC {
            return Err(Error::Config("not a shot batch file".into()));
        }
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        let mut read_u32 = |r: &mut R| -> Result<usize> {
            r.read_exact(&mut u32b)?;
            Ok(u32::from_le_bytes(u32b) as usize)
        };
        let n_qubits = read_u32(&mut r)?;
        let n_settings = read_u32(&mut r)?;
        let n_shots = read_u32(&mut r)?;
        r.read_exact(&mut u64b)?;
        let seed = u64::from_le_bytes(u64b);
        r.read_exact(&mut u64b)?;
        let region_mask = u64::from_le_bytes(u64b);
        if n_qubits == 0 || n_qubits > 64 {
            return Err(Error::Dimension(format!("{n_qubits} qubits in shot batch")));
        }
        let nb = n_qubits.div_ceil(8);
        let mut settings = Vec::with_capacity(n_settings);
        let mut shots = Vec::with_capacity(n_settings);
        for _ in 0..n_settings {
            let mut c = vec![0u8; n_qubits];
            r.read_exact(&mut c)?;
            let mut s = Vec::with_capacity(n_shots);
            for _ in 0..n_shots {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf[..nb])?;
                s.push(BitString(u64::from_le_bytes(buf)));
            }
            settings.push(c);
            shots.push(s);
        }
        let batch = Self {
            n_qubits,
            seed,
            region_mask,
            settings,
            shots,
        };
        batch.validate()?;
        Ok(batch)
    }
}

/// Samples a batch from the mixture `Σ_k p_k |ψ_k⟩⟨ψ_k|` (a single pure state
/// is the one-element mixture). Setting `u` draws from its own stream, so the
/// record does not depend on the thread count.
pub fn sample_shots(
    mixture: &[(f64, &StateVector)],
    n_settings: usize,
    n_shots: usize,
    region_mask: u64,
    seed: u64,
) -> Result<ShotBatch> {
    let first = mixture
        .first()
        .ok_or_else(|| Error::Contract("empty state mixture".into()))?
        .1;
    let l = first.n_qubits();
    if mixture.iter().any(|(_, s)| s.n_qubits() != l) {
        return Err(Error::Dimension("mixture members differ in size".into()));
    }
    let wsum: f64 = mixture.iter().map(|(p, _)| p).sum();
    if mixture.iter().any(|(p, _)| *p < 0.0) || (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::Contract("mixture weights must be non-negative and sum to one".into()));
    }
    for (_, s) in mixture {
        s.check_normalized()?;
    }
    if n_shots < 4 {
        return Err(Error::Config("at least four shots per setting are required".into()));
    }
    if l < 64 && region_mask >> l != 0 {
        return Err(Error::Dimension(format!("region mask {region_mask:#x} exceeds {l} sites")));
    }
    let table = clifford_table();
    let results: Vec<Result<(Vec<u8>, Vec<BitString>)>> = (0..n_settings)
        .into_par_iter()
        .map(|u| {
            let mut rng = SeededRng::new(seed, stream_id(&["shot-setting", &u.to_string()]));
            let cliffords: Vec<u8> = (0..l).map(|_| rng.random_range(0..N_CLIFFORDS as u8)).collect();
            let mut probs = vec![0.0; first.dim()];
            for (p, psi) in mixture {
                let mut rotated = (*psi).clone();
                for (site, &c) in cliffords.iter().enumerate() {
                    rotated.apply_1q_unchecked(site, &table[c as usize]);
                }
                probs
                    .iter_mut()
                    .zip(rotated.amplitudes())
                    .for_each(|(q, a): (&mut f64, &Complex64)| *q += p * a.norm_sqr());
            }
            let sampler = crate::state::BasisSampler::from_probabilities(&probs);
            let outcomes = (0..n_shots).map(|_| sampler.sample(&mut rng)).collect();
            Ok((cliffords, outcomes))
        })
        .collect();
    let mut settings = Vec::with_capacity(n_settings);
    let mut shots = Vec::with_capacity(n_settings);
    for r in results {
        let (c, s) = r?;
        settings.push(c);
        shots.push(s);
    }
    Ok(ShotBatch {
        n_qubits: l,
        seed,
        region_mask,
        settings,
        shots,
    })
}

/// `(-1/2)^w` for `w = 0…64`.
fn kernel_weights() -> [f64; 65] {
    let mut w = [1.0; 65];
    for k in 1..65 {
        w[k] = w[k - 1] * -0.5;
    }
    w
}

/// Pair U-statistic of one setting restricted to `mask`:
/// mean over `i < j` of `(-2)^{-|(s_i ⊕ s_j) & mask|}`.
pub fn k2_setting(shots: &[BitString], mask: u64) -> f64 {
    let w = kernel_weights();
    let n = shots.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += w[((shots[i].0 ^ shots[j].0) & mask).count_ones() as usize];
        }
    }
    acc / (n * (n - 1) / 2) as f64
}

/// Quadruple U-statistic of one setting: mean over `i < j < k < l` of
/// `(-2)^{-|s_i ⊕ s_j ⊕ s_k ⊕ s_l|}`.
pub fn k4_setting(shots: &[BitString]) -> f64 {
    let w = kernel_weights();
    let n = shots.len();
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let xij = shots[i].0 ^ shots[j].0;
            for k in (j + 1)..n {
                let xijk = xij ^ shots[k].0;
                for l in (k + 1)..n {
                    acc += w[(xijk ^ shots[l].0).count_ones() as usize];
                    count += 1;
                }
            }
        }
    }
    acc / count as f64
}

/// Point estimate with standard error and bootstrap percentile intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub ci68: (f64, f64),
    pub ci95: (f64, f64),
}

/// Per-setting unbiased estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct SettingEstimates {
    /// `Tr ρ_A²` per setting (prefactor `2^{|A|}` included).
    pub purity_region: Vec<f64>,
    /// `Tr ρ²` of the whole system per setting.
    pub purity_full: Vec<f64>,
    /// `D⁻² Σ_P ⟨P⟩⁴` per setting.
    pub w: Vec<f64>,
}

pub fn setting_estimates(batch: &ShotBatch) -> Result<SettingEstimates> {
    batch.validate()?;
    if batch.n_shots() < 4 {
        return Err(Error::Config("at least four shots per setting are required".into()));
    }
    let full = if batch.n_qubits == 64 { u64::MAX } else { (1u64 << batch.n_qubits) - 1 };
    let pa = 2f64.powi(batch.region_mask.count_ones() as i32);
    let pf = 2f64.powi(batch.n_qubits as i32);
    let per: Vec<(f64, f64, f64)> = batch
        .shots
        .par_iter()
        .map(|s| (pa * k2_setting(s, batch.region_mask), pf * k2_setting(s, full), k4_setting(s)))
        .collect();
    Ok(SettingEstimates {
        purity_region: per.iter().map(|x| x.0).collect(),
        purity_full: per.iter().map(|x| x.1).collect(),
        w: per.iter().map(|x| x.2).collect(),
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample covariance of the two means.
fn cov_of_means(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0) / n
}

/// `S_2 = -log2(purity)`; non-positive purity is outside the domain.
pub fn renyi2_from_purity(purity: f64) -> Result<f64> {
    if !(purity > 0.0) {
        return Err(Error::Domain(format!("purity estimate {purity} is not positive")));
    }
    Ok(-purity.log2())
}

/// `M_2 = -log2(D · W / Tr ρ²)`.
pub fn m2_from_moments(n_qubits: usize, w: f64, purity: f64) -> Result<f64> {
    let ratio = 2f64.powi(n_qubits as i32) * w / purity;
    if !(ratio > 0.0) || !(purity > 0.0) {
        return Err(Error::Domain(format!(
            "moment estimates W = {w}, purity = {purity} give no finite magic"
        )));
    }
    Ok(-ratio.log2())
}

/// Percentile interval of `samples` at the given central coverage.
pub fn percentile_interval(samples: &mut [f64], coverage: f64) -> (f64, f64) {
    samples.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (samples.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        samples[lo] + (samples[hi] - samples[lo]) * (pos - lo as f64)
    };
    let tail = (1.0 - coverage) / 2.0;
    (q(tail), q(1.0 - tail))
}

/// Bootstrap over setting indices. `stat` maps resampled index lists to a
/// value; resamples where it fails are dropped.
pub fn bootstrap_ci<F>(n_settings: usize, n_boot: usize, rng: &mut SeededRng, stat: F) -> Result<((f64, f64), (f64, f64))>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if n_settings < MIN_BOOTSTRAP_SETTINGS {
        return Err(Error::Domain(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_SETTINGS} settings (got {n_settings})"
        )));
    }
    let mut values = Vec::with_capacity(n_boot);
    let mut idx = vec![0usize; n_settings];
    for _ in 0..n_boot {
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..n_settings));
        if let Ok(v) = stat(&idx) {
            if v.is_finite() {
                values.push(v);
            }
        }
    }
    if values.len() < n_boot / 2 || values.len() < 2 {
        return Err(Error::Domain("too few valid bootstrap resamples".into()));
    }
    let ci68 = percentile_interval(&mut values, 0.68);
    let ci95 = percentile_interval(&mut values, 0.95);
    Ok((ci68, ci95))
}

/// All estimators of one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowEstimates {
    pub purity: Estimate,
    /// `None` when the purity estimate is not positive.
    pub s2: Option<Estimate>,
    pub w: Estimate,
    pub purity_full: Estimate,
    /// `None` when `W / Tr ρ²` is not positive.
    pub m2: Option<Estimate>,
    /// Why a derived estimate is missing.
    pub undefined: Vec<String>,
    pub n_settings: usize,
    pub n_shots: usize,
}

pub fn estimate_all(batch: &ShotBatch, n_boot: usize, rng: &mut SeededRng) -> Result<ShadowEstimates> {
    let per = setting_estimates(batch)?;
    let n = batch.n_settings();
    let l = batch.n_qubits;
    let pick = |x: &[f64], idx: &[usize]| idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
    let se = |x: &[f64]| cov_of_means(x, x).sqrt();

    let p = mean(&per.purity_region);
    let p_se = se(&per.purity_region);
    let (p68, p95) = bootstrap_ci(n, n_boot, rng, |i| Ok(pick(&per.purity_region, i)))?;

    let mut undefined = Vec::new();
    let s2 = match renyi2_from_purity(p) {
        Ok(s2) => {
            let s2_se = p_se / (p * std::f64::consts::LN_2);
            let (s68, s95) = bootstrap_ci(n, n_boot, rng, |i| renyi2_from_purity(pick(&per.purity_region, i)))?;
            Some(Estimate { value: s2, stderr: s2_se, ci68: s68, ci95: s95 })
        }
        Err(e) => {
            undefined.push(format!("S2: {e}"));
            None
        }
    };

    let w = mean(&per.w);
    let w_se = se(&per.w);
    let (w68, w95) = bootstrap_ci(n, n_boot, rng, |i| Ok(pick(&per.w, i)))?;

    let pf = mean(&per.purity_full);
    let pf_se = se(&per.purity_full);
    let (f68, f95) = bootstrap_ci(n, n_boot, rng, |i| Ok(pick(&per.purity_full, i)))?;

    let m2 = match m2_from_moments(l, w, pf) {
        Ok(m2) => {
            // delta method on -log2(W / P)
            let var = cov_of_means(&per.w, &per.w) / (w * w)
                + cov_of_means(&per.purity_full, &per.purity_full) / (pf * pf)
                - 2.0 * cov_of_means(&per.w, &per.purity_full) / (w * pf);
            let m2_se = var.max(0.0).sqrt() / std::f64::consts::LN_2;
            let (m68, m95) = bootstrap_ci(n, n_boot, rng, |i| {
                m2_from_moments(l, pick(&per.w, i), pick(&per.purity_full, i))
            })?;
            Some(Estimate { value: m2, stderr: m2_se, ci68: m68, ci95: m95 })
        }
        Err(e) => {
            undefined.push(format!("M2: {e}"));
            None
        }
    };

    let est = |value, stderr, ci68, ci95| Estimate { value, stderr, ci68, ci95 };
    Ok(ShadowEstimates {
        purity: est(p, p_se, p68, p95),
        s2,
        w: est(w, w_se, w68, w95),
        purity_full: est(pf, pf_se, f68, f95),
        m2,
        undefined,
        n_settings: n,
        n_shots: batch.n_shots(),
    })
}

/// One line of an estimator CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub t: f64,
    pub estimator: String,
    pub value: f64,
    pub stderr: f64,
    pub ci68_lo: f64,
    pub ci68_hi: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
    /// Exact value of the estimated quantity when known.
    pub exact: Option<f64>,
    pub n_shots: usize,
}

impl EstimatorRow {
    pub fn new(t: f64, estimator: &str, e: &Estimate, exact: Option<f64>, n_shots: usize) -> Self {
        Self {
            t,
            estimator: estimator.to_string(),
            value: e.value,
            stderr: e.stderr,
            ci68_lo: e.ci68.0,
            ci68_hi: e.ci68.1,
            ci95_lo: e.ci95.0,
            ci95_hi: e.ci95.1,
            exact,
            n_shots,
        }
    }
}

pub fn write_estimator_csv<W: Write>(w: W, rows: &[EstimatorRow]) -> Result<()> {
    write_rows(w, rows)
}

pub fn read_estimator_csv<R: Read>(r: R) -> Result<Vec<EstimatorRow>> {
    read_rows(r)
}
