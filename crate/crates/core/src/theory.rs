//! Strong-tilt perturbation theory.
//!
//! Sites here follow a 1-based ladder: `H = J Σ Z_j Z_{j+1} + F Σ_{j=1}^{L} j Z_j
//! + h Σ X_j`. Relative to the 0-based dynamics convention this shifts the
//! diagonal by `F Σ_j Z_j`, i.e. by a site-independent field, which leaves
//! all gaps between neighboring ladder sectors unchanged.
//!
//! The first-order Schrieffer–Wolff generator is
//! `S = Σ_j (h/2) Δ_j⁻¹ (iY_j)` with the diagonal operator
//! `Δ_j = F j + J (Z_{j-1} + Z_{j+1})`, so that `[H_0, S] = V` and
//! `H_eff = e^S H e^{-S} = H_0 + ½[S, V] + O(h³)`.

use std::collections::BTreeMap;
use std::f64::consts::E;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::ChainSpec;
use crate::wht::fwht_real;

/// Largest chain for the dense similarity transform.
pub const SW_MAX_QUBITS: usize = 10;

/// Resonance guard: `|Δ| < RESONANCE_TOLERANCE · F` is a singularity.
pub const RESONANCE_TOLERANCE: f64 = 1e-8;

/// Neighbor-sector labels `(z_{j-1}, z_{j+1})` in generator order.
pub const SECTORS: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

fn spin(s: usize, i: usize) -> f64 {
    if (s >> i) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `(z_{j-1},z_{j+1})` as e.g. `(+,-)`; a missing neighbor shows as `0`.
fn sector_label(z: (i8, i8), has_left: bool, has_right: bool) -> String {
    let c = |v: i8, present: bool| match (present, v > 0) {
        (false, _) => '0',
        (true, true) => '+',
        (true, false) => '-',
    };
    format!("({},{})", c(z.0, has_left), c(z.1, has_right))
}

/// `Δ_j` for 0-based site `i` (ladder index `j = i + 1`) and neighbor spins;
/// a missing neighbor contributes nothing.
pub fn sector_gap(spec: &ChainSpec, i: usize, z_left: f64, z_right: f64) -> f64 {
    let left = if i > 0 { z_left } else { 0.0 };
    let right = if i + 1 < spec.l { z_right } else { 0.0 };
    spec.f * (i + 1) as f64 + spec.j * (left + right)
}

fn gap_at(spec: &ChainSpec, i: usize, s: usize) -> f64 {
    let zl = if i > 0 { spin(s, i - 1) } else { 0.0 };
    let zr = if i + 1 < spec.l { spin(s, i + 1) } else { 0.0 };
    sector_gap(spec, i, zl, zr)
}

/// Result of the Schrieffer–Wolff construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwResult {
    /// Perturbative order of the analytic effective diagonal.
    pub order: u8,
    pub l: usize,
    /// `generator[i][k] = h / (2 Δ)` for site `i` in neighbor sector `SECTORS[k]`.
    pub generator: Vec<[f64; 4]>,
    /// Diagonal of `H_0` on the 1-based ladder.
    pub h0_diagonal: Vec<f64>,
    /// Z-basis diagonal of the numerically conjugated `e^S H e^{-S}`.
    pub effective_diagonal: Vec<f64>,
    /// `H_0 + Σ_j (h²/2) Δ_j⁻¹ Z_j`.
    pub analytic_diagonal: Vec<f64>,
    /// `‖offdiag(H_eff)‖_F / ‖offdiag(H)‖_F`.
    pub offdiag_ratio: f64,
}

/// Full dense matrices of one construction, kept for diagnostics.
pub struct SwMatrices {
    pub hamiltonian: Mat<f64>,
    pub generator: Mat<f64>,
    pub rotation: Mat<f64>,
    pub effective: Mat<f64>,
}

/// Diagonal couplings `c_S` of `Σ_S c_S Z_S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalCouplings {
    pub l: usize,
    /// Non-negligible coefficients keyed by site-subset mask.
    pub coefficients: BTreeMap<u64, f64>,
    /// `two_body[i][k] = c_{{i,k}}` (symmetric, zero diagonal).
    pub two_body: Vec<Vec<f64>>,
}

impl DiagonalCouplings {
    /// `c_S = 2^{-L} Σ_s diag(s) (-1)^{|S ∧ s|}`.
    pub fn from_diagonal(diagonal: &[f64]) -> Result<Self> {
        let d = diagonal.len();
        if d < 2 || !d.is_power_of_two() {
            return Err(Error::Dimension(format!("diagonal length {d} is not a power of two")));
        }
        let l = d.trailing_zeros() as usize;
        let mut c = diagonal.to_vec();
        fwht_real(&mut c);
        c.iter_mut().for_each(|v| *v /= d as f64);
        let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let coefficients = c
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > 1e-15 * scale)
            .map(|(s, &v)| (s as u64, v))
            .collect();
        let mut two_body = vec![vec![0.0; l]; l];
        for i in 0..l {
            for k in (i + 1)..l {
                let v = c[(1 << i) | (1 << k)];
                two_body[i][k] = v;
                two_body[k][i] = v;
            }
        }
        Ok(Self { l, coefficients, two_body })
    }

    pub fn coefficient(&self, mask: u64) -> f64 {
        self.coefficients.get(&mask).copied().unwrap_or(0.0)
    }

    /// `Σ_S c_S (-1)^{|S ∧ s|}` for every `s`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut v = vec![0.0; 1 << self.l];
        for (&s, &c) in &self.coefficients {
            v[s as usize] = c;
        }
        fwht_real(&mut v);
        v
    }
}

fn dense_ladder_hamiltonian(spec: &ChainSpec) -> (Mat<f64>, Vec<f64>) {
    let l = spec.l;
    let d = 1usize << l;
    let h0: Vec<f64> = (0..d)
        .map(|s| {
            let zz: f64 = (0..l.saturating_sub(1)).map(|i| spin(s, i) * spin(s, i + 1)).sum();
            let tilt: f64 = (0..l).map(|i| (i + 1) as f64 * spin(s, i)).sum();
            spec.j * zz + spec.f * tilt
        })
        .collect();
    let mut h = Mat::<f64>::zeros(d, d);
    for s in 0..d {
        h[(s, s)] = h0[s];
        for i in 0..l {
            h[(s ^ (1 << i), s)] = spec.h;
        }
    }
    (h, h0)
}

/// `exp(A)` by Taylor scaling and squaring.
pub fn expm(a: &Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let x = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let mut result = Mat::<f64>::identity(n, n);
    let mut term = Mat::<f64>::identity(n, n);
    for k in 1..=30 {
        term = &term * &x * (1.0 / k as f64);
        result += &term;
        if term.norm_max() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn check_spec(spec: &ChainSpec) -> Result<()> {
    if !(spec.f > 0.0) || !spec.f.is_finite() {
        return Err(Error::Domain(format!("tilt F must be positive (got {})", spec.f)));
    }
    if spec.l == 0 || spec.l > SW_MAX_QUBITS {
        return Err(Error::Resource(format!(
            "Schrieffer–Wolff construction limited to 1…{SW_MAX_QUBITS} sites (got {})",
            spec.l
        )));
    }
    Ok(())
}

/// Per-site generator coefficients over the four neighbor sectors, with
/// the resonance check.
pub fn sw_generator(spec: &ChainSpec) -> Result<Vec<[f64; 4]>> {
    check_spec(spec)?;
    (0..spec.l)
        .map(|i| {
            let mut row = [0.0; 4];
            for (k, &(zl, zr)) in SECTORS.iter().enumerate() {
                let delta = sector_gap(spec, i, zl as f64, zr as f64);
                if delta.abs() < RESONANCE_TOLERANCE * spec.f {
                    return Err(Error::Singularity {
                        site: i + 1,
                        sector: sector_label((zl, zr), i > 0, i + 1 < spec.l),
                        delta: delta.abs(),
                    });
                }
                row[k] = spec.h / (2.0 * delta);
            }
            Ok(row)
        })
        .collect()
}

/// Dense construction of `S`, `e^S` and `H_eff`.
pub fn sw_matrices(spec: &ChainSpec) -> Result<SwMatrices> {
    sw_generator(spec)?;
    let l = spec.l;
    let d = 1usize << l;
    let (hamiltonian, _) = dense_ladder_hamiltonian(spec);
    let mut generator = Mat::<f64>::zeros(d, d);
    for s in 0..d {
        for i in 0..l {
            let a = spec.h / (2.0 * gap_at(spec, i, s));
            // iY = [[0, 1], [-1, 0]]: iY|0⟩ = -|1⟩, iY|1⟩ = |0⟩
            let sign = if (s >> i) & 1 == 0 { -1.0 } else { 1.0 };
            generator[(s ^ (1 << i), s)] = sign * a;
        }
    }
    let rotation = expm(&generator);
    let effective = &rotation * &hamiltonian * rotation.transpose();
    Ok(SwMatrices {
        hamiltonian,
        generator,
        rotation,
        effective,
    })
}

fn offdiag_norm(m: &Mat<f64>) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Schrieffer–Wolff effective diagonal and its Z-string expansion.
pub fn sw_effective_diagonal(spec: &ChainSpec) -> Result<(SwResult, DiagonalCouplings)> {
    let generator = sw_generator(spec)?;
    let mats = sw_matrices(spec)?;
    let l = spec.l;
    let d = 1usize << l;
    let (_, h0_diagonal) = dense_ladder_hamiltonian(spec);
    let effective_diagonal: Vec<f64> = (0..d).map(|s| mats.effective[(s, s)]).collect();
    let analytic_diagonal: Vec<f64> = (0..d)
        .map(|s| {
            h0_diagonal[s]
                + (0..l)
                    .map(|i| spec.h * spec.h / 2.0 / gap_at(spec, i, s) * spin(s, i))
                    .sum::<f64>()
        })
        .collect();
    let base = offdiag_norm(&mats.hamiltonian);
    let offdiag_ratio = if base > 0.0 { offdiag_norm(&mats.effective) / base } else { 0.0 };
    let couplings = DiagonalCouplings::from_diagonal(&effective_diagonal)?;
    Ok((
        SwResult {
            order: 2,
            l,
            generator,
            h0_diagonal,
            effective_diagonal,
            analytic_diagonal,
            offdiag_ratio,
        },
        couplings,
    ))
}

/// Spectrum of a symmetric matrix, ascending.
pub fn symmetric_spectrum(m: &Mat<f64>) -> Result<Vec<f64>> {
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("eigensolver failed: {e:?}")))?;
    Ok((0..m.nrows()).map(|i| eig.S().column_vector()[i]).collect())
}

/// RMS over position of the distance-`r` two-body couplings.
pub fn j_eff_at(couplings: &DiagonalCouplings, r: usize) -> Result<f64> {
    let l = couplings.l;
    if r == 0 || r >= l {
        return Err(Error::Domain(format!("distance {r} outside 1…{}", l.saturating_sub(1))));
    }
    let n = l - r;
    let ss: f64 = (0..n).map(|i| couplings.two_body[i][i + r].powi(2)).sum();
    Ok((ss / n as f64).sqrt())
}

/// `J_eff(r)` for `r = 1…L-1`.
pub fn j_eff_profile(couplings: &DiagonalCouplings) -> Result<Vec<f64>> {
    (1..couplings.l).map(|r| j_eff_at(couplings, r)).collect()
}

/// Factorially suppressed coupling `J0 (h/F)^{r-1} / (r-1)!`.
pub fn j_eff_factorial(r: usize, j0: f64, h: f64, f: f64) -> f64 {
    let ratio = h / f;
    (1..r).fold(j0, |acc, k| acc * ratio / k as f64)
}

/// Principal branch of the Lambert function, `W₀(x) e^{W₀(x)} = x`.
///
/// Initial guess: branch-point series near `-1/e`, `ln(1+x)`-based form for
/// moderate `x`, asymptotic `ln x - ln ln x` for large `x`; then Halley
/// iteration (Newton on `w + ln w = ln x` for huge `x`).
pub fn lambert_w0(x: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if x.is_nan() || x < branch - 1e-15 {
        return Err(Error::Domain(format!("Lambert W0 needs x >= -1/e (got {x})")));
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x <= branch {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut w = if x < -0.25 {
        let p = (2.0 * (E * x + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        let l1 = x.ln_1p();
        l1 * (1.0 - (1.0 + l1).ln() / (2.0 + l1))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    if x > 1e200 {
        let lx = x.ln();
        for _ in 0..100 {
            let step = (w + w.ln() - lx) / (1.0 + 1.0 / w);
            w -= step;
            if step.abs() <= 4.0 * f64::EPSILON * w.abs() {
                break;
            }
        }
        return Ok(w);
    }
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// Dephasing-front position with its validity flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Front {
    pub r: f64,
    /// `t·J0 ≤ 1`: the front has not formed and `r` is pinned to 1.
    pub pre_front: bool,
}

/// `r(t) = 1 + ln(tJ0) / W₀(ln(tJ0) / (e h/F))`, evaluated as
/// `1 + c·exp(W₀(x/c))` with `c = e h/F`, `x = ln(tJ0)` (same value, no
/// cancellation near `x → 0`).
pub fn dephasing_front(t: f64, j0: f64, h: f64, f: f64) -> Result<Front> {
    if !(t >= 0.0) || !(j0 > 0.0) || !(h >= 0.0) || !(f >= 0.0) {
        return Err(Error::Domain(format!(
            "front needs t >= 0, J0 > 0, h >= 0, F >= 0 (got t={t}, J0={j0}, h={h}, F={f})"
        )));
    }
    let tj = t * j0;
    if tj <= 1.0 {
        return Ok(Front { r: 1.0, pre_front: true });
    }
    if h == 0.0 {
        return Ok(Front { r: 1.0, pre_front: false });
    }
    if f == 0.0 {
        return Ok(Front { r: f64::INFINITY, pre_front: false });
    }
    let c = E * h / f;
    let x = tj.ln();
    Ok(Front {
        r: 1.0 + c * lambert_w0(x / c)?.exp(),
        pre_front: false,
    })
}

/// `M2(t) ≈ M_sat tanh(γ r(t))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureModel {
    pub j0: f64,
    pub h: f64,
    pub f: f64,
    pub m_sat: f64,
    pub gamma: f64,
}

impl ClosureModel {
    pub fn h_over_f(&self) -> f64 {
        self.h / self.f
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_sat >= 0.0 && self.gamma > 0.0 && self.j0 > 0.0) {
            return Err(Error::Domain(format!(
                "closure needs M_sat >= 0, gamma > 0, J0 > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

pub fn closure_eval(t: f64, model: &ClosureModel) -> Result<f64> {
    model.validate()?;
    let r = dephasing_front(t, model.j0, model.h, model.f)?.r;
    Ok(model.m_sat * (model.gamma * r).tanh())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SaturationMode {
    /// `M_sat` is a free parameter.
    #[default]
    Free,
    /// `M_sat` fixed to the mean over the last decade of the trace.
    Plateau,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureFit {
    pub model: ClosureModel,
    /// Residual RMS over the fitted points.
    pub rms: f64,
    /// Covariance of the free parameters in the order `(M_sat, γ, J0)`
    /// (with `M_sat` omitted in plateau mode).
    pub covariance: Vec<Vec<f64>>,
    pub n_points: usize,
    pub iterations: usize,
    /// Set for traces without measurable growth; the model then carries
    /// `M_sat` = plateau mean and placeholder `γ`, `J0`.
    pub degenerate: bool,
    pub mode: SaturationMode,
}

/// Mean of the values whose times lie in the last decade `[t_max/10, t_max]`.
pub fn last_decade_mean(times: &[f64], values: &[f64]) -> Result<f64> {
    let t_max = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sel: Vec<f64> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= t_max / 10.0)
        .map(|(_, v)| *v)
        .collect();
    if sel.is_empty() || !(t_max > 0.0) {
        return Err(Error::Domain("no samples in the last decade".into()));
    }
    Ok(sel.iter().sum::<f64>() / sel.len() as f64)
}

const FIT_MAX_ITERATIONS: usize = 500;

/// Levenberg–Marquardt on `log` parameters with a central-difference
/// Jacobian. Returns `(best parameters, cost, iterations, converged)`.
fn levenberg_marquardt<F>(residuals: F, start: Vec<f64>) -> (Vec<f64>, f64, usize, bool)
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let cost_of = |p: &[f64]| residuals(p).map(|r| r.iter().map(|x| x * x).sum::<f64>());
    let mut p = start;
    let mut cost = cost_of(&p).unwrap_or(f64::INFINITY);
    let mut lambda = 1e-3;
    let n = p.len();
    for it in 0..FIT_MAX_ITERATIONS {
        let r0 = match residuals(&p) {
            Some(r) => r,
            None => return (p, cost, it, false),
        };
        let m = r0.len();
        let mut jac = Mat::<f64>::zeros(m, n);
        for k in 0..n {
            let hstep = 1e-6 * (1.0 + p[k].abs());
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[k] += hstep;
            pm[k] -= hstep;
            let (Some(rp), Some(rm)) = (residuals(&pp), residuals(&pm)) else {
                return (p, cost, it, false);
            };
            for i in 0..m {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * hstep);
            }
        }
        let jtj = jac.transpose() * &jac;
        let rvec = Mat::from_fn(m, 1, |i, _| r0[i]);
        let jtr = jac.transpose() * &rvec;
        let mut improved = false;
        for _ in 0..30 {
            let a = Mat::from_fn(n, n, |i, j| {
                if i == j {
                    jtj[(i, j)] * (1.0 + lambda) + 1e-15
                } else {
                    jtj[(i, j)]
                }
            });
            let step = a.partial_piv_lu().solve(&jtr);
            let trial: Vec<f64> = (0..n).map(|k| p[k] - step[(k, 0)]).collect();
            if let Some(c) = cost_of(&trial) {
                if c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    let step_size = (0..n).map(|k| step[(k, 0)].abs()).fold(0.0, f64::max);
                    p = trial;
                    cost = c;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = true;
                    if rel < 1e-12 || step_size < 1e-10 || cost < 1e-30 {
                        return (p, cost, it + 1, true);
                    }
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !improved {
            // no downhill step at any damping: at a (local) minimum
            return (p, cost, it + 1, lambda > 1e10);
        }
    }
    (p, cost, FIT_MAX_ITERATIONS, false)
}

/// Least-squares fit of the closure to a trace. Only points with
/// `t·h ≥ 1` enter (the initial `J0` is `h`), and they must span at least
/// two decades.
pub fn fit_closure(times: &[f64], m2: &[f64], h: f64, f: f64, mode: SaturationMode) -> Result<ClosureFit> {
    if times.len() != m2.len() {
        return Err(Error::Alignment("times and values differ in length".into()));
    }
    if !(h > 0.0) || !(f > 0.0) {
        return Err(Error::Domain(format!("closure fit needs h > 0 and F > 0 (got h={h}, F={f})")));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(m2)
        .filter(|(t, _)| **t * h >= 1.0)
        .map(|(t, v)| (*t, *v))
        .collect();
    let t_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    if pts.len() < 4 || t_max * h < 100.0 {
        return Err(Error::Domain(
            "closure fit needs at least two decades of data past t·h = 1".into(),
        ));
    }
    let plateau = last_decade_mean(times, m2)?;
    let scale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    if scale < 1e-8 {
        return Ok(ClosureFit {
            model: ClosureModel { j0: h, h, f, m_sat: plateau.max(0.0), gamma: 1.0 },
            rms: (pts.iter().map(|p| p.1 * p.1).sum::<f64>() / pts.len() as f64).sqrt(),
            covariance: Vec::new(),
            n_points: pts.len(),
            iterations: 0,
            degenerate: true,
            mode,
        });
    }
    let model_from = |p: &[f64]| -> ClosureModel {
        match mode {
            SaturationMode::Free => ClosureModel { m_sat: p[0].exp(), gamma: p[1].exp(), j0: p[2].exp(), h, f },
            SaturationMode::Plateau => ClosureModel { m_sat: plateau, gamma: p[0].exp(), j0: p[1].exp(), h, f },
        }
    };
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        if p.iter().any(|v| !v.is_finite() || v.abs() > 50.0) {
            return None;
        }
        let m = model_from(p);
        pts.iter()
            .map(|&(t, y)| closure_eval(t, &m).ok().map(|v| v - y))
            .collect()
    };
    let m0 = plateau.abs().max(scale * 0.5).max(1e-6);
    // The front jumps at t·J0 = 1, so the cost is not smooth in J0; start
    // from a small grid around the J0 ~ h initializer.
    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    for (g0, j0) in [0.05, 0.2, 1.0]
        .into_iter()
        .flat_map(|g| [1.0, 0.25, 0.5, 2.0].map(|k| (g, k * h)))
    {
        let start = match mode {
            SaturationMode::Free => vec![m0.ln(), f64::ln(g0), j0.ln()],
            SaturationMode::Plateau => vec![f64::ln(g0), j0.ln()],
        };
        let run = levenberg_marquardt(residuals, start);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let (p, cost, iterations, converged) = best.expect("at least one start");
    let model = model_from(&p);
    if !converged {
        let best = match mode {
            SaturationMode::Free => vec![model.m_sat, model.gamma, model.j0],
            SaturationMode::Plateau => vec![model.gamma, model.j0],
        };
        return Err(Error::Fit { iterations, cost, best });
    }
    let covariance = closure_covariance(&pts, &model, mode, cost)?;
    Ok(ClosureFit {
        model,
        rms: (cost / pts.len() as f64).sqrt(),
        covariance,
        n_points: pts.len(),
        iterations,
        degenerate: false,
        mode,
    })
}

/// `s² (JᵀJ)⁻¹` in the natural parameters.
fn closure_covariance(
    pts: &[(f64, f64)],
    model: &ClosureModel,
    mode: SaturationMode,
    cost: f64,
) -> Result<Vec<Vec<f64>>> {
    let natural = match mode {
        SaturationMode::Free => vec![model.m_sat, model.gamma, model.j0],
        SaturationMode::Plateau => vec![model.gamma, model.j0],
    };
    let n = natural.len();
    let m = pts.len();
    let build = |p: &[f64]| -> ClosureModel {
        match mode {
            SaturationMode::Free => ClosureModel { m_sat: p[0], gamma: p[1], j0: p[2], ..*model },
            SaturationMode::Plateau => ClosureModel { gamma: p[0], j0: p[1], ..*model },
        }
    };
    let mut jac = Mat::<f64>::zeros(m, n);
    for k in 0..n {
        let hstep = 1e-6 * natural[k].abs().max(1e-12);
        let mut pp = natural.clone();
        let mut pm = natural.clone();
        pp[k] += hstep;
        pm[k] -= hstep;
        let (mp, mm) = (build(&pp), build(&pm));
        for (i, &(t, _)) in pts.iter().enumerate() {
            jac[(i, k)] = (closure_eval(t, &mp)? - closure_eval(t, &mm)?) / (2.0 * hstep);
        }
    }
    let dof = (m as f64 - n as f64).max(1.0);
    let s2 = cost / dof;
    let inv = (jac.transpose() * &jac).partial_piv_lu().inverse();
    Ok((0..n)
        .map(|i| (0..n).map(|j| s2 * inv[(i, j)]).collect())
        .collect())
}
