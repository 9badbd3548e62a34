//! Parameter sweeps, long-time saturation values, crossover curves,
//! finite-size data collapse and the parametric magic–entanglement relation.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{KrylovConfig, Propagator, TimeGrid};
use crate::hamiltonian::{ChainSpec, InitialKind, InitialStateSpec};
use crate::magic::haar_reference;
use crate::quench::{quench_trace, read_rows, write_rows, QuenchSpec, QuenchTrace, TraceColumns};
use crate::rng::{stream_id, SeededRng};
use crate::state::DEFAULT_MAX_QUBITS;
use crate::theory::{fit_closure, last_decade_mean, ClosureFit, SaturationMode};

/// Relative M_sat uncertainty above which the late-window mean is used.
pub const FIT_UNCERTAINTY_LIMIT: f64 = 0.5;

/// A fitted M_sat must lie within this many combined standard errors of the
/// observed late-time plateau to be used.
pub const PLATEAU_CONSISTENCY: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub f_values: Vec<f64>,
    pub l_values: Vec<usize>,
    pub j: f64,
    pub h: f64,
    pub initial: Vec<InitialKind>,
    /// Ensemble size for `random_bloch` points.
    pub ensemble_size: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub propagator: Propagator,
    pub krylov: KrylovConfig,
    pub max_qubits: usize,
    /// Refuse to start when the cost estimate exceeds this many seconds.
    pub budget_seconds: Option<f64>,
}

impl SweepSpec {
    pub fn new(f_values: Vec<f64>, l_values: Vec<usize>, initial: Vec<InitialKind>, grid: TimeGrid) -> Self {
        Self {
            f_values,
            l_values,
            j: 1.0,
            h: 1.0,
            initial,
            ensemble_size: 1,
            grid,
            seed: 0,
            propagator: Propagator::Auto,
            krylov: KrylovConfig::default(),
            max_qubits: DEFAULT_MAX_QUBITS,
            budget_seconds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_values.is_empty() || self.l_values.is_empty() || self.initial.is_empty() {
            return Err(Error::Config("sweep axes must be non-empty".into()));
        }
        if self.f_values.windows(2).any(|w| w[1] <= w[0]) || self.f_values.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config("F values must be finite and strictly increasing".into()));
        }
        if let Some(l) = self.l_values.iter().find(|&&l| l % 2 != 0) {
            return Err(Error::Config(format!("half-chain cuts need even L (got {l})")));
        }
        if let Some(l) = self.l_values.iter().find(|&&l| l > self.max_qubits) {
            return Err(Error::Resource(format!("L = {l} exceeds the configured maximum {}", self.max_qubits)));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &l in &self.l_values {
            for &init in &self.initial {
                for &f in &self.f_values {
                    out.push(SweepPoint { l, f, init });
                }
            }
        }
        out
    }

    /// Rough single-core cost of the whole sweep in seconds.
    pub fn estimate_seconds(&self) -> f64 {
        self.points()
            .iter()
            .map(|p| {
                let d = (1u64 << p.l) as f64;
                let samples = if p.init == InitialKind::RandomBloch { self.ensemble_size as f64 } else { 1.0 };
                let n_t = self.grid.len() as f64;
                let magic = 1e-9 * n_t * d * d * p.l as f64;
                let propagate = if self.propagator.uses_eigen(p.l) {
                    2.5e-10 * d * d * d + samples * 2e-9 * d * d * n_t
                } else {
                    let width = self.h.abs() * p.l as f64
                        + self.j.abs() * p.l as f64
                        + p.f.abs() * (p.l * p.l) as f64 / 2.0;
                    samples * 5e-9 * self.grid.t_max() * width * d * (p.l as f64 + 30.0)
                };
                propagate + samples * magic
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub l: usize,
    pub f: f64,
    pub init: InitialKind,
}

impl SweepPoint {
    /// Stable textual id; also keys the point's random stream, so adding
    /// points never changes existing ones.
    pub fn id(&self) -> String {
        format!("L={}|F={:?}|init={}", self.l, self.f, self.init)
    }

    pub fn stream(&self) -> u64 {
        stream_id(&["sweep-point", &self.id()])
    }

    fn file_name(&self) -> String {
        format!("point-{:016x}.json", self.stream())
    }
}

/// Long-time values of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationRecord {
    pub l: usize,
    pub f: f64,
    pub init: InitialKind,
    pub m2_sat: f64,
    pub m2_sat_err: f64,
    /// Last-decade mean of the half-chain von Neumann entropy.
    pub s_half: f64,
    pub s_half_err: f64,
    /// `haar_reference(L) - m2_sat`.
    pub delta_m2: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    /// `"fit"` or `"late_window"`.
    pub method: String,
    pub fit: Option<ClosureFit>,
}

fn window_stats(times: &[f64], values: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let t_max = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sel: Vec<f64> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= t_max / 10.0)
        .map(|(_, v)| *v)
        .collect();
    let mean = last_decade_mean(times, values)?;
    let n = sel.len() as f64;
    let var = if sel.len() > 1 {
        sel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt(), t_max / 10.0, t_max))
}

/// Saturation values of a trace: closure-fit `M_sat` when the fit converges
/// with relative uncertainty ≤ 50 %, `0 < M_sat ≤ L` and `M_sat` within three
/// combined standard errors of the last-decade mean; otherwise that mean. Only an accepted fit is kept
/// in the record.
pub fn saturation_record(point: &SweepPoint, h: f64, trace: &QuenchTrace) -> Result<SaturationRecord> {
    let times = &trace.times;
    let (m_mean, m_err, lo, hi) = window_stats(times, &trace.mean.m2)?;
    let (s_mean, s_err, _, _) = window_stats(times, &trace.mean.s1_half)?;
    let fit = if point.f > 0.0 {
        fit_closure(times, &trace.mean.m2, h, point.f, SaturationMode::Free).ok()
    } else {
        None
    };
    let m2_ceiling = point.l as f64;
    let fit = fit.filter(|f| {
        let var = f.covariance.first().and_then(|r| r.first()).copied().unwrap_or(f64::NAN);
        let m = f.model.m_sat;
        !f.degenerate
            && var.is_finite()
            && var >= 0.0
            && m > 0.0
            && m <= m2_ceiling
            && var.sqrt() <= FIT_UNCERTAINTY_LIMIT * m
            && (m - m_mean).abs() <= PLATEAU_CONSISTENCY * (var + m_err * m_err).sqrt()
    });
    let accepted = fit.as_ref().map(|f| (f.model.m_sat, f.covariance[0][0].sqrt()));
    let (m2_sat, m2_sat_err, method, window_lo) = match accepted {
        Some((m, e)) => {
            let first = times.iter().copied().find(|t| t * h >= 1.0).unwrap_or(lo);
            (m, e, "fit", first)
        }
        None => (m_mean, m_err, "late_window", lo),
    };
    Ok(SaturationRecord {
        l: point.l,
        f: point.f,
        init: point.init,
        m2_sat,
        m2_sat_err,
        s_half: s_mean,
        s_half_err: s_err,
        delta_m2: haar_reference(point.l) - m2_sat,
        window_lo,
        window_hi: hi,
        method: method.to_string(),
        fit,
    })
}

/// Everything persisted for one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: SweepPoint,
    pub times: Vec<f64>,
    pub samples: Vec<TraceColumns>,
    pub mean: TraceColumns,
    pub record: SaturationRecord,
}

impl PointResult {
    pub fn trace(&self) -> QuenchTrace {
        QuenchTrace {
            n_qubits: self.point.l,
            times: self.times.clone(),
            samples: self.samples.clone(),
            mean: self.mean.clone(),
            haar_reference: haar_reference(self.point.l),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    /// Successful points in sweep order.
    pub results: Vec<PointResult>,
    /// Points that failed, with the error message.
    pub failures: Vec<(SweepPoint, String)>,
    /// Points reused from an earlier (interrupted) run.
    pub resumed: usize,
}

impl SweepOutput {
    pub fn records(&self) -> Vec<SaturationRecord> {
        self.results.iter().map(|r| r.record.clone()).collect()
    }
}

fn compute_point(spec: &SweepSpec, point: &SweepPoint) -> Result<PointResult> {
    let model = ChainSpec::new(point.l, spec.j, spec.h, point.f);
    let initial = match point.init {
        InitialKind::RandomBloch => InitialStateSpec::random_bloch(spec.ensemble_size, spec.seed ^ point.stream()),
        kind => InitialStateSpec::new(kind),
    };
    let mut q = QuenchSpec::new(model.into(), initial, spec.grid.clone());
    q.propagator = spec.propagator;
    q.krylov = spec.krylov;
    q.max_qubits = spec.max_qubits;
    let trace = quench_trace(&q)?;
    let record = saturation_record(point, spec.h, &trace)?;
    Ok(PointResult {
        point: *point,
        times: trace.times,
        samples: trace.samples,
        mean: trace.mean,
        record,
    })
}

fn load_point(path: &Path, point: &SweepPoint) -> Option<PointResult> {
    let text = fs::read_to_string(path).ok()?;
    let r: PointResult = serde_json::from_str(&text).ok()?;
    (r.point == *point).then_some(r)
}

fn store_point(dir: &Path, r: &PointResult) -> Result<()> {
    let path = dir.join(r.point.file_name());
    let tmp = dir.join(format!("{}.tmp", r.point.file_name()));
    fs::write(&tmp, serde_json::to_vec(r)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Runs every sweep point. With `store`, each finished point is written to
/// its own file there and existing files are reused, so an interrupted sweep
/// resumes where it stopped. Per-point failures are collected, not fatal.
pub fn run_sweep(spec: &SweepSpec, store: Option<&Path>) -> Result<SweepOutput> {
    spec.validate()?;
    let estimate = spec.estimate_seconds();
    log::info!("sweep of {} points, estimated {:.0} s single-core", spec.points().len(), estimate);
    if let Some(budget) = spec.budget_seconds {
        if estimate > budget {
            return Err(Error::Resource(format!(
                "estimated cost {estimate:.0} s exceeds the budget of {budget:.0} s"
            )));
        }
    }
    if let Some(dir) = store {
        fs::create_dir_all(dir)?;
    }
    let points = spec.points();
    let outcomes: Vec<(bool, Result<PointResult>)> = points
        .par_iter()
        .map(|p| {
            let path: Option<PathBuf> = store.map(|d| d.join(p.file_name()));
            if let Some(done) = path.as_deref().and_then(|f| load_point(f, p)) {
                return (true, Ok(done));
            }
            log::info!("sweep point {}", p.id());
            let r = compute_point(spec, p);
            if let (Some(dir), Ok(res)) = (store, &r) {
                if let Err(e) = store_point(dir, res) {
                    return (false, Err(e));
                }
            }
            (false, r)
        })
        .collect();
    let mut out = SweepOutput { results: Vec::new(), failures: Vec::new(), resumed: 0 };
    for (p, (reused, r)) in points.into_iter().zip(outcomes) {
        match r {
            Ok(res) => {
                out.resumed += usize::from(reused);
                out.results.push(res);
            }
            Err(e) => {
                log::warn!("sweep point {} failed: {e}", p.id());
                out.failures.push((p, e.to_string()));
            }
        }
    }
    Ok(out)
}

/// One line of a sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "F")]
    pub f: f64,
    pub init: String,
    pub value: f64,
    pub stderr: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub run_id: String,
}

/// Observables exported per sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepObservable {
    M2Sat,
    DeltaM2,
    SHalf,
}

impl SweepObservable {
    pub const ALL: [SweepObservable; 3] = [SweepObservable::M2Sat, SweepObservable::DeltaM2, SweepObservable::SHalf];

    pub fn file_stem(&self) -> &'static str {
        match self {
            SweepObservable::M2Sat => "m2_sat",
            SweepObservable::DeltaM2 => "delta_m2",
            SweepObservable::SHalf => "s_half",
        }
    }

    fn pick(&self, r: &SaturationRecord) -> (f64, f64) {
        match self {
            SweepObservable::M2Sat => (r.m2_sat, r.m2_sat_err),
            SweepObservable::DeltaM2 => (r.delta_m2, r.m2_sat_err),
            SweepObservable::SHalf => (r.s_half, r.s_half_err),
        }
    }
}

pub fn sweep_rows(records: &[SaturationRecord], obs: SweepObservable, run_id: &str) -> Vec<SweepRow> {
    records
        .iter()
        .map(|r| {
            let (value, stderr) = obs.pick(r);
            let (window_lo, window_hi) = match obs {
                SweepObservable::SHalf => (r.window_hi / 10.0, r.window_hi),
                _ => (r.window_lo, r.window_hi),
            };
            SweepRow {
                l: r.l,
                f: r.f,
                init: r.init.to_string(),
                value,
                stderr,
                window_lo,
                window_hi,
                run_id: run_id.to_string(),
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    write_rows(w, rows)
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    read_rows(r)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// One size's curve `F ↦ value ± err`, sorted by F.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub l: usize,
    pub f: Vec<f64>,
    pub value: Vec<f64>,
    pub err: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverCurves {
    pub init: InitialKind,
    pub delta_m2: Vec<Curve>,
    pub s_half: Vec<Curve>,
    /// Spearman ρ of ΔM2 against F per size.
    pub delta_m2_spearman: Vec<(usize, f64)>,
    /// Spearman ρ of S_half against F per size.
    pub s_half_spearman: Vec<(usize, f64)>,
    /// Set when fewer than two sizes or five F points are available.
    pub coverage_warning: Option<String>,
}

/// ΔM2(F) and S_half(F) per size for one initial-state family.
pub fn crossover_curves(records: &[SaturationRecord], init: InitialKind) -> CrossoverCurves {
    let mut sizes: Vec<usize> = records.iter().filter(|r| r.init == init).map(|r| r.l).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut delta_m2 = Vec::new();
    let mut s_half = Vec::new();
    let mut rho_m = Vec::new();
    let mut rho_s = Vec::new();
    let mut min_points = usize::MAX;
    for &l in &sizes {
        let mut rs: Vec<&SaturationRecord> = records.iter().filter(|r| r.init == init && r.l == l).collect();
        rs.sort_by(|a, b| a.f.total_cmp(&b.f));
        let f: Vec<f64> = rs.iter().map(|r| r.f).collect();
        min_points = min_points.min(f.len());
        let dm = Curve {
            l,
            f: f.clone(),
            value: rs.iter().map(|r| r.delta_m2).collect(),
            err: rs.iter().map(|r| r.m2_sat_err).collect(),
        };
        let sh = Curve {
            l,
            f: f.clone(),
            value: rs.iter().map(|r| r.s_half).collect(),
            err: rs.iter().map(|r| r.s_half_err).collect(),
        };
        if f.len() >= 2 {
            rho_m.push((l, spearman(&f, &dm.value)));
            rho_s.push((l, spearman(&f, &sh.value)));
        }
        delta_m2.push(dm);
        s_half.push(sh);
    }
    let coverage_warning = if sizes.len() < 2 || min_points < 5 {
        Some(format!(
            "crossover curves need >= 2 sizes and >= 5 F points (have {} sizes, min {} points)",
            sizes.len(),
            if sizes.is_empty() { 0 } else { min_points }
        ))
    } else {
        None
    };
    CrossoverCurves {
        init,
        delta_m2,
        s_half,
        delta_m2_spearman: rho_m,
        s_half_spearman: rho_s,
        coverage_warning,
    }
}

/// Bounds and effort of the collapse search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    pub nu_min: f64,
    pub nu_max: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        Self {
            nu_min: 0.1,
            nu_max: 3.0,
            n_bootstrap: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseBootstrap {
    pub n: usize,
    pub f_c_std: f64,
    pub nu_std: f64,
    pub f_c_ci95: (f64, f64),
    pub nu_ci95: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseFit {
    #[serde(rename = "F_c")]
    pub f_c: f64,
    pub nu: f64,
    pub cost: f64,
    /// Objective with the raw F axis shared by all sizes.
    pub uncollapsed_cost: f64,
    pub bootstrap: CollapseBootstrap,
}

/// Minimum number of overlap abscissae for a valid collapse cost.
pub const MIN_OVERLAP_POINTS: usize = 4;

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|&v| v < x);
    if k == 0 {
        return ys[0];
    }
    if k >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    if x1 == x0 {
        return ys[k];
    }
    ys[k - 1] + (ys[k] - ys[k - 1]) * (x - x0) / (x1 - x0)
}

/// Master-curve residual for abscissae `x_L(F)`: the mean over overlap
/// points of the across-size variance, divided by the variance of all values.
/// `None` when fewer than [`MIN_OVERLAP_POINTS`] overlap points exist.
fn collapse_cost_with<X>(curves: &[Curve], abscissa: X) -> Option<f64>
where
    X: Fn(usize, f64) -> f64,
{
    let scaled: Vec<(Vec<f64>, Vec<f64>)> = curves
        .iter()
        .map(|c| {
            let mut pts: Vec<(f64, f64)> = c.f.iter().zip(&c.value).map(|(&f, &v)| (abscissa(c.l, f), v)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.dedup_by(|a, b| a.0 == b.0);
            pts.into_iter().unzip()
        })
        .collect();
    let lo = scaled.iter().map(|(x, _)| x[0]).fold(f64::NEG_INFINITY, f64::max);
    let hi = scaled.iter().map(|(x, _)| x[x.len() - 1]).fold(f64::INFINITY, f64::min);
    if !(lo < hi) {
        return None;
    }
    let mut grid: Vec<f64> = scaled
        .iter()
        .flat_map(|(x, _)| x.iter().copied().filter(|&v| v >= lo && v <= hi))
        .collect();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    if grid.len() < MIN_OVERLAP_POINTS {
        return None;
    }
    let all: Vec<f64> = curves.iter().flat_map(|c| c.value.iter().copied()).collect();
    let mean_all = all.iter().sum::<f64>() / all.len() as f64;
    let total_var = all.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / all.len() as f64;
    if !(total_var > 0.0) {
        return None;
    }
    let n = scaled.len() as f64;
    let within: f64 = grid
        .iter()
        .map(|&x| {
            let vals: Vec<f64> = scaled.iter().map(|(xs, ys)| interpolate(xs, ys, x)).collect();
            let m = vals.iter().sum::<f64>() / n;
            vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / grid.len() as f64;
    Some(within / total_var)
}

/// Collapse objective at `(F_c, ν)`.
pub fn collapse_cost(curves: &[Curve], f_c: f64, nu: f64) -> Option<f64> {
    collapse_cost_with(curves, |l, f| (f - f_c) * (l as f64).powf(1.0 / nu))
}

/// Nelder–Mead minimization in two dimensions.
fn nelder_mead<C: Fn([f64; 2]) -> f64>(cost: &C, start: [f64; 2], scale: [f64; 2], max_iter: usize) -> ([f64; 2], f64) {
    let mut simplex = [
        start,
        [start[0] + scale[0], start[1]],
        [start[0], start[1] + scale[1]],
    ];
    let mut vals = simplex.map(|p| cost(p));
    for _ in 0..max_iter {
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.map(|i| simplex[i]);
        vals = order.map(|i| vals[i]);
        let spread = (vals[2] - vals[0]).abs();
        let size = (0..2)
            .map(|k| (simplex[1][k] - simplex[0][k]).abs().max((simplex[2][k] - simplex[0][k]).abs()))
            .fold(0.0, f64::max);
        if spread < 1e-12 && size < 1e-9 {
            break;
        }
        let centroid = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let along = |t: f64| [centroid[0] + t * (simplex[2][0] - centroid[0]), centroid[1] + t * (simplex[2][1] - centroid[1])];
        let xr = along(-1.0);
        let fr = cost(xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = cost(xe);
            if fe < fr {
                simplex[2] = xe;
                vals[2] = fe;
            } else {
                simplex[2] = xr;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = xr;
            vals[2] = fr;
        } else {
            let xc = if fr < vals[2] { along(-0.5) } else { along(0.5) };
            let fc = cost(xc);
            if fc < vals[2].min(fr) {
                simplex[2] = xc;
                vals[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = [
                        simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
                    ];
                    vals[i] = cost(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("three vertices");
    (simplex[best], vals[best])
}

struct CollapseSearch<'a> {
    curves: &'a [Curve],
    f_lo: f64,
    f_hi: f64,
    opts: CollapseOptions,
}

impl CollapseSearch<'_> {
    /// Penalized objective over `(F_c, ln ν)`.
    fn objective(&self, p: [f64; 2]) -> f64 {
        let (f_c, nu) = (p[0], p[1].exp());
        if f_c < self.f_lo || f_c > self.f_hi || nu < self.opts.nu_min || nu > self.opts.nu_max {
            return 1e6;
        }
        collapse_cost(self.curves, f_c, nu).unwrap_or(1e3)
    }

    fn best_from(&self, starts: &[[f64; 2]]) -> ([f64; 2], f64) {
        let span = self.f_hi - self.f_lo;
        let obj = |p: [f64; 2]| self.objective(p);
        starts
            .iter()
            .map(|&s| nelder_mead(&obj, s, [0.1 * span, 0.3], 400))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty start list")
    }

    fn start_grid(&self) -> Vec<[f64; 2]> {
        let mut starts = Vec::new();
        for k in 1..=5 {
            let f_c = self.f_lo + (self.f_hi - self.f_lo) * k as f64 / 6.0;
            for nu in [0.3f64, 0.6, 1.0, 2.0] {
                starts.push([f_c, nu.ln()]);
            }
        }
        starts
    }
}

fn f_range(curves: &[Curve]) -> (f64, f64) {
    let lo = curves.iter().flat_map(|c| c.f.iter().copied()).fold(f64::INFINITY, f64::min);
    let hi = curves.iter().flat_map(|c| c.f.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Finite-size collapse of `value(F; L)` onto `g((F - F_c) L^{1/ν})`.
pub fn fit_collapse(curves: &[Curve], opts: &CollapseOptions) -> Result<CollapseFit> {
    let mut sizes: Vec<usize> = curves.iter().map(|c| c.l).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 3 || sizes.len() != curves.len() {
        return Err(Error::Domain("collapse needs at least three distinct sizes".into()));
    }
    if curves.iter().any(|c| c.f.len() < 2 || c.f.len() != c.value.len()) {
        return Err(Error::Domain("every curve needs at least two points".into()));
    }
    let (f_lo, f_hi) = f_range(curves);
    let search = CollapseSearch { curves, f_lo, f_hi, opts: *opts };
    let (best, cost) = search.best_from(&search.start_grid());
    let (f_c, nu) = (best[0], best[1].exp());
    if collapse_cost(curves, f_c, nu).is_none() {
        return Err(Error::Fit {
            iterations: 0,
            cost,
            best: vec![f_c, nu],
        });
    }
    let uncollapsed_cost = collapse_cost_with(curves, |_, f| f).unwrap_or(f64::NAN);

    // bootstrap over F points
    let mut all_f: Vec<f64> = curves.iter().flat_map(|c| c.f.iter().copied()).collect();
    all_f.sort_by(|a, b| a.total_cmp(b));
    all_f.dedup();
    let mut rng = SeededRng::new(opts.seed, stream_id(&["collapse-bootstrap"]));
    let mut fcs = Vec::new();
    let mut nus = Vec::new();
    for _ in 0..opts.n_bootstrap {
        let mut chosen: Vec<f64> = (0..all_f.len()).map(|_| all_f[rng.random_range(0..all_f.len())]).collect();
        chosen.sort_by(|a, b| a.total_cmp(b));
        chosen.dedup();
        let resampled: Vec<Curve> = curves
            .iter()
            .map(|c| {
                let keep: Vec<usize> = (0..c.f.len()).filter(|&i| chosen.contains(&c.f[i])).collect();
                Curve {
                    l: c.l,
                    f: keep.iter().map(|&i| c.f[i]).collect(),
                    value: keep.iter().map(|&i| c.value[i]).collect(),
                    err: keep.iter().map(|&i| c.err.get(i).copied().unwrap_or(0.0)).collect(),
                }
            })
            .collect();
        if resampled.iter().any(|c| c.f.len() < 2) {
            continue;
        }
        let sub = CollapseSearch { curves: &resampled, f_lo, f_hi, opts: *opts };
        let (p, c) = sub.best_from(&[best]);
        if c < 1e3 {
            fcs.push(p[0]);
            nus.push(p[1].exp());
        }
    }
    let stats = |v: &mut Vec<f64>| -> (f64, (f64, f64)) {
        if v.len() < 2 {
            return (f64::NAN, (f64::NAN, f64::NAN));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        (sd, crate::shadows::percentile_interval(v, 0.95))
    };
    let n_ok = fcs.len();
    let (f_c_std, f_c_ci95) = stats(&mut fcs);
    let (nu_std, nu_ci95) = stats(&mut nus);
    Ok(CollapseFit {
        f_c,
        nu,
        cost,
        uncollapsed_cost,
        bootstrap: CollapseBootstrap {
            n: n_ok,
            f_c_std,
            nu_std,
            f_c_ci95,
            nu_ci95,
        },
    })
}

/// Gaussian smoothing in `log10 t` with width `sigma` decades. Points at
/// `t = 0` pass through unchanged; `sigma = 0` is the identity.
pub fn smooth_log_time(times: &[f64], values: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::Alignment("times and values differ in length".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("smoothing width must be >= 0 (got {sigma})")));
    }
    if sigma == 0.0 {
        return Ok(values.to_vec());
    }
    let logs: Vec<Option<f64>> = times.iter().map(|&t| (t > 0.0).then(|| t.log10())).collect();
    Ok(logs
        .iter()
        .zip(values)
        .map(|(lt, &v)| {
            let Some(x) = lt else { return v };
            let (mut wsum, mut acc) = (0.0, 0.0);
            for (ly, &y) in logs.iter().zip(values) {
                if let Some(z) = ly {
                    let w = (-(x - z).powi(2) / (2.0 * sigma * sigma)).exp();
                    wsum += w;
                    acc += w * y;
                }
            }
            acc / wsum
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricCurve {
    pub f: f64,
    /// `f(F) = M2_sat(F) / M2_sat(F_ref)` (1 when rescaling is off).
    pub scale: f64,
    pub t: Vec<f64>,
    pub s_half: Vec<f64>,
    /// Smoothed M2, divided by `scale`.
    pub m2: Vec<f64>,
}

/// Default smoothing width in decades of time.
pub const DEFAULT_SMOOTHING: f64 = 0.1;

/// Parametric `(S_half(t), M2(t))` pairs per F. With `rescale`, M2 is divided
/// by the ratio of last-decade plateaus to that of the smallest F.
pub fn parametric_relation(traces: &[(f64, &QuenchTrace)], sigma: f64, rescale: bool) -> Result<Vec<ParametricCurve>> {
    let first = traces.first().ok_or_else(|| Error::Domain("no traces given".into()))?;
    if traces.iter().any(|(_, t)| t.times != first.1.times) {
        return Err(Error::Alignment("traces do not share a time grid".into()));
    }
    let (f_ref, ref_trace) = traces
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty");
    let _ = f_ref;
    let ref_sat = last_decade_mean(&ref_trace.times, &ref_trace.mean.m2)?;
    traces
        .iter()
        .map(|(f, tr)| {
            let scale = if rescale {
                let sat = last_decade_mean(&tr.times, &tr.mean.m2)?;
                if !(ref_sat > 0.0) {
                    return Err(Error::Domain("reference plateau is not positive".into()));
                }
                sat / ref_sat
            } else {
                1.0
            };
            let m2 = smooth_log_time(&tr.times, &tr.mean.m2, sigma)?;
            Ok(ParametricCurve {
                f: *f,
                scale,
                t: tr.times.clone(),
                s_half: smooth_log_time(&tr.times, &tr.mean.s1_half, sigma)?,
                m2: m2.iter().map(|v| v / scale).collect(),
            })
        })
        .collect()
}
