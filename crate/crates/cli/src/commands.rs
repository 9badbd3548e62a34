//! The four experiment subcommands.

use std::collections::BTreeSet;
use std::fs;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use stark_magic::evolution::evolve;
use stark_magic::magic::{half_chain_mask, moment_sums, renyi_entanglement};
use stark_magic::quench::{quench_trace, QuenchSpec, QuenchTrace, TraceSidecar};
use stark_magic::rng::stream_id;
use stark_magic::scaling::{
    crossover_curves, fit_collapse, parametric_relation, run_sweep, sweep_rows, write_sweep_csv, CollapseOptions,
    SweepObservable, SweepPoint, SweepSpec,
};
use stark_magic::shadows::{estimate_all, sample_shots, write_estimator_csv, EstimatorRow};
use stark_magic::theory::{
    dephasing_front, fit_closure, j_eff_factorial, j_eff_profile, sw_effective_diagonal, DiagonalCouplings,
};
use stark_magic::{build_hamiltonian, prepare_initial_state, ChainSpec, InitialKind, InitialStateSpec, SeededRng};

use crate::config::{RunConfig, CODE_VERSION};
use crate::error::CliError;
use crate::output::{PointStatus, RunDir};

fn initial_spec(config: &RunConfig, point: &SweepPoint) -> InitialStateSpec {
    match point.init {
        InitialKind::RandomBloch => InitialStateSpec::random_bloch(config.initial.ensemble_size, config.seed ^ point.stream()),
        kind => InitialStateSpec::new(kind),
    }
}

fn point_seeds(config: &RunConfig, point: &SweepPoint) -> Vec<u64> {
    match point.init {
        InitialKind::RandomBloch => vec![config.seed ^ point.stream()],
        _ => Vec::new(),
    }
}

fn trace_stem(point: &SweepPoint) -> String {
    format!("trace_L={}_F={:?}_init={}", point.l, point.f, point.init)
}

/// Refuses sizes beyond the configured limit before any allocation.
fn preflight(config: &RunConfig, l: usize) -> Result<(), CliError> {
    let limit = config.evolution.max_qubits;
    if l > limit {
        let mib = (16u128 << l) as f64 / (1u128 << 20) as f64;
        return Err(stark_magic::Error::Resource(format!(
            "L = {l} needs {mib:.0} MiB per state vector (plus propagator workspace); evolution.max_qubits = {limit}"
        ))
        .into());
    }
    Ok(())
}

fn write_trace(
    dir: &mut RunDir,
    config: &RunConfig,
    run_id: &str,
    point: &SweepPoint,
    trace: &QuenchTrace,
) -> Result<(), CliError> {
    let stem = trace_stem(point);
    let csv_path = dir.path(&format!("traces/{stem}.csv"));
    dir.write_with(&format!("traces/{stem}.csv"), |w| {
        trace.write_csv(w).map_err(CliError::from)
    })
    .map_err(|e| match e {
        CliError::Core(stark_magic::Error::Io(io)) => CliError::io(&csv_path, io),
        other => other,
    })?;
    let sidecar = TraceSidecar {
        config: json!({
            "run_id": run_id,
            "point": {
                "l": point.l,
                "j": config.model.j,
                "h": config.model.h,
                "f": point.f,
                "init": point.init,
            },
            "run": config,
        }),
        seeds: point_seeds(config, point),
        n_qubits: trace.n_qubits,
        n_samples: trace.samples.len(),
        haar_reference: trace.haar_reference,
        code_version: CODE_VERSION.to_string(),
    };
    dir.write_json(&format!("traces/{stem}.json"), &sidecar)
}

/// One trace per `(F, init)`; ensemble members share a file via `sample_id`.
pub fn cmd_quench(config: &RunConfig, run_id: &str, dir: &mut RunDir) -> Result<Vec<PointStatus>, CliError> {
    let l = config.model.l;
    preflight(config, l)?;
    let grid = config.time.to_grid()?;
    let propagator = config.evolution.propagator()?;
    let points: Vec<SweepPoint> = config
        .model
        .f
        .iter()
        .flat_map(|&f| config.initial.kinds.iter().map(move |&init| SweepPoint { l, f, init }))
        .collect();
    let traces: Vec<Result<QuenchTrace, CliError>> = points
        .par_iter()
        .map(|p| {
            log::info!("quench {}", p.id());
            let mut spec = QuenchSpec::new(config.model.spec(l, p.f), initial_spec(config, p), grid.clone());
            spec.propagator = propagator;
            spec.krylov = config.evolution.krylov();
            spec.max_qubits = config.evolution.max_qubits;
            spec.diagnostics = config.diagnostics.trace();
            Ok(quench_trace(&spec)?)
        })
        .collect();
    let mut status = Vec::new();
    for (p, t) in points.iter().zip(traces) {
        write_trace(dir, config, run_id, p, &t?)?;
        status.push(PointStatus::ok(p.id()));
    }
    Ok(status)
}

#[derive(Serialize)]
struct ParametricRow {
    #[serde(rename = "F")]
    f: f64,
    t: f64,
    #[serde(rename = "S_half")]
    s_half: f64,
    #[serde(rename = "M2")]
    m2: f64,
    scale: f64,
    #[serde(rename = "M2_rescaled")]
    m2_rescaled: f64,
}

fn write_csv_rows<T: Serialize>(dir: &mut RunDir, rel: &str, rows: &[T]) -> Result<(), CliError> {
    let path = dir.path(rel);
    dir.write_with(rel, |w| {
        let mut wr = csv::Writer::from_writer(w);
        for r in rows {
            wr.serialize(r).map_err(|e| CliError::schema(rel, e.to_string()))?;
        }
        wr.flush().map_err(|e| CliError::io(&path, e))
    })
}

/// Saturation sweep, crossover tables, collapse fits and parametric curves.
pub fn cmd_sweep(
    config: &RunConfig,
    run_id: &str,
    dir: &mut RunDir,
    resume: bool,
) -> Result<Vec<PointStatus>, CliError> {
    let sc = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::schema("sweep", "the sweep command needs a [sweep] section"))?;
    for &l in &sc.l {
        preflight(config, l)?;
    }
    let mut spec = SweepSpec::new(sc.f.clone(), sc.l.clone(), config.initial.kinds.clone(), config.time.to_grid()?);
    spec.j = config.model.j;
    spec.h = config.model.h;
    spec.ensemble_size = config.initial.ensemble_size;
    spec.seed = config.seed;
    spec.propagator = config.evolution.propagator()?;
    spec.krylov = config.evolution.krylov();
    spec.max_qubits = config.evolution.max_qubits;
    spec.budget_seconds = sc.budget_seconds;
    let points_dir = dir.path("points");
    let out = run_sweep(&spec, Some(&points_dir))?;
    log::info!("sweep finished: {} points, {} resumed, {} failed", out.results.len(), out.resumed, out.failures.len());

    let mut status = Vec::new();
    let reused = if resume { out.resumed } else { 0 };
    for r in &out.results {
        status.push(PointStatus::ok(r.point.id()));
    }
    if reused > 0 {
        log::info!("{reused} points taken from the interrupted run");
    }
    for (p, e) in &out.failures {
        status.push(PointStatus::failed(p.id(), e));
    }
    for r in &out.results {
        write_trace(dir, config, run_id, &r.point, &r.trace())?;
    }

    let records = out.records();
    for obs in SweepObservable::ALL {
        let rows = sweep_rows(&records, obs, run_id);
        let rel = format!("sweep/{}.csv", obs.file_stem());
        dir.write_with(&rel, |w| write_sweep_csv(w, &rows).map_err(CliError::from))?;
    }
    for &init in &config.initial.kinds {
        let cc = crossover_curves(&records, init);
        if let Some(w) = &cc.coverage_warning {
            log::warn!("{init}: {w}");
        }
        dir.write_json(&format!("sweep/crossover_{init}.json"), &cc)?;
        if init == sc.collapse_init {
            let opts = CollapseOptions {
                n_bootstrap: sc.n_bootstrap,
                seed: config.seed,
                ..Default::default()
            };
            for (name, curves) in [("delta_m2", &cc.delta_m2), ("s_half", &cc.s_half)] {
                match fit_collapse(curves, &opts) {
                    Ok(fit) => dir.write_json(&format!("sweep/collapse_{name}.json"), &fit)?,
                    Err(e) => {
                        log::warn!("collapse of {name} failed: {e}");
                        status.push(PointStatus::failed(format!("collapse {name}"), e.to_string()));
                    }
                }
            }
        }
    }

    // parametric (S_half, M2) curves per initial state at one size
    let size = sc.parametric_l.unwrap_or_else(|| *sc.l.iter().max().expect("validated"));
    for &init in &config.initial.kinds {
        let traces: Vec<(f64, QuenchTrace)> = out
            .results
            .iter()
            .filter(|r| r.point.l == size && r.point.init == init)
            .map(|r| (r.point.f, r.trace()))
            .collect();
        if traces.is_empty() {
            continue;
        }
        let refs: Vec<(f64, &QuenchTrace)> = traces.iter().map(|(f, t)| (*f, t)).collect();
        let curves = parametric_relation(&refs, sc.smoothing, true)?;
        let rows: Vec<ParametricRow> = curves
            .iter()
            .flat_map(|c| {
                (0..c.t.len()).map(move |k| ParametricRow {
                    f: c.f,
                    t: c.t[k],
                    s_half: c.s_half[k],
                    m2: c.m2[k] * c.scale,
                    scale: c.scale,
                    m2_rescaled: c.m2[k],
                })
            })
            .collect();
        write_csv_rows(dir, &format!("sweep/parametric_{init}_L={size}.csv"), &rows)?;
    }
    Ok(status)
}

/// Randomized-measurement estimates along the quench, with exact columns.
pub fn cmd_shadows(config: &RunConfig, _run_id: &str, dir: &mut RunDir) -> Result<Vec<PointStatus>, CliError> {
    let sc = config
        .shadows
        .as_ref()
        .ok_or_else(|| CliError::schema("shadows", "the shadows command needs a [shadows] section"))?;
    let l = config.model.l;
    preflight(config, l)?;
    let grid = match &sc.times {
        Some(t) => stark_magic::evolution::TimeGrid::from_times(t.clone())
            .map_err(|e| CliError::schema("shadows.times", e.to_string()))?,
        None => config.time.to_grid()?,
    };
    let region = match &sc.region {
        Some(sites) => sites.iter().fold(0u64, |m, &i| m | (1 << i)),
        None => half_chain_mask(l),
    };
    let propagator = config.evolution.propagator()?;
    let budget = sc.n_settings * sc.n_shots;
    let mut status = Vec::new();
    for &f in &config.model.f {
        for &init in &config.initial.kinds {
            let point = SweepPoint { l, f, init };
            log::info!("shadows {}", point.id());
            let ham = build_hamiltonian(&config.model.spec(l, f), config.evolution.max_qubits)?;
            let initial = prepare_initial_state(&initial_spec(config, &point), &ham)?;
            let evolved: Vec<Vec<_>> = initial
                .iter()
                .map(|psi| evolve(&ham, psi, &grid, propagator, &config.evolution.krylov()))
                .collect::<Result<_, _>>()?;
            let weight = 1.0 / evolved.len() as f64;
            let pure = evolved.len() == 1 && l <= sc.exact_max_qubits;
            let mut rows = Vec::new();
            let mut notes = Vec::new();
            for (k, &t) in grid.times().iter().enumerate() {
                let mixture: Vec<(f64, &stark_magic::StateVector)> =
                    evolved.iter().map(|states| (weight, &states[k])).collect();
                let tag = format!("{t:?}");
                let seed = stream_id(&["shadows", &config.seed.to_string(), &point.id(), &tag]);
                let batch = sample_shots(&mixture, sc.n_settings, sc.n_shots, region, seed)?;
                if sc.save_shots {
                    let rel = format!("shadows/shots_L={l}_F={f:?}_init={init}_t={tag}.bin");
                    dir.write_with(&rel, |w| batch.write_binary(w).map_err(CliError::from))?;
                }
                let mut rng = SeededRng::new(seed, stream_id(&["shadows-bootstrap"]));
                let est = estimate_all(&batch, sc.n_bootstrap, &mut rng)?;
                let exact = if pure {
                    let psi = mixture[0].1;
                    let m2 = moment_sums(psi, &[2.0])?.sre(2.0)?;
                    let s2 = renyi_entanglement(psi, region, 2.0)?;
                    Some((m2, s2, 2f64.powf(-s2), 2f64.powf(-m2) / 2f64.powi(l as i32)))
                } else {
                    None
                };
                for why in &est.undefined {
                    log::warn!("{} at t = {t}: {why}", point.id());
                    notes.push(format!("t={tag}: {why}"));
                }
                if config.diagnostics.purity {
                    rows.push(EstimatorRow::new(t, "purity", &est.purity, exact.map(|e| e.2), budget));
                    if let Some(s2) = &est.s2 {
                        rows.push(EstimatorRow::new(t, "S2", s2, exact.map(|e| e.1), budget));
                    }
                    rows.push(EstimatorRow::new(t, "purity_full", &est.purity_full, exact.map(|_| 1.0), budget));
                }
                if config.diagnostics.m2 {
                    rows.push(EstimatorRow::new(t, "W", &est.w, exact.map(|e| e.3), budget));
                    if let Some(m2) = &est.m2 {
                        rows.push(EstimatorRow::new(t, "M2", m2, exact.map(|e| e.0), budget));
                    }
                }
            }
            let rel = format!("shadows/estimates_L={l}_F={f:?}_init={init}.csv");
            dir.write_with(&rel, |w| write_estimator_csv(w, &rows).map_err(CliError::from))?;
            status.push(if notes.is_empty() {
                PointStatus::ok(point.id())
            } else {
                PointStatus::failed(point.id(), notes.join("; "))
            });
        }
    }
    Ok(status)
}

#[derive(Serialize)]
struct JEffRow {
    #[serde(rename = "L")]
    l: usize,
    h_over_f: f64,
    #[serde(rename = "F")]
    f: f64,
    h: f64,
    r: usize,
    j_eff: f64,
    j_eff_factorial: f64,
    log_ratio: f64,
    /// RMS of `log_ratio` over the resolved distances of this profile.
    fit_residual: f64,
}

#[derive(Serialize)]
struct CoefficientRow {
    #[serde(rename = "L")]
    l: usize,
    h_over_f: f64,
    #[serde(rename = "F")]
    f: f64,
    h: f64,
    /// 0-based sites joined by `-`.
    sites: String,
    body: u32,
    coefficient: f64,
    bare: f64,
    correction: f64,
}

#[derive(Serialize)]
struct FrontRow {
    h_over_f: f64,
    #[serde(rename = "F")]
    f: f64,
    h: f64,
    j0: f64,
    t: f64,
    r: f64,
    pre_front: bool,
}

#[derive(Serialize)]
struct ClosureRow {
    trace_run: String,
    trace: String,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "F")]
    f: f64,
    h: f64,
    init: String,
    converged: bool,
    degenerate: bool,
    j0: Option<f64>,
    gamma: Option<f64>,
    m_sat: Option<f64>,
    m_sat_err: Option<f64>,
    rms: Option<f64>,
    n_points: Option<usize>,
    error: String,
}

const CLOSURE_HEADER: &str =
    "trace_run,trace,L,F,h,init,converged,degenerate,j0,gamma,m_sat,m_sat_err,rms,n_points,error\n";

/// Smallest coupling treated as resolved in double precision.
const COUPLING_FLOOR: f64 = 1e-12;

fn sites_label(mask: u64) -> String {
    (0..64)
        .filter(|i| mask >> i & 1 == 1)
        .map(|i: u32| i.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Schrieffer–Wolff coefficients, `J_eff` profiles, fronts and closure fits.
pub fn cmd_theory(config: &RunConfig, _run_id: &str, dir: &mut RunDir) -> Result<Vec<PointStatus>, CliError> {
    let tc = config
        .theory
        .as_ref()
        .ok_or_else(|| CliError::schema("theory", "the theory command needs a [theory] section"))?;
    let f = tc.f;
    let mut j_rows = Vec::new();
    let mut c_rows = Vec::new();
    let mut status = Vec::new();
    for &l in &tc.l {
        for &ratio in &tc.h_over_f {
            let h = ratio * f;
            let spec = ChainSpec::new(l, config.model.j, h, f);
            let (sw, couplings) = sw_effective_diagonal(&spec)?;
            let bare = DiagonalCouplings::from_diagonal(&sw.h0_diagonal)?;
            let profile = j_eff_profile(&couplings)?;
            let j0 = profile[0];
            let logs: Vec<f64> = profile
                .iter()
                .enumerate()
                .map(|(k, &v)| (v / j_eff_factorial(k + 1, j0, h, f)).ln())
                .collect();
            let resolved: Vec<f64> = profile
                .iter()
                .zip(&logs)
                .filter(|(v, _)| **v > COUPLING_FLOOR)
                .map(|(_, g)| *g)
                .collect();
            let residual = (resolved.iter().map(|g| g * g).sum::<f64>() / resolved.len().max(1) as f64).sqrt();
            for (k, &v) in profile.iter().enumerate() {
                j_rows.push(JEffRow {
                    l,
                    h_over_f: ratio,
                    f,
                    h,
                    r: k + 1,
                    j_eff: v,
                    j_eff_factorial: j_eff_factorial(k + 1, j0, h, f),
                    log_ratio: logs[k],
                    fit_residual: residual,
                });
            }
            let masks: BTreeSet<u64> = couplings
                .coefficients
                .keys()
                .chain(bare.coefficients.keys())
                .copied()
                .collect();
            for mask in masks {
                let (c, b) = (couplings.coefficient(mask), bare.coefficient(mask));
                c_rows.push(CoefficientRow {
                    l,
                    h_over_f: ratio,
                    f,
                    h,
                    sites: sites_label(mask),
                    body: mask.count_ones(),
                    coefficient: c,
                    bare: b,
                    correction: c - b,
                });
            }
            status.push(PointStatus::ok(format!("L={l}|h/F={ratio:?}")));
        }
    }
    write_csv_rows(dir, "theory/j_eff.csv", &j_rows)?;
    write_csv_rows(dir, "theory/sw_coefficients.csv", &c_rows)?;

    let grid = config.time.to_grid()?;
    let mut front_rows = Vec::new();
    for &ratio in &tc.h_over_f {
        for &t in grid.times() {
            let fr = dephasing_front(t, config.model.j, ratio * f, f)?;
            front_rows.push(FrontRow {
                h_over_f: ratio,
                f,
                h: ratio * f,
                j0: config.model.j,
                t,
                r: fr.r,
                pre_front: fr.pre_front,
            });
        }
    }
    write_csv_rows(dir, "theory/front.csv", &front_rows)?;

    let mut closure_rows = Vec::new();
    if let Some(run) = &tc.trace_run {
        let traces_dir = dir.out_root.join(run).join("traces");
        let mut sidecars: Vec<_> = fs::read_dir(&traces_dir)
            .map_err(|e| CliError::io(&traces_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        sidecars.sort();
        for side in sidecars {
            let text = fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
            let meta: TraceSidecar = serde_json::from_str(&text).map_err(stark_magic::Error::from)?;
            let point = &meta.config["point"];
            let (Some(tf), Some(th), Some(init)) = (point["f"].as_f64(), point["h"].as_f64(), point["init"].as_str())
            else {
                return Err(CliError::schema(&side.display().to_string(), "sidecar lacks point.f / point.h / point.init"));
            };
            let csv_path = side.with_extension("csv");
            let file = fs::File::open(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
            let trace = QuenchTrace::read_csv(file, meta.n_qubits)?;
            let stem = side.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let mut row = ClosureRow {
                trace_run: run.clone(),
                trace: stem.clone(),
                l: meta.n_qubits,
                f: tf,
                h: th,
                init: init.to_string(),
                converged: false,
                degenerate: false,
                j0: None,
                gamma: None,
                m_sat: None,
                m_sat_err: None,
                rms: None,
                n_points: None,
                error: String::new(),
            };
            match fit_closure(&trace.times, &trace.mean.m2, th, tf, tc.saturation.into()) {
                Ok(fit) => {
                    row.converged = true;
                    row.degenerate = fit.degenerate;
                    row.j0 = Some(fit.model.j0);
                    row.gamma = Some(fit.model.gamma);
                    row.m_sat = Some(fit.model.m_sat);
                    row.m_sat_err = fit.covariance.first().and_then(|r| r.first()).map(|v| v.max(0.0).sqrt());
                    row.rms = Some(fit.rms);
                    row.n_points = Some(fit.n_points);
                    status.push(PointStatus::ok(format!("closure {stem}")));
                }
                Err(e) => {
                    row.error = e.to_string();
                    status.push(PointStatus::failed(format!("closure {stem}"), e.to_string()));
                }
            }
            closure_rows.push(row);
        }
    }
    if closure_rows.is_empty() {
        dir.write_bytes("theory/closure_fits.csv", CLOSURE_HEADER.as_bytes())?;
    } else {
        write_csv_rows(dir, "theory/closure_fits.csv", &closure_rows)?;
    }
    Ok(status)
}
