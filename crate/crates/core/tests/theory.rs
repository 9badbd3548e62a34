use rand::Rng;
use stark_magic::theory::{
    closure_eval, dephasing_front, fit_closure, j_eff_at, j_eff_factorial, j_eff_profile,
    lambert_w0, last_decade_mean, sw_effective_diagonal, sw_generator, sw_matrices,
    symmetric_spectrum, ClosureModel, DiagonalCouplings, SaturationMode,
};
use stark_magic::{ChainSpec, Error, SeededRng};
use std::f64::consts::E;

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    num / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

#[test]
fn zero_field_leaves_the_diagonal_untouched() {
    let spec = ChainSpec::new(5, 0.8, 0.0, 2.0);
    let (sw, c) = sw_effective_diagonal(&spec).unwrap();
    for (a, b) in sw.effective_diagonal.iter().zip(&sw.h0_diagonal) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(sw.analytic_diagonal, sw.h0_diagonal);
    for (&mask, &v) in &c.coefficients {
        let w = mask.count_ones();
        let nn_pair = w == 2 && {
            let lo = mask.trailing_zeros();
            mask == 0b11 << lo
        };
        if !(w == 1 || nn_pair) {
            assert!(v.abs() < 1e-12, "mask {mask:#b}: {v}");
        }
    }
    // ladder tilt F·j on site j = i + 1; bond J
    assert!((c.coefficient(0b1) - 2.0).abs() < 1e-12);
    assert!((c.coefficient(0b10000) - 10.0).abs() < 1e-12);
    assert!((c.two_body[1][2] - 0.8).abs() < 1e-12);
}

#[test]
fn single_site_matches_exact_two_level_energy() {
    // H = F Z + h X on one ladder site: exact levels ±√(F² + h²).
    let f = 1.0;
    let hs = [0.02, 0.04, 0.08, 0.16];
    let mut resid = Vec::new();
    for &h in &hs {
        let (sw, _) = sw_effective_diagonal(&ChainSpec::new(1, 0.0, h, f)).unwrap();
        let exact = (f * f + h * h).sqrt();
        assert!((sw.analytic_diagonal[0] - (f + h * h / (2.0 * f))).abs() < 1e-15);
        assert!((sw.analytic_diagonal[1] + (f + h * h / (2.0 * f))).abs() < 1e-15);
        resid.push((sw.analytic_diagonal[0] - exact).abs());
    }
    let s = slope(&hs, &resid);
    assert!((s - 4.0).abs() < 0.1, "slope {s}");
}

#[test]
fn nearest_neighbor_coupling_at_strong_tilt() {
    let spec = ChainSpec::new(4, 1.0, 1.0, 10.0);
    let (_, c) = sw_effective_diagonal(&spec).unwrap();
    for i in 0..3 {
        let dev = (c.two_body[i][i + 1] - 1.0).abs();
        assert!(dev < 0.05, "bond {i}: {}", c.two_body[i][i + 1]);
    }
}

#[test]
fn deviation_from_second_order_vanishes_as_fourth_power() {
    // Odd orders of the conjugation are purely off-diagonal, so the first
    // diagonal correction beyond second order is O(h⁴).
    let hs = [0.05, 0.1, 0.2, 0.4];
    let dev: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let (sw, _) = sw_effective_diagonal(&ChainSpec::new(4, 1.0, h, 10.0)).unwrap();
            sw.effective_diagonal
                .iter()
                .zip(&sw.analytic_diagonal)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let s = slope(&hs, &dev);
    assert!((s - 4.0).abs() < 0.2, "slope {s}, deviations {dev:?}");
}

#[test]
fn rotation_is_orthogonal_and_preserves_spectrum() {
    let spec = ChainSpec::new(6, 1.0, 0.6, 3.0);
    let m = sw_matrices(&spec).unwrap();
    let n = m.rotation.nrows();
    let prod = &m.rotation * m.rotation.transpose();
    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            err = err.max((prod[(i, j)] - want).abs());
        }
    }
    assert!(err < 1e-10, "{err}");
    let a = symmetric_spectrum(&m.hamiltonian).unwrap();
    let b = symmetric_spectrum(&m.effective).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
    for i in 0..n {
        for j in 0..n {
            assert_eq!(m.generator[(i, j)], -m.generator[(j, i)]);
        }
    }
}

#[test]
fn generator_solves_the_first_order_condition() {
    // [H_0, S] = V
    let spec = ChainSpec::new(4, 0.7, 0.3, 2.5);
    let m = sw_matrices(&spec).unwrap();
    let n = m.hamiltonian.nrows();
    let h0 = faer::Mat::from_fn(n, n, |i, j| if i == j { m.hamiltonian[(i, i)] } else { 0.0 });
    let v = faer::Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { m.hamiltonian[(i, j)] });
    let comm = &h0 * &m.generator - &m.generator * &h0;
    for i in 0..n {
        for j in 0..n {
            assert!((comm[(i, j)] - v[(i, j)]).abs() < 1e-12);
        }
    }
}

#[test]
fn couplings_reconstruct_the_diagonal() {
    let spec = ChainSpec::new(6, 1.0, 0.5, 2.0);
    let (sw, c) = sw_effective_diagonal(&spec).unwrap();
    let rec = c.reconstruct();
    for (a, b) in rec.iter().zip(&sw.effective_diagonal) {
        assert!((a - b).abs() < 1e-10);
    }
    let trace: f64 = sw.effective_diagonal.iter().sum();
    assert!((c.coefficient(0) - trace / 64.0).abs() < 1e-12);
}

#[test]
fn off_diagonal_weight_drops_linearly_in_h() {
    let hs = [0.025, 0.05, 0.1, 0.2];
    let ratios: Vec<f64> = hs
        .iter()
        .map(|&h| sw_effective_diagonal(&ChainSpec::new(6, 1.0, h, 4.0)).unwrap().0.offdiag_ratio)
        .collect();
    let s = slope(&hs, &ratios);
    assert!((s - 1.0).abs() < 0.2, "slope {s}");
}

#[test]
fn resonance_is_a_singularity() {
    // F = J: ladder site 1 with its right neighbor down has Δ = F - J = 0
    let spec = ChainSpec::new(3, 1.0, 0.1, 1.0);
    match sw_generator(&spec) {
        Err(Error::Singularity { site, sector, delta }) => {
            assert_eq!(site, 1);
            assert_eq!(sector, "(0,-)");
            assert!(delta < 1e-8);
        }
        other => panic!("expected singularity, got {other:?}"),
    }
    assert!(matches!(
        sw_effective_diagonal(&ChainSpec::new(3, 1.0, 0.1, 0.0)),
        Err(Error::Domain(_))
    ));
}

#[test]
fn profile_examples() {
    let mut c = DiagonalCouplings::from_diagonal(&[0.0; 32]).unwrap();
    assert_eq!(j_eff_profile(&c).unwrap(), vec![0.0; 4]);
    c.two_body[0][2] = 0.3;
    c.two_body[2][0] = 0.3;
    assert!((j_eff_at(&c, 2).unwrap() - 0.3 / 3f64.sqrt()).abs() < 1e-15);
    assert!(matches!(j_eff_at(&c, 5), Err(Error::Domain(_))));
    assert!(matches!(j_eff_at(&c, 0), Err(Error::Domain(_))));
}

#[test]
fn factorial_model_values() {
    assert_eq!(j_eff_factorial(1, 0.7, 0.2, 2.0), 0.7);
    assert!((j_eff_factorial(2, 0.7, 0.2, 2.0) - 0.07).abs() < 1e-15);
    assert!((j_eff_factorial(3, 0.7, 0.2, 2.0) - 0.7 * 0.01 / 2.0).abs() < 1e-15);
}

#[test]
fn profile_decays_faster_than_exponentially() {
    let spec = ChainSpec::new(8, 1.0, 1.0, 2.0);
    let (_, c) = sw_effective_diagonal(&spec).unwrap();
    let p = j_eff_profile(&c).unwrap();
    // distances whose couplings stand above the double-precision floor
    let logs: Vec<f64> = p.iter().take_while(|v| **v > 1e-12).map(|v| v.ln()).collect();
    assert!(logs.len() >= 4, "profile {p:?}");
    for w in logs.windows(3) {
        assert!(w[2] - 2.0 * w[1] + w[0] < 0.0, "profile {p:?}");
    }
}

/// Newton iteration on `w e^w = x` from w = 1.
fn lambert_newton_oracle(x: f64) -> f64 {
    let mut w = 1.0f64;
    for _ in 0..200 {
        w -= (w * w.exp() - x) / ((w + 1.0) * w.exp());
    }
    w
}

#[test]
fn lambert_examples() {
    assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
    assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
    let w1 = lambert_w0(1.0).unwrap();
    assert!((w1 - lambert_newton_oracle(1.0)).abs() < 1e-14);
    assert!((w1 - 0.5671432904).abs() < 1e-10);
    assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
    assert!(matches!(lambert_w0(-0.4), Err(Error::Domain(_))));
    assert!(matches!(lambert_w0(f64::NAN), Err(Error::Domain(_))));
}

#[test]
fn lambert_identity_across_range() {
    let mut xs = vec![-1.0 / E + 1e-12, -0.36, -0.3, -0.1, -1e-8, 1e-10, 0.5, 2.0, 10.0, 1e3, 1e10, 1e100, 1e250];
    let mut rng = SeededRng::new(0, 0);
    for _ in 0..2000 {
        xs.push(10f64.powf(rng.random_range(-6.0..12.0)));
        xs.push(-1.0 / E * rng.random::<f64>());
    }
    for x in xs {
        let w = lambert_w0(x).unwrap();
        let resid = if x > 1e200 {
            // compare in log form to avoid overflow
            ((w + w.ln()) - x.ln()).abs() / x.ln()
        } else {
            (w * w.exp() - x).abs() / x.abs().max(1.0)
        };
        assert!(resid <= 1e-12, "x = {x}: residual {resid}");
        assert!(w >= -1.0);
    }
}

#[test]
fn front_examples() {
    let r = dephasing_front(E, 1.0, 1.0, 1.0).unwrap();
    assert!(!r.pre_front);
    assert!((r.r - (1.0 + 1.0 / lambert_w0(1.0 / E).unwrap())).abs() < 1e-12);
    assert!((r.r - 4.591).abs() < 1e-3);
    let pre = dephasing_front(0.5, 1.0, 0.3, 1.0).unwrap();
    assert!(pre.pre_front && pre.r == 1.0);
    assert_eq!(dephasing_front(100.0, 1.0, 0.0, 1.0).unwrap().r, 1.0);
    assert_eq!(dephasing_front(100.0, 1.0, 0.5, 0.0).unwrap().r, f64::INFINITY);
    assert!(dephasing_front(-1.0, 1.0, 0.5, 1.0).is_err());
}

#[test]
fn front_limit_just_past_microscopic_time() {
    // x/W0(x/c) → c as x → 0⁺, so r → 1 + e·h/F.
    for hf in [0.05, 0.2, 1.0] {
        let r = dephasing_front(1.0 + 1e-9, 1.0, hf, 1.0).unwrap().r;
        assert!((r - (1.0 + E * hf)).abs() < 1e-6, "h/F = {hf}: {r}");
    }
}

#[test]
fn front_is_monotone() {
    for hf in [0.05, 0.2, 1.0, 3.0] {
        let mut prev = 0.0;
        for k in 0..=600 {
            let t = 10f64.powf(k as f64 / 100.0);
            let r = dephasing_front(t, 1.0, hf, 1.0).unwrap().r;
            assert!(r >= prev);
            prev = r;
        }
    }
}

/// Root of `ln(tJ0) + n ln(h/F) - ln Γ(n+1) = 0` in `n = r - 1` by bisection.
fn front_root(tj0: f64, hf: f64) -> f64 {
    let g = |n: f64| tj0.ln() + n * hf.ln() - statrs::function::gamma::ln_gamma(n + 1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    1.0 + 0.5 * (lo + hi)
}

#[test]
fn front_tracks_factorial_root_at_strong_tilt() {
    for hf in [0.02, 0.05, 0.1, 0.15] {
        for k in 0..=60 {
            let tj0 = E * 10f64.powf(k as f64 * (6.0 - E.log10()) / 60.0);
            let r = dephasing_front(tj0, 1.0, hf, 1.0).unwrap().r;
            let root = front_root(tj0, hf);
            assert!((r - root).abs() <= 0.5, "h/F = {hf}, tJ0 = {tj0}: {r} vs {root}");
        }
    }
}

fn model() -> ClosureModel {
    ClosureModel { j0: 0.8, h: 1.0, f: 2.0, m_sat: 3.5, gamma: 0.25 }
}

#[test]
fn closure_examples() {
    let zero = ClosureModel { m_sat: 0.0, ..model() };
    assert_eq!(closure_eval(50.0, &zero).unwrap(), 0.0);
    let steep = ClosureModel { gamma: 1e3, ..model() };
    assert!((closure_eval(50.0, &steep).unwrap() - 3.5).abs() < 1e-12);
    let small = ClosureModel { gamma: 0.01, ..model() };
    let t = 20.0;
    let r = dephasing_front(t, 0.8, 1.0, 2.0).unwrap().r;
    assert!(0.01 * r < 0.1);
    let v = closure_eval(t, &small).unwrap();
    assert!((v - 3.5 * 0.01 * r).abs() / v < 0.01);
    for k in 0..100 {
        assert!(closure_eval(10f64.powf(k as f64 / 20.0), &model()).unwrap() <= 3.5);
    }
    assert!(closure_eval(1.0, &ClosureModel { gamma: 0.0, ..model() }).is_err());
}

fn log_times() -> Vec<f64> {
    (0..120).map(|k| 0.1 * 10f64.powf(4.0 * k as f64 / 119.0)).collect()
}

#[test]
fn fit_recovers_synthetic_parameters() {
    let truth = model();
    let times = log_times();
    let mut rng = SeededRng::new(17, 0);
    let data: Vec<f64> = times
        .iter()
        .map(|&t| {
            let v = closure_eval(t, &truth).unwrap();
            let noise: f64 = rng.sample(rand_distr::StandardNormal);
            v * (1.0 + 0.01 * noise)
        })
        .collect();
    let fit = fit_closure(&times, &data, truth.h, truth.f, SaturationMode::Free).unwrap();
    assert!(!fit.degenerate);
    let m = fit.model;
    for (got, want) in [(m.m_sat, truth.m_sat), (m.gamma, truth.gamma), (m.j0, truth.j0)] {
        assert!((got - want).abs() / want < 0.05, "{m:?}");
    }
    assert_eq!(fit.covariance.len(), 3);
    assert!(fit.covariance[0][0] > 0.0);
}

#[test]
fn fit_saturation_tracks_plateau() {
    let times = log_times();
    let data: Vec<f64> = times.iter().map(|&t| 2.0 * (1.0 - 1.0 / (1.0 + (t / 5.0).powf(0.7)))).collect();
    let fit = fit_closure(&times, &data, 1.0, 1.0, SaturationMode::Free).unwrap();
    let plateau = last_decade_mean(&times, &data).unwrap();
    assert!((fit.model.m_sat - plateau).abs() / plateau < 0.1, "{:?} vs {plateau}", fit.model);
    let fixed = fit_closure(&times, &data, 1.0, 1.0, SaturationMode::Plateau).unwrap();
    assert_eq!(fixed.model.m_sat, plateau);
    assert_eq!(fixed.covariance.len(), 2);
}

#[test]
fn flat_zero_trace_is_degenerate() {
    let times = log_times();
    let fit = fit_closure(&times, &vec![0.0; times.len()], 1.0, 5.0, SaturationMode::Free).unwrap();
    assert!(fit.degenerate);
    assert!(fit.model.m_sat.abs() < 1e-12);
}

#[test]
fn fit_needs_two_decades() {
    let times: Vec<f64> = (1..50).map(|k| k as f64 * 0.5).collect();
    let data = vec![1.0; times.len()];
    assert!(matches!(
        fit_closure(&times, &data, 1.0, 1.0, SaturationMode::Free),
        Err(Error::Domain(_))
    ));
}
