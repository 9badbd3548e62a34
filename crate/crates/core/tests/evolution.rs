use num_complex::Complex64;
use proptest::prelude::*;
use stark_magic::evolution::{
    digital_evolve, eigen_evolve, evolve, exact_evolve, strang_step, KrylovConfig, Propagator,
    StrangStepSpec, TimeGrid,
};
use stark_magic::hamiltonian::build_hamiltonian;
use stark_magic::{ChainSpec, Error, SeededRng, StateVector};

fn ham(l: usize, j: f64, h: f64, f: f64) -> stark_magic::SparseHamiltonian {
    build_hamiltonian(&ChainSpec::new(l, j, h, f).into(), 14).unwrap()
}

/// Decoupled sites: each evolves under `hX + F i Z` independently.
fn decoupled_oracle(l: usize, h: f64, f: f64, t: f64) -> StateVector {
    let sites: Vec<[Complex64; 2]> = (0..l)
        .map(|i| {
            let b = f * i as f64;
            let w = (h * h + b * b).sqrt();
            let (c, s) = ((w * t).cos(), (w * t).sin());
            let i_ = Complex64::new(0.0, 1.0);
            if w == 0.0 {
                return [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
            }
            // exp(-i t (hX + bZ)) |0⟩ = (cos - i sin b/w)|0⟩ - i sin h/w |1⟩
            [c - i_ * s * b / w, -i_ * s * h / w]
        })
        .collect();
    StateVector::product(&sites).unwrap()
}

#[test]
fn rabi_oscillation_matches_closed_form() {
    let hm = ham(3, 0.0, 0.8, 0.0);
    let psi0 = StateVector::zero_state(3).unwrap();
    let grid = TimeGrid::linear(10.0, 41).unwrap();
    for states in [
        exact_evolve(&hm, &psi0, &grid, &KrylovConfig::default()).unwrap(),
        eigen_evolve(&hm, &psi0, &grid).unwrap(),
    ] {
        for (psi, &t) in states.iter().zip(grid.times()) {
            let want = decoupled_oracle(3, 0.8, 0.0, t);
            assert!(psi.fidelity(&want).unwrap() > 1.0 - 1e-10, "t = {t}");
        }
    }
}

#[test]
fn decoupled_tilted_sites_match_closed_form_to_late_times() {
    let (l, h, f) = (5, 0.7, 0.45);
    let hm = ham(l, 0.0, h, f);
    let psi0 = StateVector::zero_state(l).unwrap();
    let grid = TimeGrid::log(0.1, 1e3, 30, true).unwrap();
    let kry = exact_evolve(&hm, &psi0, &grid, &KrylovConfig::default()).unwrap();
    let eig = eigen_evolve(&hm, &psi0, &grid).unwrap();
    for ((a, b), &t) in kry.iter().zip(&eig).zip(grid.times()) {
        let want = decoupled_oracle(l, h, f, t);
        // amplitudes, not just fidelity: the phase convention must agree too
        for (x, y) in a.amplitudes().iter().zip(want.amplitudes()) {
            assert!((x - y).norm() < 1e-7, "krylov t = {t}");
        }
        for (x, y) in b.amplitudes().iter().zip(want.amplitudes()) {
            assert!((x - y).norm() < 1e-8, "eigen t = {t}");
        }
    }
}

#[test]
fn krylov_agrees_with_diagonalization_on_interacting_chain() {
    let hm = ham(8, 1.0, 1.0, 0.6);
    let mut rng = SeededRng::new(3, 0);
    let psi0 = StateVector::haar_random(8, &mut rng).unwrap();
    let grid = TimeGrid::log(0.1, 1e3, 25, true).unwrap();
    let kry = exact_evolve(&hm, &psi0, &grid, &KrylovConfig::default()).unwrap();
    let eig = eigen_evolve(&hm, &psi0, &grid).unwrap();
    for ((a, b), t) in kry.iter().zip(&eig).zip(grid.times()) {
        let infidelity = 1.0 - a.fidelity(b).unwrap();
        assert!(infidelity < 1e-8, "t = {t}: {infidelity:e}");
    }
}

#[test]
fn energy_is_conserved() {
    let hm = ham(9, 1.0, 0.9, 1.3);
    let psi0 = StateVector::product(&vec![
        [
            Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2)
        ];
        9
    ])
    .unwrap();
    let e0 = hm.energy(&psi0).unwrap();
    let grid = TimeGrid::log(1.0, 500.0, 8, false).unwrap();
    for p in [Propagator::Krylov, Propagator::Eigen] {
        let states = evolve(&hm, &psi0, &grid, p, &KrylovConfig::default()).unwrap();
        for s in &states {
            assert!((hm.energy(s).unwrap() - e0).abs() < 1e-8);
        }
    }
}

#[test]
fn krylov_reports_convergence_failure() {
    let hm = ham(6, 1.0, 1.0, 1.0);
    let psi0 = StateVector::zero_state(6).unwrap();
    let grid = TimeGrid::linear(1.0, 3).unwrap();
    let cfg = KrylovConfig { dimension: 2, tolerance: 1e-300 };
    assert!(matches!(
        exact_evolve(&hm, &psi0, &grid, &cfg),
        Err(Error::Convergence { .. })
    ));
}

#[test]
fn unnormalized_or_mismatched_input_rejected() {
    let hm = ham(3, 1.0, 1.0, 1.0);
    let grid = TimeGrid::linear(1.0, 3).unwrap();
    let bad = StateVector::from_amplitudes(vec![Complex64::new(0.5, 0.0); 8]).unwrap();
    assert!(matches!(
        exact_evolve(&hm, &bad, &grid, &KrylovConfig::default()),
        Err(Error::Contract(_))
    ));
    let wrong = StateVector::zero_state(4).unwrap();
    assert!(matches!(eigen_evolve(&hm, &wrong, &grid), Err(Error::Dimension(_))));
}

#[test]
fn grid_validation() {
    assert!(TimeGrid::from_times(vec![0.0, 1.0, 1.0]).is_err());
    assert!(TimeGrid::from_times(vec![-1.0, 1.0]).is_err());
    assert!(TimeGrid::log(0.0, 1.0, 10, false).is_err());
    let g = TimeGrid::default();
    assert_eq!(g.len(), 121);
    assert_eq!(g.times()[0], 0.0);
    assert_eq!(g.times()[1], 0.1);
    assert_eq!(g.t_max(), 1e3);
}

#[test]
fn strang_angles() {
    assert_eq!(StrangStepSpec::rx_angle(1.0, 0.05), 0.1);
    assert!((StrangStepSpec::tilt_phase(0.5, 3, 0.05) - 0.15).abs() < 1e-15);
}

fn trotter_error(l: usize, dt: f64, t: f64) -> f64 {
    let hm = ham(l, 1.0, 0.9, 0.4);
    let mut rng = SeededRng::new(11, 0);
    let psi0 = StateVector::haar_random(l, &mut rng).unwrap();
    let grid = TimeGrid::from_times(vec![t]).unwrap();
    let exact = eigen_evolve(&hm, &psi0, &grid).unwrap();
    let dig = digital_evolve(&hm, &psi0, &grid, dt).unwrap();
    let overlap = exact[0].inner(&dig[0]).unwrap();
    // distance up to a global phase
    (2.0 * (1.0 - overlap.norm())).max(0.0).sqrt()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

#[test]
fn strang_global_error_is_second_order() {
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = dts.iter().map(|&dt| trotter_error(6, dt, 2.0)).collect();
    let s = slope(&dts, &errs);
    assert!((s - 2.0).abs() < 0.15, "slope {s}, errors {errs:?}");
}

#[test]
fn strang_single_step_error_is_third_order() {
    let dts = [0.08, 0.04, 0.02, 0.01];
    let errs: Vec<f64> = dts.iter().map(|&dt| trotter_error(6, dt, dt)).collect();
    let s = slope(&dts, &errs);
    assert!((s - 3.0).abs() < 0.15, "slope {s}, errors {errs:?}");
}

#[test]
fn digital_grid_must_align() {
    let hm = ham(3, 1.0, 1.0, 1.0);
    let psi0 = StateVector::zero_state(3).unwrap();
    let grid = TimeGrid::from_times(vec![0.0, 0.1, 0.25]).unwrap();
    assert!(matches!(
        digital_evolve(&hm, &psi0, &grid, 0.1),
        Err(Error::Alignment(_))
    ));
}

#[test]
fn strang_step_is_exact_without_field() {
    // With h = 0 the circuit is the exact diagonal propagator.
    let hm = ham(4, 0.7, 0.0, 0.3);
    let mut rng = SeededRng::new(2, 0);
    let psi0 = StateVector::haar_random(4, &mut rng).unwrap();
    let mut psi = psi0.clone();
    strang_step(&hm, &mut psi, 0.37).unwrap();
    for ((a, b), e) in psi.amplitudes().iter().zip(psi0.amplitudes()).zip(hm.diagonal()) {
        assert!((a - b * Complex64::from_polar(1.0, -e * 0.37)).norm() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_preserves_norm(
        l in 2usize..6,
        j in -1.5f64..1.5,
        h in 0.0f64..1.5,
        f in 0.0f64..2.0,
        seed in 0u64..1000,
        t in 0.0f64..50.0,
    ) {
        let hm = ham(l, j, h, f);
        let mut rng = SeededRng::new(seed, 0);
        let psi0 = StateVector::haar_random(l, &mut rng).unwrap();
        let grid = TimeGrid::from_times(vec![t]).unwrap();
        let a = exact_evolve(&hm, &psi0, &grid, &KrylovConfig::default()).unwrap();
        let b = eigen_evolve(&hm, &psi0, &grid).unwrap();
        prop_assert!((a[0].norm() - 1.0).abs() < 1e-9);
        prop_assert!(a[0].fidelity(&b[0]).unwrap() > 1.0 - 1e-8);
    }
}
