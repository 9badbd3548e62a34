use num_complex::Complex64;
use proptest::prelude::*;
use stark_magic::magic::{
    entanglement, half_chain_mask, haar_reference, moment_sums, pauli_moments, renyi_entanglement,
    sre, sre_many,
};
use stark_magic::state::gates;
use stark_magic::{Error, PauliString, SeededRng, StateVector};
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Brute force over all 4^L Hermitian Pauli strings.
fn brute_force_moments(psi: &StateVector) -> Vec<f64> {
    let d = psi.dim() as u64;
    let mut out = Vec::new();
    for a in 0..d {
        for b in 0..d {
            let e = psi.pauli_expectation(&PauliString::new(a, b)).unwrap();
            out.push(e * e);
        }
    }
    out
}

fn brute_force_sre(psi: &StateVector, alpha: f64) -> f64 {
    let m = brute_force_moments(psi);
    let d = psi.dim() as f64;
    if alpha == 1.0 {
        let h: f64 = m
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| -(x / d) * (x / d).log2())
            .sum();
        h - d.log2()
    } else {
        (m.iter().map(|x| x.powf(alpha)).sum::<f64>() / d).log2() / (1.0 - alpha)
    }
}

fn t_state() -> StateVector {
    StateVector::product(&[[c(FRAC_1_SQRT_2, 0.0), Complex64::from_polar(FRAC_1_SQRT_2, FRAC_PI_4)]])
        .unwrap()
}

fn random_clifford_circuit(psi: &mut StateVector, rng: &mut SeededRng, depth: usize) {
    use rand::Rng;
    let l = psi.n_qubits();
    for _ in 0..depth {
        for site in 0..l {
            let g = match rng.random_range(0..3) {
                0 => gates::hadamard(),
                1 => gates::phase_s(),
                _ => gates::identity(),
            };
            psi.apply_single_qubit_unitary_in_place(site, &g).unwrap();
        }
        if l > 1 {
            let a = rng.random_range(0..l);
            let b = (a + 1 + rng.random_range(0..l - 1)) % l;
            psi.apply_two_qubit_unitary_in_place(a, b, &gates::cnot()).unwrap();
        }
    }
}

#[test]
fn t_state_values() {
    // ⟨X⟩ = ⟨Y⟩ = 1/√2, ⟨Z⟩ = 0 → moments {1, 1/2, 1/2, 0}
    let t = t_state();
    let m2 = sre(&t, 2.0).unwrap();
    assert!((m2 - (4.0f64 / 3.0).log2()).abs() < 1e-12);
    assert!((sre(&t, 1.0).unwrap() - 0.5).abs() < 1e-12);
    for alpha in [0.5, 3.0, 4.0] {
        let want = ((1.0 + 2.0 * 0.5f64.powf(alpha)) / 2.0).log2() / (1.0 - alpha);
        assert!((sre(&t, alpha).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn stabilizer_states_have_zero_magic() {
    let zero = StateVector::zero_state(3).unwrap();
    let plus = StateVector::product(&vec![[c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)]; 4]).unwrap();
    let mut ghz = vec![c(0.0, 0.0); 16];
    ghz[0] = c(FRAC_1_SQRT_2, 0.0);
    ghz[15] = c(FRAC_1_SQRT_2, 0.0);
    let ghz = StateVector::from_amplitudes(ghz).unwrap();
    for psi in [&zero, &plus, &ghz] {
        for v in sre_many(psi, &[0.5, 1.0, 2.0, 3.0]).unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }
}

#[test]
fn moments_match_brute_force() {
    let mut rng = SeededRng::new(4, 0);
    for l in 1..=4 {
        let psi = StateVector::haar_random(l, &mut rng).unwrap();
        let fast = pauli_moments(&psi).unwrap();
        let slow = brute_force_moments(&psi);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((fast.iter().sum::<f64>() - psi.dim() as f64).abs() < 1e-10);
        for alpha in [0.5, 1.0, 2.0, 3.0] {
            assert!((sre(&psi, alpha).unwrap() - brute_force_sre(&psi, alpha)).abs() < 1e-10);
        }
    }
}

#[test]
fn streamed_sums_match_table() {
    let mut rng = SeededRng::new(8, 0);
    let psi = StateVector::haar_random(7, &mut rng).unwrap();
    let table = pauli_moments(&psi).unwrap();
    let sums = moment_sums(&psi, &[2.0]).unwrap();
    let direct: f64 = table.iter().map(|m| m * m).sum();
    assert!((sums.sums[0] - direct).abs() < 1e-9 * direct);
    assert!((sums.total - 128.0).abs() < 1e-9);
}

#[test]
fn non_positive_order_is_domain_error() {
    let psi = StateVector::zero_state(2).unwrap();
    for alpha in [0.0, -1.0, f64::NAN] {
        assert!(matches!(sre(&psi, alpha), Err(Error::Domain(_))));
    }
}

#[test]
fn unnormalized_state_rejected() {
    let psi = StateVector::from_amplitudes(vec![c(1.0, 0.0); 4]).unwrap();
    assert!(matches!(sre(&psi, 2.0), Err(Error::Contract(_))));
}

#[test]
fn result_independent_of_thread_count() {
    let mut rng = SeededRng::new(12, 0);
    let psi = StateVector::haar_random(9, &mut rng).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sre(&psi, 2.0).unwrap())
    };
    assert_eq!(run(1).to_bits(), run(4).to_bits());
}

#[test]
fn haar_average_approaches_reference() {
    // E_Haar Σ_P ⟨P⟩⁴ = 4D/(D+3) for D = 2^L.
    let l = 6;
    let d = 64.0;
    let mut rng = SeededRng::new(21, 0);
    let n = 300;
    let mut acc = 0.0;
    let mut m2s = Vec::new();
    for _ in 0..n {
        let psi = StateVector::haar_random(l, &mut rng).unwrap();
        let s = moment_sums(&psi, &[2.0]).unwrap();
        acc += s.sums[0];
        m2s.push(s.sre(2.0).unwrap());
    }
    let mean_sum = acc / n as f64;
    assert!((mean_sum - 4.0 * d / (d + 3.0)).abs() / (4.0 * d / (d + 3.0)) < 0.02);
    let from_mean = -(mean_sum / d).log2();
    assert!((from_mean - haar_reference(l)).abs() < 0.03);
    let mean_m2 = m2s.iter().sum::<f64>() / n as f64;
    assert!((mean_m2 - haar_reference(l)).abs() < 0.05);
    assert!((haar_reference(6) - (67.0f64).log2() + 2.0).abs() < 1e-15);
}

#[test]
fn bell_pair_and_product_entanglement() {
    let bell = StateVector::from_amplitudes(vec![
        c(FRAC_1_SQRT_2, 0.0),
        c(0.0, 0.0),
        c(0.0, 0.0),
        c(FRAC_1_SQRT_2, 0.0),
    ])
    .unwrap();
    let e = entanglement(&bell, 0b01).unwrap();
    assert!((e.s1 - 1.0).abs() < 1e-12 && (e.s2 - 1.0).abs() < 1e-12);
    assert!(!e.trivial_cut);
    let prod = StateVector::zero_state(4).unwrap();
    let e = entanglement(&prod, half_chain_mask(4)).unwrap();
    assert!(e.s1.abs() < 1e-12 && e.s2.abs() < 1e-12);
}

#[test]
fn trivial_cuts_are_flagged() {
    let mut rng = SeededRng::new(1, 0);
    let psi = StateVector::haar_random(4, &mut rng).unwrap();
    for region in [0u64, 0b1111] {
        let e = entanglement(&psi, region).unwrap();
        assert!(e.trivial_cut);
        assert_eq!(e.s1, 0.0);
        assert_eq!(e.s2, 0.0);
    }
    assert!(matches!(entanglement(&psi, 0b10000), Err(Error::Dimension(_))));
}

/// Partial trace with explicit index loops.
fn reduced_purity_oracle(psi: &StateVector, region: u64) -> f64 {
    let d = psi.dim();
    let a = psi.amplitudes();
    let rmask = region as usize;
    let mut purity = 0.0;
    for s in 0..d {
        for t in 0..d {
            // ρ_A[s_A, t_A] = Σ_{b} ψ(s_A, b) ψ*(t_A, b); purity = Σ |ρ_A|²
            if s & !rmask != 0 || t & !rmask != 0 {
                continue;
            }
            let mut rho = c(0.0, 0.0);
            for b in 0..d {
                if b & rmask != 0 {
                    continue;
                }
                rho += a[s | b] * a[t | b].conj();
            }
            purity += rho.norm_sqr();
        }
    }
    purity
}

#[test]
fn renyi2_matches_partial_trace_oracle() {
    let mut rng = SeededRng::new(6, 0);
    let psi = StateVector::haar_random(5, &mut rng).unwrap();
    for region in [0b00001u64, 0b00110, 0b10101, 0b01111] {
        let s2 = renyi_entanglement(&psi, region, 2.0).unwrap();
        assert!((s2 + reduced_purity_oracle(&psi, region).log2()).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn clifford_circuits_preserve_zero_magic(seed in 0u64..10_000, l in 1usize..6) {
        let mut rng = SeededRng::new(seed, 0);
        let mut psi = StateVector::zero_state(l).unwrap();
        random_clifford_circuit(&mut psi, &mut rng, 6);
        for v in sre_many(&psi, &[1.0, 2.0, 3.0]).unwrap() {
            prop_assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn clifford_invariance(seed in 0u64..10_000, l in 1usize..6) {
        let mut rng = SeededRng::new(seed, 0);
        let psi = StateVector::haar_random(l, &mut rng).unwrap();
        let mut moved = psi.clone();
        random_clifford_circuit(&mut moved, &mut rng, 5);
        for alpha in [1.0, 2.0] {
            prop_assert!((sre(&psi, alpha).unwrap() - sre(&moved, alpha).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn additive_under_tensor_products(seed in 0u64..10_000, la in 1usize..4, lb in 1usize..4) {
        let mut rng = SeededRng::new(seed, 0);
        let a = StateVector::haar_random(la, &mut rng).unwrap();
        let b = StateVector::haar_random(lb, &mut rng).unwrap();
        let ab = a.tensor_product(&b, 8).unwrap();
        for alpha in [1.0, 2.0, 3.0] {
            let lhs = sre(&ab, alpha).unwrap();
            let rhs = sre(&a, alpha).unwrap() + sre(&b, alpha).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn magic_is_bounded(seed in 0u64..10_000, l in 1usize..7) {
        let mut rng = SeededRng::new(seed, 0);
        let psi = StateVector::haar_random(l, &mut rng).unwrap();
        let d = psi.dim() as f64;
        let m2 = sre(&psi, 2.0).unwrap();
        prop_assert!(m2 >= -1e-12);
        prop_assert!(m2 <= (d + 1.0).log2() - 1.0 + 1e-12);
    }

    #[test]
    fn entanglement_symmetric_under_complement(seed in 0u64..10_000, l in 2usize..7, region in 1u64..63) {
        let mut rng = SeededRng::new(seed, 0);
        let psi = StateVector::haar_random(l, &mut rng).unwrap();
        let full = (1u64 << l) - 1;
        let region = region & full;
        let a = entanglement(&psi, region).unwrap();
        let b = entanglement(&psi, !region & full).unwrap();
        prop_assert!((a.s1 - b.s1).abs() < 1e-9);
        prop_assert!((a.s2 - b.s2).abs() < 1e-9);
        let n_a = region.count_ones().min(l as u32 - region.count_ones()) as f64;
        prop_assert!(a.s2 <= a.s1 + 1e-9 && a.s1 <= n_a + 1e-9);
    }
}
