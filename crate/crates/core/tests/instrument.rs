mod common;

use common::*;
use nmsim::instrument::{
    apply_exact, apply_exact_embedded, dilate, dilate_with, hptp_split, is_hptp, sample_outcome, trials_needed,
    wilson, Completion, CpMap, Outcome, HPTP_TOL,
};
use nmsim::liouvillian::Lattice;
use nmsim::tensor::{basis_op, identity, kron, zeros, ComplexMatrix, SuperOperator};
use proptest::prelude::*;

fn choi_min(s: &SuperOperator) -> f64 {
    jacobi_eigenvalues(&s.to_choi().matrix)[0]
}

/// Joint evolution and projection written out with explicit Kronecker products.
fn dilation_oracle(u: &ComplexMatrix, ancilla: usize, rho: &ComplexMatrix) -> ComplexMatrix {
    let d = rho.nrows();
    let joint = u * kron(&basis_op(ancilla, 0, 0), rho) * u.adjoint();
    let mut keep = zeros(ancilla, ancilla);
    for a in 0..ancilla - 1 {
        keep[(a, a)] = nmsim::tensor::c(1.0, 0.0);
    }
    let p = kron(&keep, &identity(d));
    partial_trace_loop(&(&p * joint * &p), &[ancilla, d], &[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_reconstructs_with_cp_parts(seed in any::<u64>(), d in 1usize..5, p in 0.0f64..2.0) {
        let map = random_hptp(d, p, &mut rng(seed));
        prop_assert!(is_hptp(&map, HPTP_TOL));
        let split = hptp_split(&map).unwrap();
        prop_assert!(max_diff(split.reconstruct().transfer(), map.transfer()) < 1e-10);
        for part in [&split.positive, &split.negative] {
            if !part.is_empty() {
                prop_assert!(choi_min(&part.to_superoperator()) > -1e-10);
            }
        }
    }

    #[test]
    fn channels_split_without_negative_part(seed in any::<u64>(), d in 1usize..4) {
        let split = hptp_split(&random_channel(d, &mut rng(seed))).unwrap();
        prop_assert!(split.negative.is_empty());
    }

    #[test]
    fn dilation_is_unitary_and_reproduces_the_map(seed in any::<u64>(), d in 1usize..4, scale in 0.2f64..3.0) {
        let mut r = rng(seed);
        let kraus: Vec<ComplexMatrix> = random_channel_kraus(d, 2, &mut r).into_iter().map(|k| k.scale(scale.sqrt())).collect();
        let map = CpMap::new(d, kraus.clone()).unwrap();
        let instr = dilate(&map).unwrap();
        let u = instr.unitary();
        prop_assert!(max_diff(&(u.adjoint() * u), &identity(u.nrows())) < 1e-10);
        let rho = random_density(d, &mut r);
        let out = apply_exact(&instr, &rho).unwrap();
        let want = kraus_apply(&kraus, &rho);
        prop_assert!(max_diff(&out.scaled_output, &want) < 1e-10);
        let kept = dilation_oracle(u, instr.ancilla_dim(), &rho);
        prop_assert!((out.p1 - kept.trace().re).abs() < 1e-10);
        prop_assert!(max_diff(&kept.scale(instr.gauge_scalar()), &want) < 1e-10);
        if scale > 1.0 + 1e-9 {
            prop_assert!((instr.gauge_scalar() - scale).abs() < 1e-9);
        } else {
            prop_assert_eq!(instr.gauge_scalar(), 1.0);
        }
    }

    #[test]
    fn completion_order_does_not_change_outcomes(seed in any::<u64>(), d in 1usize..4) {
        let mut r = rng(seed);
        let map = CpMap::new(d, random_channel_kraus(d, 2, &mut r).into_iter().map(|k| k.scale(0.8)).collect()).unwrap();
        let rho = random_density(d, &mut r);
        let a = apply_exact(&dilate_with(&map, Completion::Canonical).unwrap(), &rho).unwrap();
        let b = apply_exact(&dilate_with(&map, Completion::Reversed).unwrap(), &rho).unwrap();
        prop_assert!((a.p1 - b.p1).abs() < 1e-12);
        prop_assert!(max_diff(&a.scaled_output, &b.scaled_output) < 1e-12);
    }

    #[test]
    fn embedded_instrument_matches_embedded_kraus(seed in any::<u64>(), site in 0usize..3) {
        let mut r = rng(seed);
        let kraus: Vec<ComplexMatrix> = random_channel_kraus(2, 2, &mut r).into_iter().map(|k| k.scale(1.3)).collect();
        let instr = dilate(&CpMap::new(2, kraus.clone()).unwrap()).unwrap();
        let lattice = Lattice::new(3, 2).unwrap();
        let rho = random_density(8, &mut r);
        let out = apply_exact_embedded(&instr, &rho, &[site], &lattice).unwrap();
        let big: Vec<ComplexMatrix> = kraus.iter().map(|k| embed_op_loop(k, &[site], 3, 2)).collect();
        prop_assert!(max_diff(&out.scaled_output, &kraus_apply(&big, &rho)) < 1e-10);
    }

    #[test]
    fn wilson_matches_textbook_formula(n in 1u64..100_000, frac in 0.0f64..=1.0, z in 0.5f64..5.0) {
        let k = ((n as f64) * frac).floor() as u64;
        let w = wilson(k, n, z).unwrap();
        let (nf, p) = (n as f64, k as f64 / n as f64);
        let centre = (p + z * z / (2.0 * nf)) / (1.0 + z * z / nf);
        let half = z / (1.0 + z * z / nf) * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt();
        prop_assert!((w.estimate - centre).abs() < 1e-14);
        prop_assert!((w.half_width - half).abs() < 1e-14);
        prop_assert!(w.lower() <= p + 1e-15 && p <= w.upper() + 1e-15);
    }

    #[test]
    fn trials_needed_is_minimal(eps in 0.005f64..0.2, z in 1.0f64..5.0) {
        let n = trials_needed(eps, z).unwrap();
        let target = z * z / (4.0 * eps * eps);
        let holds = |n: u64| (n as f64).powi(2) / (n as f64 + z * z) >= target;
        prop_assert!(holds(n));
        prop_assert!(n == 1 || !holds(n - 1));
        // any outcome at that count gives half-width within eps
        for k in [0, n / 3, n / 2, n] {
            prop_assert!(wilson(k, n, z).unwrap().half_width <= eps * (1.0 + 1e-12));
        }
    }
}

#[test]
fn sampled_outcomes_follow_keep_probability() {
    let mut r = rng(40);
    let map = CpMap::new(2, vec![basis_op(2, 0, 0)]).unwrap();
    let instr = dilate(&map).unwrap();
    let rho = random_density(2, &mut r);
    let p1 = apply_exact(&instr, &rho).unwrap().p1;
    assert!((p1 - rho[(0, 0)].re).abs() < 1e-12);
    let shots = 20_000;
    let mut kept = 0;
    for _ in 0..shots {
        let (outcome, post) = sample_outcome(&instr, &rho, &mut r).unwrap();
        if outcome == Outcome::Keep {
            kept += 1;
            let post = post.unwrap();
            assert!((post[(0, 0)].re - 1.0).abs() < 1e-12);
        }
    }
    let freq = kept as f64 / shots as f64;
    assert!((freq - p1).abs() < 5.0 * (p1 * (1.0 - p1) / shots as f64).sqrt() + 1e-3);
}

#[test]
fn non_hptp_maps_are_refused() {
    let mut r = rng(41);
    let bad = random_channel(2, &mut r).scale(0.7);
    assert!(hptp_split(&bad).is_err());
    assert!(wilson(3, 2, 1.0).is_err());
    assert!(trials_needed(0.0, 4.42).is_err());
}
