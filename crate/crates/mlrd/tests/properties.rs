//! Property tests for the algebraic invariants of the toolkit.

use mlrd::estimators::isserlis_fourth;
use mlrd::hermite::hermite_addition_check;
use mlrd::matalg::{diag_power, sym_inv_sqrt, upper_factor, DiagonalExponent, SquareMatrix};
use mlrd::model::{theoretical_gamma_upto, MemoryParameters, ProcessSpec, SlowlyVaryingSpec};
use mlrd::simulate::InnovationLaw;
use proptest::prelude::*;

fn spd_from_entries(dim: usize, entries: &[f64]) -> SquareMatrix {
    let mut b = SquareMatrix::zeros(dim);
    for i in 0..dim {
        for j in 0..dim {
            b.set(i, j, entries[i * dim + j]);
        }
    }
    let mut s = b.matmul(&b.transpose());
    for i in 0..dim {
        s.set(i, i, s.get(i, i) + dim as f64);
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diag_power_multiplicative(
        g in prop::collection::vec(-2.0f64..2.0, 1..5),
        a in 0.1f64..10.0,
        b in 0.1f64..10.0,
    ) {
        let g = DiagonalExponent::new(g).unwrap();
        let lhs = diag_power(&g, a).unwrap().matmul(&diag_power(&g, b).unwrap());
        let rhs = diag_power(&g, a * b).unwrap();
        let scale = rhs.max_abs().max(1.0);
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * scale);
    }

    #[test]
    fn upper_factor_reconstructs_spd(
        dim in 1usize..=6,
        raw in prop::collection::vec(-1.0f64..1.0, 36),
    ) {
        let s = spd_from_entries(dim, &raw);
        let a = upper_factor(&s).unwrap();
        prop_assert!(a.matmul(&a.transpose()).max_abs_diff(&s) <= 1e-10 * s.max_abs().max(1.0));
        for i in 0..dim {
            prop_assert!(a.get(i, i) > 0.0);
            for j in 0..i {
                prop_assert_eq!(a.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn sym_inv_sqrt_inverts_and_commutes(
        dim in 1usize..=5,
        raw in prop::collection::vec(-1.0f64..1.0, 25),
    ) {
        let s = spd_from_entries(dim, &raw);
        let m = sym_inv_sqrt(&s).unwrap();
        prop_assert!(m.max_abs_diff(&m.transpose()) <= 1e-12 * m.max_abs());
        let probe = m.matmul(&s).matmul(&m);
        prop_assert!(probe.max_abs_diff(&SquareMatrix::identity(dim)) <= 1e-10);
        let comm = m.matmul(&s).max_abs_diff(&s.matmul(&m));
        prop_assert!(comm <= 1e-9 * s.max_abs().max(1.0));
    }

    #[test]
    fn isserlis_relabeling_invariance(
        raw in prop::collection::vec(-1.0f64..1.0, 9),
        idx in prop::collection::vec(0usize..3, 4),
        perm in prop::sample::select(vec![
            vec![0usize, 1, 2], vec![0, 2, 1], vec![1, 0, 2],
            vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0],
        ]),
    ) {
        let s = spd_from_entries(3, &raw);
        let base = isserlis_fourth(&s, idx[0], idx[1], idx[2], idx[3]).unwrap();
        // simultaneous relabeling: permute both the indices and Sigma
        let mut sp = SquareMatrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                sp.set(perm[i], perm[j], s.get(i, j));
            }
        }
        let relabeled = isserlis_fourth(&sp, perm[idx[0]], perm[idx[1]], perm[idx[2]], perm[idx[3]]).unwrap();
        prop_assert!((base - relabeled).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn hermite_addition_identity_holds(
        tau in 1usize..=4,
        raw_a in prop::collection::vec(-1.0f64..1.0, 2..4),
        raw_x in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let norm: f64 = raw_a.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let a: Vec<f64> = raw_a.iter().map(|v| v / norm).collect();
        let x = &raw_x[..a.len()];
        let r = hermite_addition_check(tau, &a, x).unwrap();
        prop_assert!(r < 1e-9, "residual {}", r);
    }

    #[test]
    fn gamma_respects_cauchy_schwarz(
        d1 in 0.15f64..0.45,
        gap in 0.03f64..0.1,
        offd in -0.4f64..0.4,
    ) {
        prop_assume!(d1 - gap > 0.05);
        let memory = MemoryParameters::new(vec![d1, d1 - gap]).unwrap();
        let mut ap = SquareMatrix::identity(2);
        ap.set(0, 1, offd);
        let sv = SlowlyVaryingSpec::new(ap, SquareMatrix::identity(2)).unwrap();
        let spec = ProcessSpec::linear_lrd_unchecked(memory, sv, InnovationLaw::StandardNormal).unwrap();
        let gams = theoretical_gamma_upto(&spec, 32, 512).unwrap();
        let g0 = &gams[0];
        for g in &gams {
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!(
                        g.get(i, j).abs() <= (g0.get(i, i) * g0.get(j, j)).sqrt() + 1e-12
                    );
                }
            }
        }
    }
}

#[test]
fn ks_p_value_decreases_in_statistic() {
    let mut prev = 1.0;
    for k in 1..20 {
        let d = 0.01 * k as f64;
        let p = mlrd::stats::ks_p_value(d, 500);
        assert!(p <= prev + 1e-12);
        prev = p;
    }
}
