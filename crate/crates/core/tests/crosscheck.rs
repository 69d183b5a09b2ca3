//! Independent cross-checks of the numerical core.

use approx::assert_relative_eq;
use nalgebra::{Complex, Matrix4};
use proptest::prelude::*;
use qmoney_core::hmp::{answer_query, hmp_relation, hmp_state, Coloring, Query};
use qmoney_core::qsim::{measure, HermitianOp, ProjectiveBasis, StateVec, C64};
use qmoney_core::seed::derive_rng;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[allow(clippy::needless_range_loop)]
fn random_hermitian(rng: &mut impl Rng) -> [[C64; 4]; 4] {
    let mut m = [[C64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        m[i][i] = C64::new(rng.random_range(-2.0..2.0), 0.0);
        for j in i + 1..4 {
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            m[i][j] = z;
            m[j][i] = z.conj();
        }
    }
    m
}

#[test]
fn eigenvalues_match_nalgebra() {
    for i in 0..500 {
        let mut rng = derive_rng(7, "eigen", i);
        let m = random_hermitian(&mut rng);
        let ours = HermitianOp::new(m).unwrap().eigen();
        let theirs = Matrix4::from_fn(|r, c| Complex::new(m[r][c].re, m[r][c].im)).symmetric_eigen();
        let mut expected: Vec<f64> = theirs.eigenvalues.iter().copied().collect();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in ours.values.iter().zip(&expected) {
            assert_relative_eq!(*a, *b, epsilon = 1e-10);
        }
        // A v = λ v for our vectors
        let op = HermitianOp::new(m).unwrap();
        for (lambda, v) in ours.values.iter().zip(&ours.vectors) {
            let av = op.apply(v);
            for (x, y) in av.iter().zip(v.amplitudes()) {
                assert!((x - y * lambda).norm() < 1e-9);
            }
        }
    }
}

/// Pearson chi-square against the Born-rule probabilities; p-value must not be tiny.
#[test]
fn measurement_statistics_follow_born_rule() {
    let mut rng = derive_rng(3, "chi", 0);
    for case in 0..5 {
        let state = StateVec::random(&mut rng);
        let basis = ProjectiveBasis::random(&mut rng);
        let probs = basis.probabilities(&state);
        let n = 200_000;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            counts[measure(&state, &basis, &mut rng).0] += 1;
        }
        let (stat, dof) = probs.iter().zip(&counts).filter(|(p, _)| **p > 1e-9).fold((0.0, -1.0), |(s, d), (p, &c)| {
            let e = p * n as f64;
            (s + (c as f64 - e).powi(2) / e, d + 1.0)
        });
        let p_value = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
        assert!(p_value > 1e-4, "case {case}: chi2 {stat} dof {dof} p {p_value}");
    }
}

#[test]
fn honest_answers_are_always_valid_and_a_is_uniform() {
    let mut rng = derive_rng(4, "honest", 0);
    let mut ones = 0u32;
    let n = 100_000;
    for _ in 0..n {
        let x = Coloring::random(&mut rng);
        let m = Query(rng.random());
        let (ans, _) = answer_query(&hmp_state(x), m, &mut rng);
        assert!(hmp_relation(x, m, ans));
        ones += ans.a as u32;
    }
    let stat = (ones as f64 - n as f64 / 2.0).powi(2) / (n as f64 / 4.0);
    assert!(1.0 - ChiSquared::new(1.0).unwrap().cdf(stat) > 1e-4);
}

proptest! {
    #[test]
    fn coloring_text_roundtrip(idx in 0u8..16) {
        let x = Coloring::from_index(idx);
        prop_assert_eq!(x.to_string().parse::<Coloring>().unwrap(), x);
        prop_assert_eq!(Coloring::from_index(x.index()), x);
    }

    #[test]
    fn eigen_reconstructs_trace(seed in any::<u64>()) {
        let m = random_hermitian(&mut derive_rng(seed, "trace", 0));
        let op = HermitianOp::new(m).unwrap();
        let sum: f64 = op.eigen().values.iter().sum();
        prop_assert!((sum - op.trace()).abs() < 1e-10);
    }
}
