use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsqkd_core::bell::{t_empirical, t_exact};
use nsqkd_core::boxes::{ab_marginal, mix, AnyBox, BipartiteBox, DeterministicLocalBox, TripartiteBox, NS_TOL};
use nsqkd_core::lp::{solve, LpProblem, LpStatus};
use nsqkd_core::protocol::{run_at, ProtocolParams};
use nsqkd_core::quantum::{singlet_anticorr_prob, singlet_box, BasisIndex};

fn det_box(n: usize) -> impl Strategy<Value = DeterministicLocalBox> {
    (prop::collection::vec(0u8..2, n), prop::collection::vec(0u8..2, n))
        .prop_map(|(a, b)| DeterministicLocalBox::new(a, b).unwrap())
}

fn weights(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn local_mixture(n: usize) -> impl Strategy<Value = BipartiteBox> {
    (prop::collection::vec(det_box(n), 1..5), weights(4)).prop_map(move |(ds, w)| {
        let k = ds.len();
        let s: f64 = w[..k].iter().sum();
        let w: Vec<f64> = w[..k].iter().map(|v| v / s).collect();
        let boxes: Vec<_> = ds.iter().map(DeterministicLocalBox::to_box).collect();
        mix(&boxes, &w).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixtures_stay_no_signalling(b in local_mixture(3), w in 0.0f64..=1.0) {
        let s = singlet_box(3).unwrap();
        let m = mix(&[b, s], &[w, 1.0 - w]).unwrap();
        prop_assert!(m.validate_ns(NS_TOL).is_empty());
        let t = t_exact(&m).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn statistic_is_affine(b1 in local_mixture(4), b2 in local_mixture(4), w in 0.0f64..=1.0) {
        let m = mix(&[b1.clone(), b2.clone()], &[w, 1.0 - w]).unwrap();
        let lhs = t_exact(&m).unwrap().value;
        let rhs = w * t_exact(&b1).unwrap().value + (1.0 - w) * t_exact(&b2).unwrap().value;
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn marginal_commutes_with_mixing(d1 in det_box(3), r1 in weights(3), r2 in weights(3), w in 0.0f64..=1.0) {
        let t1 = TripartiteBox::product(&d1.to_box(), &r1).unwrap();
        let t2 = TripartiteBox::product(&singlet_box(3).unwrap(), &r2).unwrap();
        let mixed = TripartiteBox::mix(&[t1.clone(), t2.clone()], &[w, 1.0 - w]).unwrap();
        prop_assert!(mixed.validate_ns(NS_TOL).is_empty());
        let lhs = ab_marginal(&mixed);
        let rhs = mix(&[ab_marginal(&t1), ab_marginal(&t2)], &[w, 1.0 - w]).unwrap();
        for (u, v) in lhs.probs().iter().zip(rhs.probs()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singlet_probability_symmetries(ra in -40i64..40, rb in -40i64..40, n in 2usize..9) {
        let p = singlet_anticorr_prob(BasisIndex(ra), BasisIndex(rb), n);
        prop_assert_eq!(p, singlet_anticorr_prob(BasisIndex(rb), BasisIndex(ra), n));
        let shifted = singlet_anticorr_prob(BasisIndex(ra + n as i64), BasisIndex(rb), n);
        prop_assert!((p + shifted - 1.0).abs() < 1e-12);
        let both = singlet_anticorr_prob(BasisIndex(ra + 2 * n as i64), BasisIndex(rb - 2 * n as i64), n);
        prop_assert!((p - both).abs() < 1e-12);
    }

    #[test]
    fn box_files_round_trip_exactly(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 16)) {
        let vals: Vec<f64> = vals.into_iter().map(f64::abs).collect();
        let b = AnyBox::from(BipartiteBox::new(2, 2, vals).unwrap());
        let back = AnyBox::from_json(&b.to_json()).unwrap();
        prop_assert_eq!(back, b);
    }

    #[test]
    fn lp_weak_duality_and_optimality(seed in any::<u64>(), rows in 1usize..6, cols in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..cols).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut p = LpProblem::new(cols);
        p.set_objective((0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        p.add_eq(vec![1.0; cols], x0.iter().sum()).unwrap();
        for _ in 0..rows {
            let a: Vec<f64> = (0..cols).map(|_| rng.random_range(-2i32..3) as f64).collect();
            let b = a.iter().zip(&x0).map(|(u, v)| u * v).sum();
            p.add_eq(a, b).unwrap();
        }
        let s = solve(&p);
        prop_assert_eq!(s.status, LpStatus::Optimal, "{}", s.message);
        let at_x0: f64 = p.objective().iter().zip(&x0).map(|(c, v)| c * v).sum();
        prop_assert!(s.objective_value >= at_x0 - 1e-9);
        let dual_obj: f64 = p.eq_constraints().iter().zip(&s.dual).map(|(r, y)| r.rhs * y).sum();
        prop_assert!(s.objective_value <= dual_obj + 1e-7);
        prop_assert!(s.duality_gap.abs() <= 1e-7);
        prop_assert_eq!(solve(&p), s);
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), run in 0u64..1000) {
        let p = ProtocolParams::new(4, 1, seed).unwrap();
        let s = singlet_box(4).unwrap();
        prop_assert_eq!(run_at(&p, &s, run).unwrap(), run_at(&p, &s, run).unwrap());
    }

    #[test]
    fn empirical_statistic_in_unit_interval(recs in prop::collection::vec((0usize..5, 0usize..5, 0usize..2, 0usize..2), 1..50)) {
        if let Ok(t) = t_empirical(5, recs) {
            prop_assert!((0.0..=1.0).contains(&t.value));
            prop_assert!(t.sample_count >= 1);
        }
    }
}
