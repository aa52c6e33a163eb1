use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsqkd_core::attacks::{analytic_guess_bound, lhv_box, optimal_ns_attack, GuessParty};
use nsqkd_core::bell::t_exact;
use nsqkd_core::boxes::{ab_marginal, DeterministicLocalBox, NS_TOL};
use nsqkd_core::quantum::{depolarized, singlet_box};

fn p_guess(target: &nsqkd_core::boxes::BipartiteBox, ne: usize, s: (usize, usize)) -> f64 {
    optimal_ns_attack(target, ne, s, GuessParty::Alice).unwrap().bound.p_guess_lp
}

#[test]
fn optimal_box_is_valid_extension() {
    for n in 3..=5 {
        let target = singlet_box(n).unwrap();
        for ne in [2, 3] {
            let attack = optimal_ns_attack(&target, ne, (1, 2), GuessParty::Alice).unwrap();
            assert!(attack.tripartite.validate_ns(NS_TOL).is_empty());
            let ab = ab_marginal(&attack.tripartite);
            for (u, v) in ab.probs().iter().zip(target.probs()) {
                assert!((u - v).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn optimum_independent_of_eve_alphabet() {
    for n in [3, 4] {
        let target = singlet_box(n).unwrap();
        let base = p_guess(&target, 2, (0, 1));
        for ne in [3, 4] {
            assert!((p_guess(&target, ne, (0, 1)) - base).abs() < 1e-7, "N={n} ne={ne}");
        }
    }
}

#[test]
fn singlet_optimum_is_translation_invariant() {
    let n = 5;
    let target = singlet_box(n).unwrap();
    let base = p_guess(&target, 2, (0, 1));
    for k in 1..n {
        let s = (k, (k + 1) % n);
        assert!((p_guess(&target, 2, s) - base).abs() < 1e-7, "settings {s:?}");
    }
    let diag = p_guess(&target, 2, (0, 0));
    for k in 1..n {
        assert!((p_guess(&target, 2, (k, k)) - diag).abs() < 1e-7);
    }
}

#[test]
fn random_lhv_targets_are_fully_exposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..15 {
        let n = rng.random_range(2..=4);
        let k = rng.random_range(1..=4);
        let comps: Vec<_> = (0..k)
            .map(|_| {
                let a = (0..n).map(|_| rng.random_range(0..2u8)).collect();
                let b = (0..n).map(|_| rng.random_range(0..2u8)).collect();
                DeterministicLocalBox::new(a, b).unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / total).collect();
        let target = lhv_box(&comps, &w).unwrap();
        assert!((p_guess(&target, 2, (0, 1)) - 1.0).abs() < 1e-7);
    }
}

#[test]
fn noisy_singlets_respect_analytic_bound() {
    for n in [4, 6] {
        for v in [0.8, 0.9, 0.95, 0.99] {
            let target = depolarized(&singlet_box(n).unwrap(), v).unwrap();
            let t = t_exact(&target).unwrap().value;
            let p = p_guess(&target, 2, (0, 1));
            assert!(p <= analytic_guess_bound(n, t) + 1e-6, "N={n} v={v}: {p}");
            // More noise never helps the honest parties.
            assert!(p >= p_guess(&singlet_box(n).unwrap(), 2, (0, 1)) - 1e-7);
        }
    }
}
