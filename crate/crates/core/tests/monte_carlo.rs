//! Statistical checks of the protocol simulation against exact values.

use nsqkd_core::bell::{local_bound, quantum_value, t_empirical};
use nsqkd_core::boxes::deterministic_box;
use nsqkd_core::protocol::{monte_carlo, run_at, EventClass, ProtocolParams, Verdict};
use nsqkd_core::quantum::singlet_box;

#[test]
fn honest_statistic_single_run() {
    let p = ProtocolParams::new(3, 40, 2024).unwrap();
    let t = run_at(&p, &singlet_box(3).unwrap(), 0).unwrap();
    // Use every qualifying pair of the run, announced or not.
    let recs = t.records.iter().map(|r| (r.x, r.y, r.a as usize, r.b as usize));
    let est = t_empirical(3, recs).unwrap();
    assert_eq!(est.sample_count, 360);
    assert!((est.value - 5.0 / 6.0).abs() < 3.0 * est.std_error, "{} ± {}", est.value, est.std_error);
}

#[test]
fn deterministic_transcript_respects_local_bound() {
    let d = deterministic_box(&[0, 0, 0], &[1, 1, 1]).unwrap();
    let p = ProtocolParams::new(3, 40, 5).unwrap();
    let t = run_at(&p, &d, 0).unwrap();
    let est = t_empirical(3, t.records.iter().map(|r| (r.x, r.y, r.a as usize, r.b as usize))).unwrap();
    assert!(est.value <= local_bound(3) + 3.0 * est.std_error.max(1e-3));
}

#[test]
fn honest_statistic_converges() {
    let p = ProtocolParams::new(3, 4, 77).unwrap();
    let s = singlet_box(3).unwrap();
    let mut recs = Vec::new();
    let mut k = 0;
    while recs.len() < 100_000 {
        let t = run_at(&p, &s, k).unwrap();
        recs.extend(t.records.iter().map(|r| (r.x, r.y, r.a as usize, r.b as usize)));
        k += 1;
    }
    let est = t_empirical(3, recs).unwrap();
    assert!((est.value - quantum_value(3)).abs() < 5.0 * est.std_error);
    assert!(est.empty_cells.is_empty());
}

#[test]
fn honest_secret_bits_agree_on_identical_bases() {
    let p = ProtocolParams::new(3, 1, 8).unwrap();
    let s = singlet_box(3).unwrap();
    let mut checked = 0;
    for k in 0..20_000 {
        let t = run_at(&p, &s, k).unwrap();
        if t.verdict == Verdict::Passed {
            let r = t.secret_record().unwrap();
            if r.x == r.y {
                assert_eq!(t.keys_agree(), Some(true));
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn honest_agreement_rate_without_filtering() {
    // Among passes the secret pair is identical-basis w.p. 1/3 and a neighbour
    // w.p. 2/3; passing does not filter the secret pair, so
    // P(agree | pass) = 1/3 + (2/3)·cos²(π/6) = 1 − (2/3)·0.25.
    let p = ProtocolParams::new(3, 1, 99).unwrap();
    let st = monte_carlo(&p, &singlet_box(3).unwrap(), 100_000).unwrap();
    let agree = st.p_agree_given_pass();
    assert!(agree.trials > 1000);
    assert!((agree.value - (1.0 - 2.0 / 3.0 * 0.25)).abs() < 5.0 * agree.std_error);
}

#[test]
fn correlated_source_never_passes() {
    let d = deterministic_box(&[0, 0, 0], &[0, 0, 0]).unwrap();
    let st = monte_carlo(&ProtocolParams::new(3, 2, 1).unwrap(), &d, 2000).unwrap();
    assert_eq!(st.pass_count, 0);
    assert_eq!(st.event_counts[EventClass::E3.index()], 0);
}

#[test]
fn step4_aborts_are_e0() {
    // N = 12, M = 1: mean qualifying count 36 against a threshold of 24.
    let p = ProtocolParams::new(12, 1, 3).unwrap();
    let st = monte_carlo(&p, &singlet_box(12).unwrap(), 5000).unwrap();
    assert_eq!(st.abort4_count, st.event_counts[0]);
    assert!(st.abort4_count > 0);
}
