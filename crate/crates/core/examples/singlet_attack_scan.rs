use std::time::Instant;

use nsqkd_core::attacks::{optimal_ns_attack, GuessParty};
use nsqkd_core::quantum::singlet_box;

fn main() {
    for n in 2..=8 {
        let t0 = Instant::now();
        let a = optimal_ns_attack(&singlet_box(n).unwrap(), 2, (0, 0), GuessParty::Alice).unwrap();
        println!(
            "N={n} p={:.12} iters={} gap={:e} {:?}",
            a.bound.p_guess_lp,
            a.bound.solver_iterations,
            a.bound.duality_gap,
            t0.elapsed()
        );
    }
}
