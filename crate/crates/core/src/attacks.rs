//! Eavesdropping strategies and the optimal no-signalling attack.
//!
//! Attacks are i.i.d. per pair: Eve prepares every pair from the same
//! tripartite box and keeps one system with a single measurement. The optimal
//! attack on a target Alice–Bob box is the linear program
//!
//! ```text
//! maximize   Σ_{b,e} P(a = g(e), b, e | x*, y*)
//! subject to Σ_e P(a,b,e|x,y) = target(a,b|x,y)         for all a,b,x,y
//!            Σ_b P(a,b,e|x,y) independent of y          for all a,e,x
//!            Σ_a P(a,b,e|x,y) independent of x          for all b,e,y
//!            P >= 0
//! ```
//!
//! with Eve's guess `g(e) = e mod 2`. Its optimum is compared with the
//! closed-form bound `min(1, 1/2 + (3N/2)(1 − t))`, `t` the chained statistic
//! of the target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::{no_violation_note, protocol_cell, t_exact};
use crate::boxes::{ab_marginal, mix, BipartiteBox, DeterministicLocalBox, TripartiteBox, NS_TOL};
use crate::error::{Error, Result};
use crate::lp::{solve, LpProblem};
use crate::protocol::{Draw, PairSource};
use crate::quantum::{sample_tripartite, singlet_box};

/// Which of Eve's deterministic-strategy bits her single outcome carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessRule {
    /// `e = a(x)`
    AliceAt(usize),
    /// `e = b(y)`
    BobAt(usize),
}

impl GuessRule {
    fn eve_outcome(self, d: &DeterministicLocalBox) -> Result<usize> {
        let (assign, i) = match self {
            Self::AliceAt(x) => (d.assignment_a(), x),
            Self::BobAt(y) => (d.assignment_b(), y),
        };
        assign
            .get(i)
            .map(|&v| v as usize)
            .ok_or_else(|| Error::Dimension(format!("guess rule setting {i} out of range")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    HonestSinglet,
    DeterministicLocal {
        assignment: DeterministicLocalBox,
        guess: GuessRule,
    },
    LhvMixture {
        components: Vec<DeterministicLocalBox>,
        weights: Vec<f64>,
        eve_knows_component: bool,
        guess: GuessRule,
    },
    ExplicitTripartite,
}

/// A per-pair source under Eve's control, with the tripartite box it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct EveStrategy {
    kind: StrategyKind,
    n: usize,
    tripartite: TripartiteBox,
}

fn point_mass(ne: usize, e: usize) -> Vec<f64> {
    (0..ne).map(|k| f64::from(u8::from(k == e))).collect()
}

fn det_with_eve(d: &DeterministicLocalBox, e: usize) -> Result<TripartiteBox> {
    TripartiteBox::product(&d.to_box(), &point_mass(2, e))
}

fn square_det(d: &DeterministicLocalBox) -> Result<usize> {
    let n = d.assignment_a().len();
    if d.assignment_b().len() != n {
        return Err(Error::Dimension("assignments must have equal length".into()));
    }
    Ok(n)
}

impl EveStrategy {
    /// Genuine singlets; Eve's outcome is always 0 and uncorrelated.
    pub fn honest(n: usize) -> Result<Self> {
        let tripartite = TripartiteBox::product(&singlet_box(n)?, &[1.0, 0.0])?;
        Ok(Self { kind: StrategyKind::HonestSinglet, n, tripartite })
    }

    /// Every pair follows the same deterministic assignment, which Eve knows.
    pub fn deterministic(assignment: DeterministicLocalBox, guess: GuessRule) -> Result<Self> {
        let n = square_det(&assignment)?;
        let tripartite = det_with_eve(&assignment, guess.eve_outcome(&assignment)?)?;
        Ok(Self { kind: StrategyKind::DeterministicLocal { assignment, guess }, n, tripartite })
    }

    /// A local hidden-variable source: each pair draws a deterministic
    /// component. When `eve_knows_component`, Eve's outcome is the guess bit
    /// of the drawn component; otherwise it is always 0.
    pub fn lhv_mixture(
        components: Vec<DeterministicLocalBox>,
        weights: Vec<f64>,
        eve_knows_component: bool,
        guess: GuessRule,
    ) -> Result<Self> {
        let first =
            components.first().ok_or_else(|| Error::InvalidValue("LHV mixture needs at least one component".into()))?;
        let n = square_det(first)?;
        let parts = components
            .iter()
            .map(|d| {
                if square_det(d)? != n {
                    return Err(Error::Dimension("LHV components differ in setting count".into()));
                }
                let e = if eve_knows_component { guess.eve_outcome(d)? } else { 0 };
                det_with_eve(d, e)
            })
            .collect::<Result<Vec<_>>>()?;
        let tripartite = TripartiteBox::mix(&parts, &weights)?;
        Ok(Self { kind: StrategyKind::LhvMixture { components, weights, eve_knows_component, guess }, n, tripartite })
    }

    /// Any tripartite box; it must be no-signalling.
    pub fn explicit(t: TripartiteBox) -> Result<Self> {
        let n = t.num_settings_a();
        if t.num_settings_b() != n {
            return Err(Error::Dimension("explicit box must have equal setting counts".into()));
        }
        let report = t.validate_ns(NS_TOL);
        if !report.is_empty() {
            return Err(Error::InvalidValue(format!(
                "explicit strategy box violates no-signalling: {}",
                report.violations[0]
            )));
        }
        Ok(Self { kind: StrategyKind::ExplicitTripartite, n, tripartite: t })
    }

    pub fn kind(&self) -> &StrategyKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tripartite(&self) -> &TripartiteBox {
        &self.tripartite
    }

    /// The correlations Alice and Bob see.
    pub fn ab_box(&self) -> BipartiteBox {
        ab_marginal(&self.tripartite)
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            StrategyKind::HonestSinglet => "honest".into(),
            StrategyKind::DeterministicLocal { assignment, .. } => {
                format!("det:a={},b={}", assignment.bits_a(), assignment.bits_b())
            }
            StrategyKind::LhvMixture { components, eve_knows_component, .. } => format!(
                "lhv:{} components{}",
                components.len(),
                if *eve_knows_component { ", Eve knows component" } else { "" }
            ),
            StrategyKind::ExplicitTripartite => format!("box:{} eve outcomes", self.tripartite.num_eve_outcomes()),
        }
    }
}

impl PairSource for EveStrategy {
    fn settings(&self) -> usize {
        self.n
    }

    fn draw(&self, _pair: usize, x: usize, y: usize, rng: &mut dyn rand::RngCore) -> Draw {
        let (a, b, e) = sample_tripartite(&self.tripartite, x, y, rng);
        Draw { a, b, e: Some(e) }
    }
}

/// Whose outcome Eve tries to guess.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessParty {
    #[default]
    Alice,
    Bob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBound {
    #[serde(rename = "N")]
    pub n: usize,
    pub t_target: f64,
    pub p_guess_lp: f64,
    pub p_guess_analytic: f64,
    /// How the guessing probability is conditioned, e.g. `"alice outcome at fixed settings (0,1)"`.
    pub guess_context: String,
    /// Secret settings; empty when averaged over all qualifying pairs.
    pub settings: Vec<(usize, usize)>,
    pub eve_outcomes: usize,
    pub solver_iterations: usize,
    /// Largest duality gap over the solves behind this record.
    pub duality_gap: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalAttack {
    pub tripartite: TripartiteBox,
    pub bound: AttackBound,
}

/// `min(1, 1/2 + (3N/2)(1 − t))`.
pub fn analytic_guess_bound(n: usize, t: f64) -> f64 {
    (0.5 + 1.5 * n as f64 * (1.0 - t)).min(1.0)
}

fn check_target(target: &BipartiteBox) -> Result<usize> {
    let report = target.validate_ns(NS_TOL);
    if !report.is_empty() {
        return Err(Error::InvalidValue(format!(
            "target box is not a valid no-signalling box: {}",
            report.violations[0]
        )));
    }
    target.settings().ok_or_else(|| Error::Dimension("target must have equal setting counts".into()))
}

/// Builds the attack LP. Variable `k` is entry `k` of the tripartite table.
pub fn attack_lp(
    target: &BipartiteBox,
    eve_outcomes: usize,
    secret_settings: (usize, usize),
    party: GuessParty,
) -> Result<LpProblem> {
    let n = check_target(target)?;
    if eve_outcomes < 2 {
        return Err(Error::Params(format!("Eve needs at least 2 outcomes, got {eve_outcomes}")));
    }
    let (xs, ys) = secret_settings;
    if xs >= n || ys >= n || protocol_cell(xs, ys, n).is_none() {
        return Err(Error::Params(format!("secret settings ({xs},{ys}) are not neighbouring or identical for N={n}")));
    }
    let ne = eve_outcomes;
    let shape = TripartiteBox::new(n, n, ne, vec![0.0; n * n * 4 * ne])?;
    let idx = |a, b, e, x, y| shape.index(a, b, e, x, y);
    let mut lp = LpProblem::new(n * n * 4 * ne);

    for x in 0..n {
        for y in 0..n {
            for a in 0..2 {
                for b in 0..2 {
                    let terms: Vec<_> = (0..ne).map(|e| (idx(a, b, e, x, y), 1.0)).collect();
                    lp.add_eq_sparse(&terms, target.p(a, b, x, y))?;
                }
            }
        }
    }
    for x in 0..n {
        for a in 0..2 {
            for e in 0..ne {
                for y in 1..n {
                    let terms: Vec<_> =
                        (0..2).flat_map(|b| [(idx(a, b, e, x, y), 1.0), (idx(a, b, e, x, 0), -1.0)]).collect();
                    lp.add_eq_sparse(&terms, 0.0)?;
                }
            }
        }
    }
    for y in 0..n {
        for b in 0..2 {
            for e in 0..ne {
                for x in 1..n {
                    let terms: Vec<_> =
                        (0..2).flat_map(|a| [(idx(a, b, e, x, y), 1.0), (idx(a, b, e, 0, y), -1.0)]).collect();
                    lp.add_eq_sparse(&terms, 0.0)?;
                }
            }
        }
    }
    for e in 0..ne {
        let g = e % 2;
        for other in 0..2 {
            let var = match party {
                GuessParty::Alice => idx(g, other, e, xs, ys),
                GuessParty::Bob => idx(other, g, e, xs, ys),
            };
            lp.set_objective_coeff(var, 1.0)?;
        }
    }
    Ok(lp)
}

/// Eve's maximal probability of guessing the chosen party's outcome at the
/// secret settings, over all no-signalling extensions of `target`.
pub fn optimal_ns_attack(
    target: &BipartiteBox,
    eve_outcomes: usize,
    secret_settings: (usize, usize),
    party: GuessParty,
) -> Result<OptimalAttack> {
    let lp = attack_lp(target, eve_outcomes, secret_settings, party)?;
    let n = target.num_settings_a();
    let sol = solve(&lp).into_optimal()?;
    let tripartite = TripartiteBox::new(n, n, eve_outcomes, sol.x)?;
    let t_target = t_exact(target)?.value;
    let party_name = match party {
        GuessParty::Alice => "alice",
        GuessParty::Bob => "bob",
    };
    Ok(OptimalAttack {
        tripartite,
        bound: AttackBound {
            n,
            t_target,
            p_guess_lp: sol.objective_value,
            p_guess_analytic: analytic_guess_bound(n, t_target),
            guess_context: format!(
                "{party_name} outcome at fixed settings ({},{})",
                secret_settings.0, secret_settings.1
            ),
            settings: vec![secret_settings],
            eve_outcomes,
            solver_iterations: sol.iterations,
            duality_gap: sol.duality_gap,
            notes: no_violation_note(n).into_iter().collect(),
        },
    })
}

/// All neighbouring-or-identical `(x, y)` setting pairs.
pub fn qualifying_settings(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).filter(|&(x, y)| protocol_cell(x, y, n).is_some()).collect()
}

/// Guessing probability averaged uniformly over every qualifying secret
/// setting pair (Eve learns the settings from the public announcement).
pub fn averaged_ns_attack(target: &BipartiteBox, eve_outcomes: usize, party: GuessParty) -> Result<AttackBound> {
    let n = check_target(target)?;
    let pairs = qualifying_settings(n);
    let results = pairs
        .par_iter()
        .map(|&s| optimal_ns_attack(target, eve_outcomes, s, party).map(|a| a.bound))
        .collect::<Result<Vec<_>>>()?;
    let mut out = results[0].clone();
    out.p_guess_lp = results.iter().map(|b| b.p_guess_lp).sum::<f64>() / results.len() as f64;
    out.solver_iterations = results.iter().map(|b| b.solver_iterations).sum();
    out.duality_gap = results.iter().map(|b| b.duality_gap.abs()).fold(0.0, f64::max);
    out.settings = Vec::new();
    out.guess_context = format!(
        "{} outcome averaged over {} qualifying setting pairs",
        if party == GuessParty::Alice { "alice" } else { "bob" },
        pairs.len()
    );
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_prime: f64,
    /// Lower bound on `t_s` given the tests pass: `1 − 1/(2MNε)`.
    pub lemma_bound: f64,
    /// Upper bound on `t_s` if Eve has the assumed advantage: `1 − δδ′/(3N)`.
    pub attack_bound: f64,
    /// `2Mεδδ′`; the two bounds contradict each other iff this exceeds 3.
    pub margin: f64,
    pub secure: bool,
}

/// Whether Eve's assumed advantage `(δ, δ′)` is ruled out at `(N, M, ε)`.
pub fn consistency_check(n: usize, m: usize, epsilon: f64, delta: f64, delta_prime: f64) -> Result<ConsistencyReport> {
    if n == 0 || m == 0 {
        return Err(Error::Params("N and M must be positive".into()));
    }
    for (name, v) in [("epsilon", epsilon), ("delta", delta), ("delta'", delta_prime)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::Params(format!("{name} = {v} must lie in (0, 1]")));
        }
    }
    let nf = n as f64;
    let margin = 2.0 * m as f64 * epsilon * delta * delta_prime;
    Ok(ConsistencyReport {
        n,
        m,
        epsilon,
        delta,
        delta_prime,
        lemma_bound: 1.0 - 1.0 / (2.0 * m as f64 * nf * epsilon),
        attack_bound: 1.0 - delta * delta_prime / (3.0 * nf),
        margin,
        secure: margin > 3.0,
    })
}

/// Deterministic components of an LHV source with given weights, mixed into a
/// bipartite box (Eve's side dropped).
pub fn lhv_box(components: &[DeterministicLocalBox], weights: &[f64]) -> Result<BipartiteBox> {
    let boxes: Vec<_> = components.iter().map(DeterministicLocalBox::to_box).collect();
    mix(&boxes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::deterministic_box;

    #[test]
    fn analytic_bound_examples() {
        assert_eq!(analytic_guess_bound(5, 1.0), 0.5);
        for n in 2..10 {
            let b = analytic_guess_bound(n, crate::bell::local_bound(n));
            assert!((b - 1.0).abs() < 1e-12);
        }
        assert_eq!(analytic_guess_bound(3, 5.0 / 6.0), 1.0);
        let s = |n: usize| n as f64 * (std::f64::consts::PI / (2.0 * n as f64)).sin().powi(2);
        assert!((s(3) - 0.75).abs() < 1e-12);
        assert!((s(8) - 0.3045).abs() < 1e-3);
        assert!((s(16) - 0.1534).abs() < 1e-3);
    }

    #[test]
    fn deterministic_target_is_fully_exposed() {
        let d = deterministic_box(&[0, 1], &[1, 1]).unwrap();
        let att = optimal_ns_attack(&d, 2, (0, 1), GuessParty::Alice).unwrap();
        assert!((att.bound.p_guess_lp - 1.0).abs() < 1e-7);
        assert!(att.bound.duality_gap.abs() <= 1e-7);
        assert!(att.tripartite.validate_ns(NS_TOL).is_empty());
    }

    #[test]
    fn attack_box_marginal_is_target() {
        let s = singlet_box(4).unwrap();
        let att = optimal_ns_attack(&s, 2, (1, 2), GuessParty::Alice).unwrap();
        let m = ab_marginal(&att.tripartite);
        for (u, v) in m.probs().iter().zip(s.probs()) {
            assert!((u - v).abs() < 1e-7);
        }
        assert!(att.tripartite.validate_ns(NS_TOL).is_empty());
    }

    #[test]
    fn bob_guess_matches_alice_for_singlet() {
        let s = singlet_box(5).unwrap();
        let a = optimal_ns_attack(&s, 2, (2, 2), GuessParty::Alice).unwrap().bound.p_guess_lp;
        let b = optimal_ns_attack(&s, 2, (2, 2), GuessParty::Bob).unwrap().bound.p_guess_lp;
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = singlet_box(4).unwrap();
        assert!(optimal_ns_attack(&s, 1, (0, 0), GuessParty::Alice).is_err());
        assert!(optimal_ns_attack(&s, 2, (0, 2), GuessParty::Alice).is_err());
        assert!(optimal_ns_attack(&s, 2, (0, 4), GuessParty::Alice).is_err());
        let signalling = BipartiteBox::from_fn(2, 2, |a, b, x, _| f64::from(u8::from(a == 0 && b == x))).unwrap();
        assert!(optimal_ns_attack(&signalling, 2, (0, 0), GuessParty::Alice).is_err());
    }

    #[test]
    fn qualifying_pairs_count() {
        assert_eq!(qualifying_settings(2).len(), 4);
        assert_eq!(qualifying_settings(3).len(), 9);
        assert_eq!(qualifying_settings(6).len(), 18);
    }

    #[test]
    fn strategies_induce_valid_boxes() {
        let d = DeterministicLocalBox::from_bits("010", "110").unwrap();
        let det = EveStrategy::deterministic(d.clone(), GuessRule::AliceAt(1)).unwrap();
        assert!(det.tripartite().validate_ns(NS_TOL).is_empty());
        assert_eq!(det.ab_box(), d.to_box());
        assert_eq!(det.tripartite().eve_marginal(), vec![0.0, 1.0]);

        let comps = vec![d.clone(), DeterministicLocalBox::from_bits("000", "111").unwrap()];
        let lhv = EveStrategy::lhv_mixture(comps.clone(), vec![0.25, 0.75], true, GuessRule::AliceAt(0)).unwrap();
        assert!(lhv.tripartite().validate_ns(NS_TOL).is_empty());
        assert_eq!(lhv.ab_box(), lhv_box(&comps, &[0.25, 0.75]).unwrap());

        let honest = EveStrategy::honest(3).unwrap();
        assert_eq!(honest.ab_box(), singlet_box(3).unwrap());
        assert_eq!(honest.describe(), "honest");
        assert_eq!(det.describe(), "det:a=010,b=110");

        assert!(EveStrategy::deterministic(
            DeterministicLocalBox::from_bits("01", "011").unwrap(),
            GuessRule::AliceAt(0)
        )
        .is_err());
        assert!(EveStrategy::deterministic(d, GuessRule::BobAt(3)).is_err());
    }

    #[test]
    fn explicit_strategy_must_be_ns() {
        let bad = TripartiteBox::from_fn(2, 2, 2, |_, _, e, _, y| if e == y { 0.25 } else { 0.0 }).unwrap();
        assert!(EveStrategy::explicit(bad).is_err());
        let good = TripartiteBox::product(&singlet_box(2).unwrap(), &[0.5, 0.5]).unwrap();
        assert_eq!(EveStrategy::explicit(good).unwrap().n(), 2);
    }

    #[test]
    fn consistency_examples() {
        let r = consistency_check(256, 64, 0.25, 0.5, 0.5).unwrap();
        assert_eq!(r.margin, 8.0);
        assert!(r.secure);
        assert!(r.lemma_bound > r.attack_bound);
        let r = consistency_check(256, 64, 0.25, 1e-3, 1e-3).unwrap();
        assert!(!r.secure);
        assert!(consistency_check(16, 8, 0.0, 0.5, 0.5).is_err());
        assert!(consistency_check(16, 8, 0.5, 1.5, 0.5).is_err());
    }
}
