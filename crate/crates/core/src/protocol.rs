//! The single-bit key distribution protocol as an executable state machine.
//!
//! One run over `n = M·N²` pairs:
//!
//! 1. every pair comes from a [`PairSource`];
//! 2. Alice and Bob pick settings uniformly from `0..N` and record outcomes;
//! 3. settings are announced;
//! 4. abort unless at least `2MN` pairs have neighbouring or identical bases;
//! 5. one qualifying pair is kept secret, every other outcome is announced;
//! 6. abort if an announced qualifying pair is not anticorrelated;
//! 7. Alice's bit is her outcome, Bob's bit is the opposite of his.
//!
//! Wrap-around neighbours (`X_{-1}`, `X_N`) carry reversed outcome labels on
//! Bob's side, both for the step-6 test and for Bob's step-7 bit.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::protocol_cell;
use crate::boxes::{BipartiteBox, TripartiteBox};
use crate::error::{Error, Result};
use crate::quantum::{sample_outcomes, sample_tripartite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    seed: u64,
}

impl ProtocolParams {
    pub fn new(n: usize, m: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Params(format!("N must be at least 2, got {n}")));
        }
        if m < 1 {
            return Err(Error::Params("M must be at least 1".into()));
        }
        m.checked_mul(n)
            .and_then(|v| v.checked_mul(n))
            .filter(|&pairs| pairs <= 1 << 32)
            .ok_or_else(|| Error::Params(format!("M·N² too large for N={n}, M={m}")))?;
        Ok(Self { n, m, seed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `n = M·N²`.
    pub fn pair_count(&self) -> usize {
        self.m * self.n * self.n
    }

    /// Step-4 minimum number of qualifying pairs, `2MN`.
    pub fn threshold(&self) -> usize {
        2 * self.m * self.n
    }

    /// Probability that uniformly chosen settings are neighbouring or identical.
    pub fn qualifying_probability(&self) -> f64 {
        (3.0 / self.n as f64).min(1.0)
    }

    /// `1 − 1/(2MNε)`: the pass-conditioned anticorrelation lower bound.
    pub fn lemma_bound(&self, epsilon: f64) -> f64 {
        1.0 - 1.0 / (2.0 * self.m as f64 * self.n as f64 * epsilon)
    }
}

/// What a source hands out for one pair. `e` is Eve's outcome when the source
/// models her explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub a: usize,
    pub b: usize,
    pub e: Option<usize>,
}

/// Produces the outcomes of each pair given both settings.
///
/// The pair index is visible so non-i.i.d. test sources can be written; the
/// box-backed sources ignore it.
pub trait PairSource: Sync {
    fn settings(&self) -> usize;
    fn draw(&self, pair: usize, x: usize, y: usize, rng: &mut dyn RngCore) -> Draw;
}

impl PairSource for BipartiteBox {
    fn settings(&self) -> usize {
        self.num_settings_a()
    }

    fn draw(&self, _pair: usize, x: usize, y: usize, rng: &mut dyn RngCore) -> Draw {
        let (a, b) = sample_outcomes(self, x, y, rng);
        Draw { a, b, e: None }
    }
}

impl PairSource for TripartiteBox {
    fn settings(&self) -> usize {
        self.num_settings_a()
    }

    fn draw(&self, _pair: usize, x: usize, y: usize, rng: &mut dyn RngCore) -> Draw {
        let (a, b, e) = sample_tripartite(self, x, y, rng);
        Draw { a, b, e: Some(e) }
    }
}

fn check_source(params: &ProtocolParams, source: &dyn PairSource) -> Result<()> {
    if source.settings() != params.n {
        return Err(Error::Dimension(format!("source has {} settings but N = {}", source.settings(), params.n)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: usize,
    pub x: usize,
    pub y: usize,
    pub a: u8,
    /// Bob's raw outcome in basis `X_y`.
    pub b: u8,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub e: Option<usize>,
    pub neighbouring_or_identical: bool,
    /// Bob's basis is a wrap-around neighbour with swapped labels.
    pub reversed: bool,
    pub announced: bool,
}

impl PairRecord {
    /// Bob's outcome in the basis convention of the pair.
    pub fn bob_label(&self) -> u8 {
        self.b ^ u8::from(self.reversed)
    }

    /// Condition C: qualifying bases and anticorrelated outcomes.
    pub fn satisfies_c(&self) -> bool {
        self.neighbouring_or_identical && self.a != self.bob_label()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AbortedStep4,
    AbortedStep6,
    Passed,
}

/// The four-way partition of runs by qualifying count `m` and `#(C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventClass {
    /// `m < 2MN`
    E0,
    /// `m ≥ 2MN`, `#(C) < m − 1`
    E1,
    /// `m ≥ 2MN`, `#(C) = m − 1`
    E2,
    /// `m ≥ 2MN`, `#(C) = m`
    E3,
}

impl EventClass {
    pub fn index(self) -> usize {
        match self {
            Self::E0 => 0,
            Self::E1 => 1,
            Self::E2 => 2,
            Self::E3 => 3,
        }
    }
}

pub fn classify_counts(qualifying: usize, satisfying_c: usize, threshold: usize) -> EventClass {
    debug_assert!(satisfying_c <= qualifying);
    if qualifying < threshold {
        EventClass::E0
    } else if satisfying_c + 1 < qualifying {
        EventClass::E1
    } else if satisfying_c + 1 == qualifying {
        EventClass::E2
    } else {
        EventClass::E3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub params: ProtocolParams,
    pub run_index: u64,
    pub records: Vec<PairRecord>,
    pub verdict: Verdict,
    pub secret_index: Option<usize>,
    pub alice_bit: Option<u8>,
    pub bob_bit: Option<u8>,
    /// `m`
    pub qualifying_count: usize,
    /// `#(C)`
    pub c_count: usize,
    pub event_class: EventClass,
}

impl Transcript {
    pub fn secret_record(&self) -> Option<&PairRecord> {
        self.secret_index.map(|s| &self.records[s])
    }

    pub fn keys_agree(&self) -> Option<bool> {
        Some(self.alice_bit? == self.bob_bit?)
    }

    /// Announced `(x, y, a, b)` records, for the empirical chained statistic.
    pub fn announced_pairs(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        self.records.iter().filter(|r| r.announced).map(|r| (r.x, r.y, r.a as usize, r.b as usize))
    }
}

/// Recomputes the event class from the records.
pub fn classify_event(t: &Transcript) -> EventClass {
    let m = t.records.iter().filter(|r| r.neighbouring_or_identical).count();
    let c = t.records.iter().filter(|r| r.satisfies_c()).count();
    classify_counts(m, c, t.params.threshold())
}

pub fn run_protocol<R: Rng>(params: &ProtocolParams, source: &dyn PairSource, rng: &mut R) -> Result<Transcript> {
    check_source(params, source)?;
    Ok(run_unchecked(params, source, rng, 0))
}

/// The rng for run `run_index`: seeded by the params seed, one ChaCha stream per run.
pub fn run_rng(params: &ProtocolParams, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(run_index);
    rng
}

/// Run number `run_index` of a Monte Carlo batch; identical to what
/// [`monte_carlo`] executes for that index.
pub fn run_at(params: &ProtocolParams, source: &dyn PairSource, run_index: u64) -> Result<Transcript> {
    check_source(params, source)?;
    Ok(run_unchecked(params, source, &mut run_rng(params, run_index), run_index))
}

fn run_unchecked<R: Rng>(params: &ProtocolParams, source: &dyn PairSource, rng: &mut R, run_index: u64) -> Transcript {
    let n = params.n;
    let mut records = Vec::with_capacity(params.pair_count());
    for index in 0..params.pair_count() {
        let x = rng.random_range(0..n);
        let y = rng.random_range(0..n);
        let d = source.draw(index, x, y, rng);
        let cell = protocol_cell(x, y, n);
        records.push(PairRecord {
            index,
            x,
            y,
            a: d.a as u8,
            b: d.b as u8,
            e: d.e,
            neighbouring_or_identical: cell.is_some(),
            reversed: cell.is_some_and(|c| c.reversed),
            announced: false,
        });
    }
    let qualifying: Vec<usize> = records.iter().filter(|r| r.neighbouring_or_identical).map(|r| r.index).collect();
    let m = qualifying.len();
    let c_count = records.iter().filter(|r| r.satisfies_c()).count();
    let event_class = classify_counts(m, c_count, params.threshold());

    let mut t = Transcript {
        params: *params,
        run_index,
        records,
        verdict: Verdict::AbortedStep4,
        secret_index: None,
        alice_bit: None,
        bob_bit: None,
        qualifying_count: m,
        c_count,
        event_class,
    };
    if m < params.threshold() {
        return t;
    }
    let s = qualifying[rng.random_range(0..m)];
    t.secret_index = Some(s);
    for r in t.records.iter_mut() {
        r.announced = r.index != s;
    }
    let failed = t.records.iter().any(|r| r.announced && r.neighbouring_or_identical && !r.satisfies_c());
    if failed {
        t.verdict = Verdict::AbortedStep6;
        return t;
    }
    let secret = &t.records[s];
    t.alice_bit = Some(secret.a);
    t.bob_bit = Some(1 - secret.bob_label());
    t.verdict = Verdict::Passed;
    t
}

/// Binomial point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl Estimate {
    pub fn binomial(successes: u64, trials: u64) -> Self {
        if trials == 0 {
            return Self { value: f64::NAN, std_error: f64::NAN, trials };
        }
        let p = successes as f64 / trials as f64;
        Self { value: p, std_error: (p * (1.0 - p) / trials as f64).sqrt(), trials }
    }
}

/// Aggregated counts over many runs. Merging is associative and commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub runs: u64,
    pub pass_count: u64,
    pub abort4_count: u64,
    pub abort6_count: u64,
    pub event_counts: [u64; 4],
    /// Passes where `alice_bit = bob_bit`.
    pub key_agreement_count: u64,
    /// Passes that fell in E2.
    pub e2_pass_count: u64,
    /// Passes where the source reported an Eve outcome.
    pub eve_observed_count: u64,
    /// Of those, passes where `e mod 2` equals Alice's bit.
    pub eve_correct_count: u64,
}

impl RunStats {
    pub fn record(&mut self, t: &Transcript) {
        self.runs += 1;
        self.event_counts[t.event_class.index()] += 1;
        match t.verdict {
            Verdict::AbortedStep4 => self.abort4_count += 1,
            Verdict::AbortedStep6 => self.abort6_count += 1,
            Verdict::Passed => {
                self.pass_count += 1;
                if t.keys_agree() == Some(true) {
                    self.key_agreement_count += 1;
                }
                if t.event_class == EventClass::E2 {
                    self.e2_pass_count += 1;
                }
                if let (Some(e), Some(bit)) = (t.secret_record().and_then(|r| r.e), t.alice_bit) {
                    self.eve_observed_count += 1;
                    self.eve_correct_count += u64::from(e % 2 == bit as usize);
                }
            }
        }
    }

    pub fn merge(mut self, o: RunStats) -> RunStats {
        self.runs += o.runs;
        self.pass_count += o.pass_count;
        self.abort4_count += o.abort4_count;
        self.abort6_count += o.abort6_count;
        for (a, b) in self.event_counts.iter_mut().zip(o.event_counts) {
            *a += b;
        }
        self.key_agreement_count += o.key_agreement_count;
        self.e2_pass_count += o.e2_pass_count;
        self.eve_observed_count += o.eve_observed_count;
        self.eve_correct_count += o.eve_correct_count;
        self
    }

    pub fn p_pass(&self) -> Estimate {
        Estimate::binomial(self.pass_count, self.runs)
    }

    /// Empirical `q_i = P(E_i)`.
    pub fn q(&self, class: EventClass) -> Estimate {
        Estimate::binomial(self.event_counts[class.index()], self.runs)
    }

    /// `P(alice_bit = bob_bit | pass)`, i.e. `P(a_s ≠ b_s | pass)`.
    pub fn p_agree_given_pass(&self) -> Estimate {
        Estimate::binomial(self.key_agreement_count, self.pass_count)
    }

    pub fn p_pass_given_e2(&self) -> Estimate {
        Estimate::binomial(self.e2_pass_count, self.event_counts[2])
    }

    pub fn p_eve_correct_given_pass(&self) -> Estimate {
        Estimate::binomial(self.eve_correct_count, self.eve_observed_count)
    }
}

/// Runs `runs` independent protocol executions; run `k` uses [`run_rng`]`(params, k)`.
/// Parallelism follows the ambient rayon pool; the result does not depend on it.
pub fn monte_carlo(params: &ProtocolParams, source: &dyn PairSource, runs: u64) -> Result<RunStats> {
    if runs == 0 {
        return Err(Error::Params("runs must be at least 1".into()));
    }
    check_source(params, source)?;
    Ok((0..runs)
        .into_par_iter()
        .fold(RunStats::default, |mut acc, k| {
            acc.record(&run_unchecked(params, source, &mut run_rng(params, k), k));
            acc
        })
        .reduce(RunStats::default, RunStats::merge))
}

/// `M = ⌈N^{3/4}⌉`, `ε = N^{-1/4}`, with the quantities needed to judge
/// whether the regime is meaningful at this N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterChoice {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub epsilon: f64,
    /// `1 − 1/(2MNε)`.
    pub lemma_bound: f64,
    /// Smallest `δδ′` for which `1 − δδ′/(3N)` contradicts the lemma bound, `3/(2Mε)`.
    pub delta_product_threshold: f64,
    /// `M ≥ N`, outside the `M ≪ N` regime the analysis assumes.
    pub m_not_small: bool,
}

impl ParameterChoice {
    /// The eavesdropping side `1 − δδ′/(3N)`.
    pub fn attack_bound(&self, delta: f64, delta_prime: f64) -> f64 {
        1.0 - delta * delta_prime / (3.0 * self.n as f64)
    }
}

fn exact_ceil(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 * r.max(1.0) {
        r
    } else {
        v.ceil()
    }
}

pub fn choose_parameters(n: usize) -> Result<ParameterChoice> {
    if n < 2 {
        return Err(Error::Params(format!("N must be at least 2, got {n}")));
    }
    let nf = n as f64;
    let m = exact_ceil(nf.powf(0.75)) as usize;
    let epsilon = nf.powf(-0.25);
    Ok(ParameterChoice {
        n,
        m,
        epsilon,
        lemma_bound: 1.0 - 1.0 / (2.0 * m as f64 * nf * epsilon),
        delta_product_threshold: 3.0 / (2.0 * m as f64 * epsilon),
        m_not_small: m >= n,
    })
}
