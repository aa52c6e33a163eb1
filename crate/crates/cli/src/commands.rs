use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use nsqkd_core::attacks::analytic_guess_bound;
use nsqkd_core::attacks::{
    averaged_ns_attack, consistency_check, optimal_ns_attack, AttackBound, ConsistencyReport, GuessParty,
};
use nsqkd_core::bell::{local_bound, no_violation_note, quantum_value, t_exact, ChainedStatistic};
use nsqkd_core::boxes::{AnyBox, Violation};
use nsqkd_core::protocol::{
    choose_parameters, monte_carlo, run_at, Estimate, EventClass, ParameterChoice, ProtocolParams, RunStats,
};
use nsqkd_core::quantum::{depolarized, singlet_box};

use crate::strategy::{parse_strategy, parse_target, read_text};
use crate::{
    AttackBoundArgs, BellScanArgs, CheckBoxArgs, CliError, Command, ExportBoxArgs, Format, ParamsArgs, Party,
    SimulateArgs, TextFormat, SCHEMA_VERSION,
};

type Result<T> = std::result::Result<T, CliError>;

/// Envelope shared by every JSON report.
#[derive(Debug, Serialize)]
struct Report<C, R> {
    schema: &'static str,
    schema_version: u32,
    config: C,
    result: R,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn report_json<C: Serialize, R: Serialize>(schema: &'static str, config: C, result: R) -> String {
    to_json(&Report { schema, schema_version: SCHEMA_VERSION, config, result })
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Empty cell for undefined estimates.
fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn emit(text: &str, output: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::Data(format!("cannot write output: {e}"))),
    }
}

fn pool(jobs: Option<usize>) -> Result<(rayon::ThreadPool, usize)> {
    let jobs = match jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let p = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    Ok((p, jobs))
}

pub fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Simulate(a) => simulate(&a, out, err),
        Command::AttackBound(a) => attack_bound(&a, out),
        Command::BellScan(a) => bell_scan(&a, out),
        Command::CheckBox(a) => check_box(&a, out),
        Command::ExportBox(a) => export_box(&a, out),
        Command::Params(a) => params(&a, out),
    }
}

#[derive(Debug, Serialize)]
struct SimulateConfig {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    runs: u64,
    seed: u64,
    seed_generated: bool,
    strategy: String,
    strategy_description: String,
    epsilon: f64,
    jobs: usize,
}

#[derive(Debug, Serialize)]
struct Derived {
    pair_count: usize,
    threshold: usize,
    qualifying_probability: f64,
    local_bound: f64,
    quantum_value: f64,
    /// Exact chained statistic of the source's Alice–Bob box.
    t_source: f64,
}

#[derive(Debug, Serialize)]
struct Estimates {
    p_pass: Estimate,
    /// `q_0..q_3`, the probabilities of E0..E3.
    q: [Estimate; 4],
    p_agree_given_pass: Estimate,
    p_pass_given_e2: Estimate,
    p_eve_correct_given_pass: Estimate,
}

#[derive(Debug, Serialize)]
struct LemmaCheck {
    bound: f64,
    epsilon: f64,
    /// The comparison only applies when `P(pass) > ε`.
    applicable: bool,
    p_agree_given_pass: f64,
    std_error: f64,
    /// `(estimate − bound) / σ`; absent when σ is zero or undefined.
    z_score: Option<f64>,
    /// Estimate is at least `bound − 5σ`.
    consistent: Option<bool>,
}

#[derive(Debug, Serialize)]
struct SimulateResult {
    derived: Derived,
    counts: RunStats,
    estimates: Estimates,
    lemma: LemmaCheck,
}

fn lemma_check(stats: &RunStats, bound: f64, epsilon: f64) -> LemmaCheck {
    let agree = stats.p_agree_given_pass();
    let applicable = stats.p_pass().value > epsilon;
    let z = (agree.std_error > 0.0).then(|| (agree.value - bound) / agree.std_error);
    LemmaCheck {
        bound,
        epsilon,
        applicable,
        p_agree_given_pass: agree.value,
        std_error: agree.std_error,
        z_score: z,
        consistent: applicable.then_some(agree.value >= bound - 5.0 * agree.std_error),
    }
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let (seed, seed_generated) = match a.seed {
        Some(s) => (s, false),
        None => (rand::random::<u64>(), true),
    };
    if seed_generated {
        let _ = writeln!(err, "seed: {seed}");
    }
    let params = ProtocolParams::new(a.n, a.m, seed)?;
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let epsilon = a.epsilon.unwrap_or((a.n as f64).powf(-0.25));
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(CliError::Usage(format!("--epsilon {epsilon} must lie in (0, 1]")));
    }
    let strategy = parse_strategy(&a.strategy, a.n)?;
    let (pool, jobs) = pool(a.jobs)?;

    let stats = pool.install(|| monte_carlo(&params, &strategy, a.runs))?;
    if let Some(path) = &a.transcripts {
        pool.install(|| write_transcripts(path, &params, &strategy, a.runs))?;
    }

    let config = SimulateConfig {
        n: a.n,
        m: a.m,
        runs: a.runs,
        seed,
        seed_generated,
        strategy: a.strategy.clone(),
        strategy_description: strategy.describe(),
        epsilon,
        jobs,
    };
    let lemma = lemma_check(&stats, params.lemma_bound(epsilon), epsilon);
    let estimates = Estimates {
        p_pass: stats.p_pass(),
        q: [EventClass::E0, EventClass::E1, EventClass::E2, EventClass::E3].map(|c| stats.q(c)),
        p_agree_given_pass: stats.p_agree_given_pass(),
        p_pass_given_e2: stats.p_pass_given_e2(),
        p_eve_correct_given_pass: stats.p_eve_correct_given_pass(),
    };
    let derived = Derived {
        pair_count: params.pair_count(),
        threshold: params.threshold(),
        qualifying_probability: params.qualifying_probability(),
        local_bound: local_bound(a.n),
        quantum_value: quantum_value(a.n),
        t_source: t_exact(&strategy.ab_box())?.value,
    };

    let _ = writeln!(err, "{}", lemma_line(&lemma, stats.p_pass()));

    let text = match a.format {
        Format::Json => {
            report_json("nsqkd/simulate", &config, SimulateResult { derived, counts: stats, estimates, lemma })
        }
        Format::Csv => {
            let mut header = vec!["N", "M", "runs", "seed", "strategy", "epsilon", "p_pass", "p_pass_se"];
            let mut row = vec![
                a.n.to_string(),
                a.m.to_string(),
                a.runs.to_string(),
                seed.to_string(),
                a.strategy.clone(),
                num(epsilon),
                num(estimates.p_pass.value),
                num(estimates.p_pass.std_error),
            ];
            for (i, q) in estimates.q.iter().enumerate() {
                row.push(num(q.value));
                row.push(num(q.std_error));
                header.push(["q0", "q1", "q2", "q3"][i]);
                header.push(["q0_se", "q1_se", "q2_se", "q3_se"][i]);
            }
            header.extend(["p_agree_given_pass", "p_agree_given_pass_se", "lemma_bound", "lemma_applicable"]);
            row.extend([
                num(lemma.p_agree_given_pass),
                num(lemma.std_error),
                num(lemma.bound),
                lemma.applicable.to_string(),
            ]);
            csv_text(&header, &[row])?
        }
    };
    emit(&text, a.output.as_deref(), out)?;
    Ok(0)
}

fn lemma_line(l: &LemmaCheck, pass: Estimate) -> String {
    if l.applicable {
        format!(
            "lemma: P(agree|pass) = {:.6} ± {:.6} vs bound 1 − 1/(2MNε) = {:.6} (P(pass) = {:.4} > ε = {})",
            l.p_agree_given_pass, l.std_error, l.bound, pass.value, l.epsilon
        )
    } else {
        format!(
            "lemma: not applicable, P(pass) = {:.4} ≤ ε = {} (bound would be {:.6})",
            pass.value, l.epsilon, l.bound
        )
    }
}

/// Transcripts are produced in parallel blocks and written in run order.
fn write_transcripts(
    path: &Path,
    params: &ProtocolParams,
    source: &dyn nsqkd_core::protocol::PairSource,
    runs: u64,
) -> Result<()> {
    const BLOCK: u64 = 1024;
    let file = fs::File::create(path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    let mut start = 0;
    while start < runs {
        let end = (start + BLOCK).min(runs);
        let lines = (start..end)
            .into_par_iter()
            .map(|k| run_at(params, source, k).map(|t| serde_json::to_string(&t).expect("transcripts serialize")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        for l in lines {
            writeln!(w, "{l}").map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        }
        start = end;
    }
    w.flush().map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct AttackConfig {
    #[serde(rename = "N")]
    n: usize,
    target: String,
    eve_outcomes: usize,
    /// `[x, y]`, or null when averaged.
    settings: Option<(usize, usize)>,
    average: bool,
    guess: GuessParty,
}

fn parse_settings(s: &str) -> Result<(usize, usize)> {
    let bad = || CliError::Usage(format!("--settings {s:?} must look like x,y"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
}

fn attack_bound(a: &AttackBoundArgs, out: &mut dyn Write) -> Result<i32> {
    let target = parse_target(&a.target, a.n)?;
    let report = target.validate_ns(nsqkd_core::boxes::NS_TOL);
    if let Some(v) = report.violations.first() {
        return Err(CliError::Data(format!("target is not a no-signalling box: {v}")));
    }
    let party = match a.guess {
        Party::Alice => GuessParty::Alice,
        Party::Bob => GuessParty::Bob,
    };
    let settings = if a.average { None } else { Some(parse_settings(&a.settings)?) };
    let (pool, _) = pool(a.jobs)?;
    let mut bound = match settings {
        None => pool.install(|| averaged_ns_attack(&target, a.eve_outcomes, party))?,
        Some(s) => {
            let attack = optimal_ns_attack(&target, a.eve_outcomes, s, party)?;
            if let Some(p) = &a.box_out {
                emit(&AnyBox::from(attack.tripartite).to_json(), Some(p), out)?;
            }
            attack.bound
        }
    };
    if 0.5 + 1.5 * a.n as f64 * (1.0 - bound.t_target) >= 1.0 {
        bound.notes.push("analytic bound clamped to 1.0".into());
    }
    let config = AttackConfig {
        n: a.n,
        target: a.target.clone(),
        eve_outcomes: a.eve_outcomes,
        settings,
        average: a.average,
        guess: party,
    };
    let text = match a.format {
        Format::Json => report_json("nsqkd/attack-bound", config, &bound),
        Format::Csv => csv_text(
            &[
                "N",
                "target",
                "t_target",
                "p_guess_lp",
                "p_guess_analytic",
                "guess_context",
                "eve_outcomes",
                "solver_iterations",
                "duality_gap",
                "notes",
            ],
            &[attack_row(&a.target, &bound)],
        )?,
    };
    emit(&text, a.output.as_deref(), out)?;
    Ok(0)
}

fn attack_row(target: &str, b: &AttackBound) -> Vec<String> {
    vec![
        b.n.to_string(),
        target.to_string(),
        num(b.t_target),
        num(b.p_guess_lp),
        num(b.p_guess_analytic),
        b.guess_context.clone(),
        b.eve_outcomes.to_string(),
        b.solver_iterations.to_string(),
        num(b.duality_gap),
        b.notes.join("; "),
    ]
}

/// Largest N accepted with `--lp`; the dense solver grows as N⁴.
pub const SCAN_LP_MAX_N: usize = 12;

#[derive(Debug, Serialize)]
struct ScanConfig {
    n_min: usize,
    n_max: usize,
    lp: bool,
}

#[derive(Debug, Clone, Serialize)]
struct ScanRow {
    #[serde(rename = "N")]
    n: usize,
    local_bound: f64,
    quantum_value: f64,
    gap: f64,
    violation: bool,
    /// `min(1, 1/2 + (3N/2)(1 − t))` at the singlet value.
    p_guess_analytic: f64,
    p_guess_lp: Option<f64>,
    /// Relative to the previous row; absent on the first.
    local_bound_increased: Option<bool>,
    quantum_value_increased: Option<bool>,
    p_guess_lp_decreased: Option<bool>,
    notes: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Monotonicity {
    local_bound_increasing: bool,
    quantum_value_increasing: bool,
    gap_positive_from_3: bool,
    p_guess_lp_decreasing_from_3: Option<bool>,
}

#[derive(Debug, Serialize)]
struct ScanResult {
    rows: Vec<ScanRow>,
    monotonicity: Monotonicity,
}

fn bell_scan(a: &BellScanArgs, out: &mut dyn Write) -> Result<i32> {
    if a.n_min < 2 || a.n_min > a.n_max {
        return Err(CliError::Usage(format!("need 2 <= --n-min <= --n-max, got {}..{}", a.n_min, a.n_max)));
    }
    if a.lp && a.n_max > SCAN_LP_MAX_N {
        return Err(CliError::Usage(format!("--lp supports N up to {SCAN_LP_MAX_N}")));
    }
    let lp_values = if a.lp {
        (a.n_min..=a.n_max)
            .into_par_iter()
            .map(|n| {
                let target = singlet_box(n)?;
                Ok(Some(optimal_ns_attack(&target, 2, (0, 1), GuessParty::Alice)?.bound.p_guess_lp))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; a.n_max - a.n_min + 1]
    };

    let mut rows: Vec<ScanRow> = Vec::new();
    for (n, lp) in (a.n_min..=a.n_max).zip(lp_values) {
        let (lb, qv) = (local_bound(n), quantum_value(n));
        let prev = rows.last();
        let mut notes: Vec<String> = no_violation_note(n).into_iter().collect();
        let p_guess_analytic = analytic_guess_bound(n, qv);
        if p_guess_analytic >= 1.0 {
            notes.push("analytic bound clamped to 1.0".into());
        }
        rows.push(ScanRow {
            n,
            local_bound: lb,
            quantum_value: qv,
            gap: qv - lb,
            violation: qv - lb > 1e-12,
            p_guess_analytic,
            p_guess_lp: lp,
            local_bound_increased: prev.map(|p| lb > p.local_bound),
            quantum_value_increased: prev.map(|p| qv > p.quantum_value),
            p_guess_lp_decreased: prev.and_then(|p| Some(lp? < p.p_guess_lp?)),
            notes,
        });
    }
    let from3: Vec<&ScanRow> = rows.iter().filter(|r| r.n >= 3).collect();
    let monotonicity = Monotonicity {
        local_bound_increasing: rows.iter().all(|r| r.local_bound_increased != Some(false)),
        quantum_value_increasing: rows.iter().all(|r| r.quantum_value_increased != Some(false)),
        gap_positive_from_3: from3.iter().all(|r| r.violation),
        p_guess_lp_decreasing_from_3: a.lp.then(|| from3.windows(2).all(|w| w[1].p_guess_lp < w[0].p_guess_lp)),
    };

    let text = match a.format {
        Format::Json => report_json(
            "nsqkd/bell-scan",
            ScanConfig { n_min: a.n_min, n_max: a.n_max, lp: a.lp },
            ScanResult { rows, monotonicity },
        ),
        Format::Csv => {
            let opt = |v: Option<bool>| v.map_or(String::new(), |b| b.to_string());
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.n.to_string(),
                        num(r.local_bound),
                        num(r.quantum_value),
                        num(r.gap),
                        r.violation.to_string(),
                        num(r.p_guess_analytic),
                        r.p_guess_lp.map_or(String::new(), num),
                        opt(r.local_bound_increased),
                        opt(r.quantum_value_increased),
                        opt(r.p_guess_lp_decreased),
                        r.notes.join("; "),
                    ]
                })
                .collect();
            csv_text(
                &[
                    "N",
                    "local_bound",
                    "quantum_value",
                    "gap",
                    "violation",
                    "p_guess_analytic",
                    "p_guess_lp",
                    "local_bound_increased",
                    "quantum_value_increased",
                    "p_guess_lp_decreased",
                    "notes",
                ],
                &body,
            )?
        }
    };
    emit(&text, a.output.as_deref(), out)?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct CheckConfig {
    path: String,
    tol: f64,
}

#[derive(Debug, Serialize)]
struct CheckResult {
    parties: usize,
    settings: (usize, usize),
    eve_outcomes: Option<usize>,
    valid: bool,
    max_residual: f64,
    violations: Vec<Violation>,
    /// Absent when the setting counts differ or are below 2.
    chained: Option<ChainedStatistic>,
    local_bound: Option<f64>,
    quantum_value: Option<f64>,
}

fn check_box(a: &CheckBoxArgs, out: &mut dyn Write) -> Result<i32> {
    if !(a.tol >= 0.0 && a.tol.is_finite()) {
        return Err(CliError::Usage(format!("--tol {} must be a finite non-negative number", a.tol)));
    }
    let text = read_text(&a.path)?;
    let b = AnyBox::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.path.display())))?;
    let report = b.validate_ns(a.tol);
    let ab = b.ab();
    let (parties, eve_outcomes) = match &b {
        AnyBox::Bipartite(_) => (2, None),
        AnyBox::Tripartite(t) => (3, Some(t.num_eve_outcomes())),
    };
    let chained = t_exact(&ab).ok();
    let n = chained.as_ref().map(|c| c.n);
    let result = CheckResult {
        parties,
        settings: (ab.num_settings_a(), ab.num_settings_b()),
        eve_outcomes,
        valid: report.is_empty(),
        max_residual: report.max_residual(),
        violations: report.violations,
        chained,
        local_bound: n.map(local_bound),
        quantum_value: n.map(quantum_value),
    };

    let rendered = match a.format {
        TextFormat::Json => {
            report_json("nsqkd/check-box", CheckConfig { path: a.path.display().to_string(), tol: a.tol }, &result)
        }
        TextFormat::Text => check_text(&result, a.tol),
    };
    emit(&rendered, None, out)?;
    Ok(if a.strict && !result.valid { 2 } else { 0 })
}

fn check_text(r: &CheckResult, tol: f64) -> String {
    let mut s = format!("box: {} parties, {}x{} settings", r.parties, r.settings.0, r.settings.1);
    if let Some(ne) = r.eve_outcomes {
        s += &format!(", {ne} Eve outcomes");
    }
    s.push('\n');
    if r.valid {
        s += &format!("no violations (tol {tol:e})\n");
    } else {
        s += &format!("{} violations (tol {tol:e}, max residual {:.3e})\n", r.violations.len(), r.max_residual);
        for v in &r.violations {
            s += &format!("  {v}\n");
        }
    }
    match (&r.chained, r.local_bound, r.quantum_value) {
        (Some(c), Some(lb), Some(qv)) => {
            s += &format!("t = {:.12} (local bound {lb:.12}, quantum value {qv:.12})\n", c.value);
            for note in &c.notes {
                s += &format!("note: {note}\n");
            }
        }
        _ => s += "t: not defined for these setting counts\n",
    }
    s
}

fn export_box(a: &ExportBoxArgs, out: &mut dyn Write) -> Result<i32> {
    let b = parse_target(&a.target, a.n)?;
    let b = if a.visibility == 1.0 { b } else { depolarized(&b, a.visibility)? };
    let mut text = AnyBox::from(b).to_json();
    text.push('\n');
    emit(&text, a.output.as_deref(), out)?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct ParamsConfig {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    epsilon: f64,
    delta: Option<f64>,
    delta_prime: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ParamsResult {
    recommended: ParameterChoice,
    consistency: Option<ConsistencyReport>,
}

fn params(a: &ParamsArgs, out: &mut dyn Write) -> Result<i32> {
    let rec = choose_parameters(a.n)?;
    let m = a.m.unwrap_or(rec.m);
    let epsilon = a.epsilon.unwrap_or(rec.epsilon);
    let consistency = match (a.delta, a.delta_prime) {
        (Some(d), Some(dp)) => Some(consistency_check(a.n, m, epsilon, d, dp)?),
        _ => None,
    };
    let config = ParamsConfig { n: a.n, m, epsilon, delta: a.delta, delta_prime: a.delta_prime };
    let text = report_json("nsqkd/params", config, ParamsResult { recommended: rec, consistency });
    emit(&text, a.output.as_deref(), out)?;
    Ok(0)
}
