//! Strategy and target mini-language.
//!
//! ```text
//! honest                       genuine singlets
//! uniform                      P(a,b|x,y) = 1/4
//! det:a=010,b=111[,guess=a1]   deterministic local assignment (Eve's outcome = a(1))
//! lhv:<path>                   LHV mixture file
//! box:<path>                   box file (bipartite or tripartite)
//! ```

use std::fs;
use std::path::Path;

use serde::Deserialize;

use nsqkd_core::attacks::{EveStrategy, GuessRule};
use nsqkd_core::boxes::{AnyBox, BipartiteBox, DeterministicLocalBox, TripartiteBox};
use nsqkd_core::quantum::singlet_box;

use crate::CliError;

fn parse_guess(s: &str) -> Result<GuessRule, CliError> {
    let (party, idx) = s.split_at(1);
    let idx: usize = idx.parse().map_err(|_| CliError::Usage(format!("guess rule {s:?} must look like a0 or b2")))?;
    match party {
        "a" => Ok(GuessRule::AliceAt(idx)),
        "b" => Ok(GuessRule::BobAt(idx)),
        _ => Err(CliError::Usage(format!("guess rule {s:?} must start with a or b"))),
    }
}

/// Parses the body of `det:a=...,b=...[,guess=...]`.
pub fn parse_det(body: &str) -> Result<(DeterministicLocalBox, GuessRule), CliError> {
    let (mut a, mut b, mut guess) = (None, None, GuessRule::AliceAt(0));
    for part in body.split(',') {
        match part.split_once('=') {
            Some(("a", v)) => a = Some(v),
            Some(("b", v)) => b = Some(v),
            Some(("guess", v)) => guess = parse_guess(v)?,
            _ => return Err(CliError::Usage(format!("bad det field {part:?}; expected a=..., b=..., guess=..."))),
        }
    }
    let (Some(a), Some(b)) = (a, b) else {
        return Err(CliError::Usage("det: needs both a=... and b=...".into()));
    };
    let d = DeterministicLocalBox::from_bits(a, b).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((d, guess))
}

#[derive(Debug, Deserialize)]
struct LhvComponent {
    a: String,
    b: String,
    weight: f64,
}

#[derive(Debug, Deserialize)]
struct LhvFile {
    components: Vec<LhvComponent>,
    #[serde(default)]
    eve_knows_component: bool,
    #[serde(default)]
    guess: Option<String>,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn read_box(path: &Path) -> Result<AnyBox, CliError> {
    let text = read_text(path)?;
    AnyBox::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_lhv(path: &Path) -> Result<EveStrategy, CliError> {
    let text = read_text(path)?;
    let f: LhvFile = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let guess = f.guess.as_deref().map(parse_guess).transpose()?.unwrap_or(GuessRule::AliceAt(0));
    let mut comps = Vec::new();
    let mut weights = Vec::new();
    for c in f.components {
        comps.push(DeterministicLocalBox::from_bits(&c.a, &c.b).map_err(|e| CliError::Data(e.to_string()))?);
        weights.push(c.weight);
    }
    EveStrategy::lhv_mixture(comps, weights, f.eve_knows_component, guess).map_err(|e| CliError::Data(e.to_string()))
}

fn strategy_from_box(b: AnyBox) -> Result<EveStrategy, CliError> {
    let t = match b {
        AnyBox::Tripartite(t) => t,
        AnyBox::Bipartite(ab) => TripartiteBox::product(&ab, &[1.0, 0.0]).map_err(|e| CliError::Data(e.to_string()))?,
    };
    EveStrategy::explicit(t).map_err(|e| CliError::Data(e.to_string()))
}

/// Resolves a `--strategy` value for `n` settings.
pub fn parse_strategy(spec: &str, n: usize) -> Result<EveStrategy, CliError> {
    let s = match spec.split_once(':') {
        None if spec == "honest" => EveStrategy::honest(n).map_err(|e| CliError::Usage(e.to_string()))?,
        None if spec == "uniform" => strategy_from_box(AnyBox::Bipartite(
            BipartiteBox::uniform(n, n).map_err(|e| CliError::Usage(e.to_string()))?,
        ))?,
        Some(("det", body)) => {
            let (d, guess) = parse_det(body)?;
            EveStrategy::deterministic(d, guess).map_err(|e| CliError::Usage(e.to_string()))?
        }
        Some(("lhv", path)) => load_lhv(Path::new(path))?,
        Some(("box", path)) => strategy_from_box(read_box(Path::new(path))?)?,
        _ => {
            return Err(CliError::Usage(format!(
                "unknown strategy {spec:?}; expected honest, uniform, det:a=..,b=.., lhv:<file> or box:<file>"
            )))
        }
    };
    if s.n() != n {
        return Err(CliError::Usage(format!("strategy has {} settings but --N is {n}", s.n())));
    }
    Ok(s)
}

/// Resolves an attack target: `singlet`, `uniform`, `det:...` or `file:<path>`
/// (a tripartite file contributes its Alice–Bob marginal).
pub fn parse_target(spec: &str, n: usize) -> Result<BipartiteBox, CliError> {
    let b = match spec.split_once(':') {
        None if spec == "singlet" => singlet_box(n).map_err(|e| CliError::Usage(e.to_string()))?,
        None if spec == "uniform" => BipartiteBox::uniform(n, n).map_err(|e| CliError::Usage(e.to_string()))?,
        Some(("det", body)) => parse_det(body)?.0.to_box(),
        Some(("file" | "box", path)) => read_box(Path::new(path))?.ab(),
        _ => {
            return Err(CliError::Usage(format!(
                "unknown target {spec:?}; expected singlet, uniform, det:a=..,b=.. or file:<path>"
            )))
        }
    };
    if b.settings() != Some(n) {
        return Err(CliError::Usage(format!(
            "target has {}x{} settings but --N is {n}",
            b.num_settings_a(),
            b.num_settings_b()
        )));
    }
    Ok(b)
}
