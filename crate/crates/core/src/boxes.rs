//! Finite-alphabet conditional probability tables ("boxes") for two and three
//! parties, and their no-signalling validation.
//!
//! Alice and Bob always have binary outcomes. Eve has a single measurement with
//! `num_eve_outcomes` outcomes. Tables are stored dense, settings-major:
//! a bipartite entry `P(a,b|x,y)` lives at `((x*nb + y)*2 + a)*2 + b`, and a
//! tripartite entry `P(a,b,e|x,y)` at `(((x*nb + y)*2 + a)*2 + b)*ne + e`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Tolerance for normalization and marginal checks.
pub const NS_TOL: f64 = 1e-9;
/// Entries in `[-CLAMP_TOL, 0)` are rounded to zero on construction.
pub const CLAMP_TOL: f64 = 1e-12;

fn clean_entries(probs: &mut [f64]) -> Result<()> {
    for p in probs.iter_mut() {
        if !p.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite probability {p}")));
        }
        if *p < 0.0 && *p >= -CLAMP_TOL {
            *p = 0.0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    Normalization,
    Positivity,
    /// Bob's marginal P(b|x,y) changes with Alice's setting x.
    BobMarginalDependsOnX,
    /// Alice's marginal P(a|x,y) changes with Bob's setting y.
    AliceMarginalDependsOnY,
    /// P(a,e|x,y) changes with y.
    AliceEveMarginalDependsOnY,
    /// P(b,e|x,y) changes with x.
    BobEveMarginalDependsOnX,
    /// P(e|x,y) changes with (x,y).
    EveMarginalDependsOnSettings,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Normalization => "normalization",
            Self::Positivity => "positivity",
            Self::BobMarginalDependsOnX => "B-marginal depends on x",
            Self::AliceMarginalDependsOnY => "A-marginal depends on y",
            Self::AliceEveMarginalDependsOnY => "AE-marginal depends on y",
            Self::BobEveMarginalDependsOnX => "BE-marginal depends on x",
            Self::EveMarginalDependsOnSettings => "E-marginal depends on settings",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub family: ConstraintFamily,
    /// The indices held fixed for this constraint instance.
    pub indices: BTreeMap<String, usize>,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at ", self.family)?;
        let mut first = true;
        for (k, v) in &self.indices {
            if !first {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
            first = false;
        }
        write!(f, " (residual {:.3e})", self.residual)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.violations.iter().map(|v| v.residual).fold(0.0, f64::max)
    }

    pub fn has(&self, family: ConstraintFamily) -> bool {
        self.violations.iter().any(|v| v.family == family)
    }

    fn push(&mut self, family: ConstraintFamily, idx: &[(&str, usize)], residual: f64) {
        self.violations.push(Violation {
            family,
            indices: idx.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            residual,
        });
    }
}

/// `P(a,b|x,y)` for binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteBox {
    na: usize,
    nb: usize,
    probs: Vec<f64>,
}

impl BipartiteBox {
    /// Wraps a dense table. Shape and finiteness are checked here; the
    /// probabilistic constraints are left to [`BipartiteBox::validate_ns`].
    pub fn new(num_settings_a: usize, num_settings_b: usize, mut probs: Vec<f64>) -> Result<Self> {
        if num_settings_a == 0 || num_settings_b == 0 {
            return Err(Error::Dimension("setting counts must be positive".into()));
        }
        let expected = num_settings_a * num_settings_b * 4;
        if probs.len() != expected {
            return Err(Error::Dimension(format!(
                "bipartite table for {num_settings_a}x{num_settings_b} settings needs {expected} entries, got {}",
                probs.len()
            )));
        }
        clean_entries(&mut probs)?;
        Ok(Self { na: num_settings_a, nb: num_settings_b, probs })
    }

    /// Builds a box from `f(a, b, x, y)`.
    pub fn from_fn(na: usize, nb: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut probs = Vec::with_capacity(na * nb * 4);
        for x in 0..na {
            for y in 0..nb {
                for a in 0..2 {
                    for b in 0..2 {
                        probs.push(f(a, b, x, y));
                    }
                }
            }
        }
        Self::new(na, nb, probs)
    }

    pub fn uniform(na: usize, nb: usize) -> Result<Self> {
        Self::from_fn(na, nb, |_, _, _, _| 0.25)
    }

    pub fn num_settings_a(&self) -> usize {
        self.na
    }

    pub fn num_settings_b(&self) -> usize {
        self.nb
    }

    /// The common setting count N, if both parties have the same number.
    pub fn settings(&self) -> Option<usize> {
        (self.na == self.nb).then_some(self.na)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize, x: usize, y: usize) -> usize {
        ((x * self.nb + y) * 2 + a) * 2 + b
    }

    #[inline]
    pub fn p(&self, a: usize, b: usize, x: usize, y: usize) -> f64 {
        self.probs[self.index(a, b, x, y)]
    }

    /// The four entries `[P(00), P(01), P(10), P(11)]` for settings (x, y).
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(0, 0, x, y);
        &self.probs[i..i + 4]
    }

    pub fn p_anticorrelated(&self, x: usize, y: usize) -> f64 {
        self.p(0, 1, x, y) + self.p(1, 0, x, y)
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    pub fn validate_ns(&self, tol: f64) -> ValidationReport {
        let mut r = ValidationReport::default();
        for x in 0..self.na {
            for y in 0..self.nb {
                let s: f64 = self.cell(x, y).iter().sum();
                if (s - 1.0).abs() > tol {
                    r.push(ConstraintFamily::Normalization, &[("x", x), ("y", y)], (s - 1.0).abs());
                }
                for a in 0..2 {
                    for b in 0..2 {
                        let p = self.p(a, b, x, y);
                        if p < -tol {
                            r.push(ConstraintFamily::Positivity, &[("a", a), ("b", b), ("x", x), ("y", y)], -p);
                        }
                    }
                }
            }
        }
        for y in 0..self.nb {
            for b in 0..2 {
                let m0 = self.p(0, b, 0, y) + self.p(1, b, 0, y);
                for x in 1..self.na {
                    let d = (self.p(0, b, x, y) + self.p(1, b, x, y) - m0).abs();
                    if d > tol {
                        r.push(ConstraintFamily::BobMarginalDependsOnX, &[("b", b), ("x", x), ("y", y)], d);
                    }
                }
            }
        }
        for x in 0..self.na {
            for a in 0..2 {
                let m0 = self.p(a, 0, x, 0) + self.p(a, 1, x, 0);
                for y in 1..self.nb {
                    let d = (self.p(a, 0, x, y) + self.p(a, 1, x, y) - m0).abs();
                    if d > tol {
                        r.push(ConstraintFamily::AliceMarginalDependsOnY, &[("a", a), ("x", x), ("y", y)], d);
                    }
                }
            }
        }
        r
    }
}

/// `P(a,b,e|x,y)`: Alice and Bob binary, Eve with one fixed measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TripartiteBox {
    na: usize,
    nb: usize,
    ne: usize,
    probs: Vec<f64>,
}

impl TripartiteBox {
    pub fn new(
        num_settings_a: usize,
        num_settings_b: usize,
        num_eve_outcomes: usize,
        mut probs: Vec<f64>,
    ) -> Result<Self> {
        if num_settings_a == 0 || num_settings_b == 0 || num_eve_outcomes == 0 {
            return Err(Error::Dimension("setting and outcome counts must be positive".into()));
        }
        let expected = num_settings_a * num_settings_b * 4 * num_eve_outcomes;
        if probs.len() != expected {
            return Err(Error::Dimension(format!("tripartite table needs {expected} entries, got {}", probs.len())));
        }
        clean_entries(&mut probs)?;
        Ok(Self { na: num_settings_a, nb: num_settings_b, ne: num_eve_outcomes, probs })
    }

    pub fn from_fn(
        na: usize,
        nb: usize,
        ne: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut probs = Vec::with_capacity(na * nb * 4 * ne);
        for x in 0..na {
            for y in 0..nb {
                for a in 0..2 {
                    for b in 0..2 {
                        for e in 0..ne {
                            probs.push(f(a, b, e, x, y));
                        }
                    }
                }
            }
        }
        Self::new(na, nb, ne, probs)
    }

    /// `Q(a,b|x,y) * r(e)`: Eve's outcome is independent of everything.
    pub fn product(ab: &BipartiteBox, eve: &[f64]) -> Result<Self> {
        Self::from_fn(ab.na, ab.nb, eve.len(), |a, b, e, x, y| ab.p(a, b, x, y) * eve[e])
    }

    pub fn num_settings_a(&self) -> usize {
        self.na
    }

    pub fn num_settings_b(&self) -> usize {
        self.nb
    }

    pub fn num_eve_outcomes(&self) -> usize {
        self.ne
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize, e: usize, x: usize, y: usize) -> usize {
        (((x * self.nb + y) * 2 + a) * 2 + b) * self.ne + e
    }

    #[inline]
    pub fn p(&self, a: usize, b: usize, e: usize, x: usize, y: usize) -> f64 {
        self.probs[self.index(a, b, e, x, y)]
    }

    /// All `4 * ne` entries for settings (x, y), ordered (a, b, e).
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(0, 0, 0, x, y);
        &self.probs[i..i + 4 * self.ne]
    }

    pub fn validate_ns(&self, tol: f64) -> ValidationReport {
        let mut r = ValidationReport::default();
        let ne = self.ne;
        for x in 0..self.na {
            for y in 0..self.nb {
                let s: f64 = self.cell(x, y).iter().sum();
                if (s - 1.0).abs() > tol {
                    r.push(ConstraintFamily::Normalization, &[("x", x), ("y", y)], (s - 1.0).abs());
                }
                for a in 0..2 {
                    for b in 0..2 {
                        for e in 0..ne {
                            let p = self.p(a, b, e, x, y);
                            if p < -tol {
                                r.push(
                                    ConstraintFamily::Positivity,
                                    &[("a", a), ("b", b), ("e", e), ("x", x), ("y", y)],
                                    -p,
                                );
                            }
                        }
                    }
                }
            }
        }
        let ae = |a: usize, e: usize, x: usize, y: usize| self.p(a, 0, e, x, y) + self.p(a, 1, e, x, y);
        let be = |b: usize, e: usize, x: usize, y: usize| self.p(0, b, e, x, y) + self.p(1, b, e, x, y);
        for x in 0..self.na {
            for a in 0..2 {
                for e in 0..ne {
                    let m0 = ae(a, e, x, 0);
                    for y in 1..self.nb {
                        let d = (ae(a, e, x, y) - m0).abs();
                        if d > tol {
                            r.push(
                                ConstraintFamily::AliceEveMarginalDependsOnY,
                                &[("a", a), ("e", e), ("x", x), ("y", y)],
                                d,
                            );
                        }
                    }
                }
            }
        }
        for y in 0..self.nb {
            for b in 0..2 {
                for e in 0..ne {
                    let m0 = be(b, e, 0, y);
                    for x in 1..self.na {
                        let d = (be(b, e, x, y) - m0).abs();
                        if d > tol {
                            r.push(
                                ConstraintFamily::BobEveMarginalDependsOnX,
                                &[("b", b), ("e", e), ("x", x), ("y", y)],
                                d,
                            );
                        }
                    }
                }
            }
        }
        for e in 0..ne {
            let pe = |x, y| ae(0, e, x, y) + ae(1, e, x, y);
            let m0 = pe(0, 0);
            for x in 0..self.na {
                for y in 0..self.nb {
                    let d = (pe(x, y) - m0).abs();
                    if d > tol {
                        r.push(ConstraintFamily::EveMarginalDependsOnSettings, &[("e", e), ("x", x), ("y", y)], d);
                    }
                }
            }
        }
        r
    }

    /// `P(e)`, read at settings (0, 0).
    pub fn eve_marginal(&self) -> Vec<f64> {
        (0..self.ne).map(|e| (0..4).map(|ab| self.p(ab >> 1, ab & 1, e, 0, 0)).sum()).collect()
    }

    /// Mixes tripartite boxes of identical shape.
    pub fn mix(boxes: &[TripartiteBox], weights: &[f64]) -> Result<Self> {
        let first = check_mixture(boxes, weights, |b| (b.na, b.nb, b.ne))?;
        let probs = mix_tables(boxes.iter().map(|b| b.probs.as_slice()), weights, first.probs.len());
        Self::new(first.na, first.nb, first.ne, probs)
    }
}

/// Marginalizes Eve out: `P(a,b|x,y) = Σ_e P(a,b,e|x,y)`.
pub fn ab_marginal(t: &TripartiteBox) -> BipartiteBox {
    let probs = t.probs.chunks_exact(t.ne).map(|c| c.iter().sum()).collect();
    BipartiteBox { na: t.na, nb: t.nb, probs }
}

/// Local deterministic strategy: each party's outcome is a fixed function of
/// its own setting.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicLocalBox {
    assignment_a: Vec<u8>,
    assignment_b: Vec<u8>,
}

impl DeterministicLocalBox {
    pub fn new(assignment_a: Vec<u8>, assignment_b: Vec<u8>) -> Result<Self> {
        if assignment_a.is_empty() || assignment_b.is_empty() {
            return Err(Error::Dimension("assignments must be non-empty".into()));
        }
        if assignment_a.iter().chain(&assignment_b).any(|&v| v > 1) {
            return Err(Error::InvalidValue("assignment entries must be 0 or 1".into()));
        }
        Ok(Self { assignment_a, assignment_b })
    }

    /// Parses bit strings such as `"010"`.
    pub fn from_bits(a: &str, b: &str) -> Result<Self> {
        let parse = |s: &str| -> Result<Vec<u8>> {
            s.chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    _ => Err(Error::InvalidValue(format!("assignment {s:?} must be a string of 0/1"))),
                })
                .collect()
        };
        Self::new(parse(a)?, parse(b)?)
    }

    /// Enumerates all `2^N * 2^N` deterministic boxes with N settings per party.
    pub fn enumerate(n: usize) -> impl Iterator<Item = DeterministicLocalBox> {
        let bits = move |mask: usize| (0..n).map(|i| ((mask >> i) & 1) as u8).collect::<Vec<u8>>();
        (0..1usize << n).flat_map(move |ma| {
            (0..1usize << n).map(move |mb| DeterministicLocalBox { assignment_a: bits(ma), assignment_b: bits(mb) })
        })
    }

    pub fn assignment_a(&self) -> &[u8] {
        &self.assignment_a
    }

    pub fn assignment_b(&self) -> &[u8] {
        &self.assignment_b
    }

    pub fn a(&self, x: usize) -> usize {
        self.assignment_a[x] as usize
    }

    pub fn b(&self, y: usize) -> usize {
        self.assignment_b[y] as usize
    }

    pub fn to_box(&self) -> BipartiteBox {
        BipartiteBox::from_fn(self.assignment_a.len(), self.assignment_b.len(), |a, b, x, y| {
            f64::from(u8::from(a == self.a(x) && b == self.b(y)))
        })
        .expect("assignment lengths are positive")
    }

    pub fn bits_a(&self) -> String {
        self.assignment_a.iter().map(|v| if *v == 0 { '0' } else { '1' }).collect()
    }

    pub fn bits_b(&self) -> String {
        self.assignment_b.iter().map(|v| if *v == 0 { '0' } else { '1' }).collect()
    }
}

pub fn deterministic_box(assignment_a: &[u8], assignment_b: &[u8]) -> Result<BipartiteBox> {
    Ok(DeterministicLocalBox::new(assignment_a.to_vec(), assignment_b.to_vec())?.to_box())
}

fn check_mixture<'a, T, S: PartialEq + fmt::Debug>(
    boxes: &'a [T],
    weights: &[f64],
    shape: impl Fn(&T) -> S,
) -> Result<&'a T> {
    let first = boxes.first().ok_or_else(|| Error::InvalidValue("mixture needs at least one box".into()))?;
    if boxes.len() != weights.len() {
        return Err(Error::Dimension(format!("{} boxes but {} weights", boxes.len(), weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidValue(format!("mixture weight {w} is negative")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NS_TOL {
        return Err(Error::InvalidValue(format!("mixture weights sum to {total}, not 1")));
    }
    let s0 = shape(first);
    if let Some(b) = boxes.iter().find(|b| shape(b) != s0) {
        return Err(Error::Dimension(format!("box shape {:?} differs from {s0:?}", shape(b))));
    }
    Ok(first)
}

fn mix_tables<'a>(tables: impl Iterator<Item = &'a [f64]>, weights: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (t, w) in tables.zip(weights) {
        for (o, p) in out.iter_mut().zip(t) {
            *o += w * p;
        }
    }
    out
}

/// Entrywise convex combination.
pub fn mix(boxes: &[BipartiteBox], weights: &[f64]) -> Result<BipartiteBox> {
    let first = check_mixture(boxes, weights, |b| (b.na, b.nb))?;
    let probs = mix_tables(boxes.iter().map(|b| b.probs.as_slice()), weights, first.probs.len());
    BipartiteBox::new(first.na, first.nb, probs)
}

/// Either kind of box, as read from or written to a box file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyBox {
    Bipartite(BipartiteBox),
    Tripartite(TripartiteBox),
}

impl AnyBox {
    pub fn validate_ns(&self, tol: f64) -> ValidationReport {
        match self {
            Self::Bipartite(b) => b.validate_ns(tol),
            Self::Tripartite(t) => t.validate_ns(tol),
        }
    }

    /// The Alice–Bob correlations (Eve marginalized out when present).
    pub fn ab(&self) -> BipartiteBox {
        match self {
            Self::Bipartite(b) => b.clone(),
            Self::Tripartite(t) => ab_marginal(t),
        }
    }
}

/// On-disk layout: `probs` is nested settings-major then outcomes-major, i.e.
/// `probs[x][y][a][b]` for two parties and `probs[x][y][z][a][b][e]` for three
/// (Eve's single setting `z = 0`).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoxFile {
    parties: usize,
    settings: Vec<usize>,
    outcomes: Vec<usize>,
    probs: Value,
}

fn nest(flat: &[f64], shape: &[usize]) -> Value {
    match shape.split_first() {
        None => Value::from(flat[0]),
        Some((&len, rest)) => {
            let stride: usize = rest.iter().product();
            Value::Array((0..len).map(|i| nest(&flat[i * stride..(i + 1) * stride], rest)).collect())
        }
    }
}

fn flatten(v: &Value, shape: &[usize], path: &mut String, out: &mut Vec<f64>) -> Result<()> {
    match shape.split_first() {
        None => {
            let p = v.as_f64().ok_or_else(|| Error::Dimension(format!("{path} must be a number, found {v}")))?;
            out.push(p);
        }
        Some((&len, rest)) => {
            let arr = v.as_array().ok_or_else(|| Error::Dimension(format!("{path} must be an array")))?;
            if arr.len() != len {
                return Err(Error::Dimension(format!("{path} has length {}, expected {len}", arr.len())));
            }
            for (i, item) in arr.iter().enumerate() {
                let mark = path.len();
                path.push_str(&format!("[{i}]"));
                flatten(item, rest, path, out)?;
                path.truncate(mark);
            }
        }
    }
    Ok(())
}

impl AnyBox {
    fn to_file(&self) -> BoxFile {
        match self {
            Self::Bipartite(b) => BoxFile {
                parties: 2,
                settings: vec![b.na, b.nb],
                outcomes: vec![2, 2],
                probs: nest(&b.probs, &[b.na, b.nb, 2, 2]),
            },
            Self::Tripartite(t) => BoxFile {
                parties: 3,
                settings: vec![t.na, t.nb, 1],
                outcomes: vec![2, 2, t.ne],
                probs: nest(&t.probs, &[t.na, t.nb, 1, 2, 2, t.ne]),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("box file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: BoxFile = serde_json::from_str(text)?;
        let mut probs = Vec::new();
        let mut path = String::from("probs");
        match (f.parties, f.settings.as_slice(), f.outcomes.as_slice()) {
            (2, &[na, nb], &[2, 2]) => {
                flatten(&f.probs, &[na, nb, 2, 2], &mut path, &mut probs)?;
                Ok(Self::Bipartite(BipartiteBox::new(na, nb, probs)?))
            }
            (3, &[na, nb, 1], &[2, 2, ne]) => {
                flatten(&f.probs, &[na, nb, 1, 2, 2, ne], &mut path, &mut probs)?;
                Ok(Self::Tripartite(TripartiteBox::new(na, nb, ne, probs)?))
            }
            (p, s, o) => Err(Error::Dimension(format!(
                "unsupported box header: parties={p}, settings={s:?}, outcomes={o:?} \
                 (expected 2 parties with binary outcomes, or 3 with Eve having one setting)"
            ))),
        }
    }
}

impl From<BipartiteBox> for AnyBox {
    fn from(b: BipartiteBox) -> Self {
        Self::Bipartite(b)
    }
}

impl From<TripartiteBox> for AnyBox {
    fn from(t: TripartiteBox) -> Self {
        Self::Tripartite(t)
    }
}
