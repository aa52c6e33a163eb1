//! Singlet statistics for measurements in the basis family
//! `X_r = {cos(rπ/2N)|0⟩ + sin(rπ/2N)|1⟩, -sin(rπ/2N)|0⟩ + cos(rπ/2N)|1⟩}`.
//!
//! `X_{r+N}` has the same basis states as `X_r` with the outcome labels
//! swapped, so every integer index reduces to a raw basis in `0..N` plus a
//! reversal flag.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{mix, BipartiteBox, TripartiteBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisIndex(pub i64);

impl BasisIndex {
    /// `(raw basis in 0..N, outcomes reversed)` for `r mod 2N`.
    pub fn reduce(self, n: usize) -> (usize, bool) {
        let two_n = 2 * n as i64;
        let r = self.0.rem_euclid(two_n) as usize;
        (r % n, r >= n)
    }

    /// Measurement angle `rπ/(2N)` of the first basis vector.
    pub fn angle(self, n: usize) -> f64 {
        self.0 as f64 * PI / (2.0 * n as f64)
    }
}

impl From<i64> for BasisIndex {
    fn from(r: i64) -> Self {
        Self(r)
    }
}

/// `P(a ≠ b)` for the singlet measured in `X_{r_a}` and `X_{r_b}`, with the
/// reversal convention applied to indices outside `0..N`.
pub fn singlet_anticorr_prob(r_a: BasisIndex, r_b: BasisIndex, n: usize) -> f64 {
    let (xa, rev_a) = r_a.reduce(n);
    let (xb, rev_b) = r_b.reduce(n);
    let v = (BasisIndex(xa as i64 - xb as i64).angle(n)).cos().powi(2);
    if rev_a != rev_b {
        1.0 - v
    } else {
        v
    }
}

/// The honest source: `P(a,b|x,y) = ½cos²Δ` for `a ≠ b` and `½sin²Δ` for
/// `a = b`, where `Δ = (x−y)π/(2N)`.
pub fn singlet_box(n: usize) -> Result<BipartiteBox> {
    if n < 2 {
        return Err(Error::Params(format!("singlet box needs N >= 2, got {n}")));
    }
    BipartiteBox::from_fn(n, n, |a, b, x, y| {
        let anti = singlet_anticorr_prob(BasisIndex(x as i64), BasisIndex(y as i64), n);
        0.5 * if a != b { anti } else { 1.0 - anti }
    })
}

/// `v·box + (1−v)·uniform`. A convenience for robustness experiments.
pub fn depolarized(b: &BipartiteBox, visibility: f64) -> Result<BipartiteBox> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::InvalidValue(format!("visibility {visibility} outside [0,1]")));
    }
    let u = BipartiteBox::uniform(b.num_settings_a(), b.num_settings_b())?;
    mix(&[b.clone(), u], &[visibility, 1.0 - visibility])
}

/// Draws an index with probability proportional to `weights` (assumed to sum
/// to 1). Uses exactly one `f64` from `rng`.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_nonzero = i;
        }
        cum += w;
        if u < cum {
            return i;
        }
    }
    last_nonzero
}

/// One draw of `(a, b)` from `P(·,·|x,y)`.
pub fn sample_outcomes<R: Rng + ?Sized>(b: &BipartiteBox, x: usize, y: usize, rng: &mut R) -> (usize, usize) {
    let i = sample_index(b.cell(x, y), rng);
    (i >> 1, i & 1)
}

/// One draw of `(a, b, e)` from `P(·,·,·|x,y)`.
pub fn sample_tripartite<R: Rng + ?Sized>(t: &TripartiteBox, x: usize, y: usize, rng: &mut R) -> (usize, usize, usize) {
    let ne = t.num_eve_outcomes();
    let i = sample_index(t.cell(x, y), rng);
    let (ab, e) = (i / ne, i % ne);
    (ab >> 1, ab & 1, e)
}
