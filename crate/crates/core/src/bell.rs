//! The chained Bell statistic
//!
//! ```text
//! t = 1/(3N) Σ_{c∈{-1,0,1}} Σ_{i=0}^{N-1} P(a ≠ b | X_i, X_{i+c})
//! ```
//!
//! where `X_{-1}` and `X_N` are `X_{N-1}` and `X_0` with Bob's outcome labels
//! swapped. Local models satisfy `t ≤ 1 − 2/(3N)`; the singlet reaches
//! `1 − (2/3)sin²(π/2N)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::boxes::BipartiteBox;
use crate::error::{Error, Result};

/// One of the `3N` terms of the statistic: Alice measures `X_i`, Bob `X_{i+c}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainCell {
    pub i: usize,
    pub c: i8,
    /// Alice's setting (`= i`).
    pub x: usize,
    /// Bob's raw setting, `(i + c) mod N`.
    pub y: usize,
    /// Bob's outcome labels are swapped (`i + c` wrapped around).
    pub reversed: bool,
}

impl ChainCell {
    pub fn new(i: usize, c: i8, n: usize) -> Self {
        let raw = i as i64 + i64::from(c);
        Self { i, c, x: i, y: raw.rem_euclid(n as i64) as usize, reversed: raw < 0 || raw >= n as i64 }
    }

    /// Bob's outcome as read in the cell's basis convention.
    pub fn bob_label(&self, b: usize) -> usize {
        b ^ usize::from(self.reversed)
    }

    /// Whether raw outcomes `(a, b)` count as anticorrelated in this cell.
    pub fn anticorrelated(&self, a: usize, b: usize) -> bool {
        a != self.bob_label(b)
    }

    pub fn p_anticorrelated(&self, b: &BipartiteBox) -> f64 {
        let raw = b.p_anticorrelated(self.x, self.y);
        if self.reversed {
            1.0 - raw
        } else {
            raw
        }
    }
}

/// All `3N` cells, ordered by `i` then `c = -1, 0, 1`.
pub fn chain_cells(n: usize) -> Vec<ChainCell> {
    (0..n).flat_map(|i| [-1i8, 0, 1].into_iter().map(move |c| ChainCell::new(i, c, n))).collect()
}

/// The cells whose settings are `(x, y)`. Empty unless the bases are
/// neighbouring or identical; two cells for the wrap-around pair at `N = 2`.
pub fn cells_for_pair(x: usize, y: usize, n: usize) -> impl Iterator<Item = ChainCell> {
    [-1i8, 0, 1].into_iter().map(move |c| ChainCell::new(x, c, n)).filter(move |cell| cell.y == y)
}

/// The cell the protocol uses for a pair of settings: the unreversed one when a
/// pair matches two cells (only possible at `N = 2`).
pub fn protocol_cell(x: usize, y: usize, n: usize) -> Option<ChainCell> {
    cells_for_pair(x, y, n).min_by_key(|cell| cell.reversed)
}

pub fn local_bound(n: usize) -> f64 {
    1.0 - 2.0 / (3.0 * n as f64)
}

/// The singlet value of the statistic in this basis family.
pub fn quantum_value(n: usize) -> f64 {
    1.0 - (2.0 / 3.0) * (PI / (2.0 * n as f64)).sin().powi(2)
}

pub fn no_violation_note(n: usize) -> Option<String> {
    (n <= 2).then(|| format!("no quantum violation at N={n}: quantum value equals the local bound"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticSource {
    ExactFromBox,
    EmpiricalFromTranscript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub i: usize,
    pub c: i8,
    pub count: u64,
    pub anticorrelated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainedStatistic {
    #[serde(rename = "N")]
    pub n: usize,
    pub value: f64,
    pub source: StatisticSource,
    pub sample_count: u64,
    /// Binomial standard error of an empirical value; zero when exact.
    pub std_error: f64,
    pub per_cell_counts: Vec<CellCount>,
    /// Cells with no samples, left out of the average.
    pub empty_cells: Vec<(usize, i8)>,
    pub notes: Vec<String>,
}

fn square_settings(b: &BipartiteBox) -> Result<usize> {
    let n = b.settings().ok_or_else(|| Error::Dimension("chained statistic needs equal setting counts".into()))?;
    if n < 2 {
        return Err(Error::Params(format!("chained statistic needs N >= 2, got {n}")));
    }
    Ok(n)
}

pub fn t_exact(b: &BipartiteBox) -> Result<ChainedStatistic> {
    let n = square_settings(b)?;
    let sum: f64 = chain_cells(n).iter().map(|cell| cell.p_anticorrelated(b)).sum();
    Ok(ChainedStatistic {
        n,
        value: sum / (3 * n) as f64,
        source: StatisticSource::ExactFromBox,
        sample_count: 0,
        std_error: 0.0,
        per_cell_counts: Vec::new(),
        empty_cells: Vec::new(),
        notes: no_violation_note(n).into_iter().collect(),
    })
}

/// Estimates `t` from observed `(x, y, a, b)` records (raw outcome labels).
///
/// Each cell's anticorrelation frequency is estimated separately and the
/// non-empty cells are averaged with equal weight. Records whose settings are
/// not neighbouring or identical are ignored.
pub fn t_empirical(
    n: usize,
    records: impl IntoIterator<Item = (usize, usize, usize, usize)>,
) -> Result<ChainedStatistic> {
    if n < 2 {
        return Err(Error::Params(format!("chained statistic needs N >= 2, got {n}")));
    }
    let cells = chain_cells(n);
    let mut counts: Vec<CellCount> =
        cells.iter().map(|c| CellCount { i: c.i, c: c.c, count: 0, anticorrelated: 0 }).collect();
    let mut used = 0u64;
    for (x, y, a, b) in records {
        if x >= n || y >= n {
            return Err(Error::Dimension(format!("record settings ({x},{y}) out of range for N={n}")));
        }
        let mut any = false;
        for cell in cells_for_pair(x, y, n) {
            let k = 3 * cell.i + (cell.c + 1) as usize;
            counts[k].count += 1;
            counts[k].anticorrelated += u64::from(cell.anticorrelated(a, b));
            any = true;
        }
        used += u64::from(any);
    }
    if used == 0 {
        return Err(Error::EmptyStatistic);
    }
    let mut freq_sum = 0.0;
    let mut var_sum = 0.0;
    let mut filled = 0usize;
    let mut empty_cells = Vec::new();
    for cc in &counts {
        if cc.count == 0 {
            empty_cells.push((cc.i, cc.c));
            continue;
        }
        let p = cc.anticorrelated as f64 / cc.count as f64;
        freq_sum += p;
        var_sum += p * (1.0 - p) / cc.count as f64;
        filled += 1;
    }
    let mut notes: Vec<String> = no_violation_note(n).into_iter().collect();
    if !empty_cells.is_empty() {
        notes.push(format!("{} of {} cells had no samples and were excluded", empty_cells.len(), 3 * n));
    }
    Ok(ChainedStatistic {
        n,
        value: freq_sum / filled as f64,
        source: StatisticSource::EmpiricalFromTranscript,
        sample_count: used,
        std_error: var_sum.sqrt() / filled as f64,
        per_cell_counts: counts,
        empty_cells,
        notes,
    })
}
