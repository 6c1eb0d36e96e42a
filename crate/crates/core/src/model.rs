//! Domain types for the permuted block-constant rating model.
//!
//! An instance is an `n x n` binary matrix `X` built from an `r x r` table of
//! block values. Rows are split into `r` user blocks and columns into `r` item
//! blocks, every block holding exactly `k` indices, and `X(p, q)` is the value
//! of the block pair containing `(p, q)`. The observed matrix `Y` is `X` passed
//! through a binary symmetric channel and an erasure channel, so each entry is
//! `0`, `1` or `*`.
//!
//! Indices are 0-based everywhere in this crate and in every machine-readable
//! output. Mathematical write-ups usually number users and items from 1; row
//! `0` here is "user 1" there.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Full parameterisation of one synthetic instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    n: usize,
    k: usize,
    r: usize,
    p: f64,
    epsilon: f64,
}

impl ModelParams {
    /// Validates `n = r * k`, `p` in `[0, 1/2)` and `epsilon` in `[0, 1)`.
    pub fn new(n: usize, k: usize, r: usize, p: f64, epsilon: f64) -> Result<Self> {
        if n == 0 || k == 0 || r == 0 {
            return Err(invalid(format!(
                "n, k and r must be positive (n = {n}, k = {k}, r = {r})"
            )));
        }
        if r.checked_mul(k) != Some(n) {
            return Err(invalid(format!("n = r·k violated: n = {n}, r = {r}, k = {k}")));
        }
        if !(0.0..0.5).contains(&p) {
            return Err(invalid(format!("p must lie in [0, 1/2), got {p}")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(invalid(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        Ok(Self { n, k, r, p, epsilon })
    }

    /// Same as [`ModelParams::new`] with `r` derived as `n / k`.
    pub fn from_cluster_size(n: usize, k: usize, p: f64, epsilon: f64) -> Result<Self> {
        if k == 0 || n % k != 0 {
            return Err(invalid(format!(
                "n = r·k violated: cluster size k = {k} does not divide n = {n}"
            )));
        }
        Self::new(n, k, n / k, p, epsilon)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Erasure scaling `epsilon = 1 - c / n^alpha` together with the cluster
/// exponent `beta` in `k ≈ n^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRegime {
    alpha: f64,
    c: f64,
    cluster_exponent: f64,
}

impl ScalingRegime {
    pub fn new(alpha: f64, c: f64, cluster_exponent: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("c must be a positive real, got {c}")));
        }
        if !cluster_exponent.is_finite() {
            return Err(invalid("cluster exponent must be finite"));
        }
        Ok(Self {
            alpha,
            c,
            cluster_exponent,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn cluster_exponent(&self) -> f64 {
        self.cluster_exponent
    }

    /// `gamma = alpha - beta`.
    pub fn gamma(&self) -> f64 {
        self.alpha - self.cluster_exponent
    }
}

/// One of the three symbols of the observed alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entry {
    Zero,
    One,
    Erased,
}

impl Entry {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Entry::One
        } else {
            Entry::Zero
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Entry::Zero => '0',
            Entry::One => '1',
            Entry::Erased => '*',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '0' => Some(Entry::Zero),
            '1' => Some(Entry::One),
            '*' => Some(Entry::Erased),
            _ => None,
        }
    }
}

/// Block values plus the balanced row/column block assignments that define `X`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    n: usize,
    k: usize,
    r: usize,
    /// Row-major `r x r`.
    block_values: Vec<bool>,
    row_block: Vec<usize>,
    col_block: Vec<usize>,
}

impl GroundTruth {
    /// Checks that both assignments are balanced: every block index in
    /// `0..r` appears exactly `k = n / r` times.
    pub fn new(
        r: usize,
        block_values: Vec<bool>,
        row_block: Vec<usize>,
        col_block: Vec<usize>,
    ) -> Result<Self> {
        let n = row_block.len();
        if r == 0 || n == 0 {
            return Err(invalid("ground truth needs r >= 1 and n >= 1"));
        }
        if block_values.len() != r * r {
            return Err(invalid(format!(
                "block_values must hold r·r = {} entries, got {}",
                r * r,
                block_values.len()
            )));
        }
        if col_block.len() != n {
            return Err(invalid(format!(
                "rectangular truth rejected: {} row assignments vs {} column assignments",
                n,
                col_block.len()
            )));
        }
        if n % r != 0 {
            return Err(invalid(format!("n = r·k violated: n = {n}, r = {r}")));
        }
        let k = n / r;
        for (name, assignment) in [("row_block", &row_block), ("col_block", &col_block)] {
            let mut counts = vec![0usize; r];
            for &b in assignment.iter() {
                if b >= r {
                    return Err(invalid(format!("{name} uses block {b} but r = {r}")));
                }
                counts[b] += 1;
            }
            if let Some(b) = counts.iter().position(|&c| c != k) {
                return Err(invalid(format!(
                    "{name} is unbalanced: block {b} holds {} indices, expected k = {k}",
                    counts[b]
                )));
            }
        }
        Ok(Self {
            n,
            k,
            r,
            block_values,
            row_block,
            col_block,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn row_block(&self) -> &[usize] {
        &self.row_block
    }

    pub fn col_block(&self) -> &[usize] {
        &self.col_block
    }

    pub fn block_value(&self, row_block: usize, col_block: usize) -> bool {
        self.block_values[row_block * self.r + col_block]
    }

    pub fn block_values(&self) -> &[bool] {
        &self.block_values
    }

    /// `X(row, col)`.
    pub fn reconstruct_entry(&self, row: usize, col: usize) -> Result<bool> {
        if row >= self.n {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: row,
                limit: self.n,
            });
        }
        if col >= self.n {
            return Err(Error::IndexOutOfRange {
                what: "col",
                index: col,
                limit: self.n,
            });
        }
        Ok(self.value(row, col))
    }

    #[inline]
    pub(crate) fn value(&self, row: usize, col: usize) -> bool {
        self.block_value(self.row_block[row], self.col_block[col])
    }

    /// Whether two rows belong to the same user block.
    pub fn same_row_block(&self, a: usize, b: usize) -> bool {
        self.row_block[a] == self.row_block[b]
    }

    /// Materialised `X`, row by row.
    pub fn materialize(&self) -> Vec<Vec<bool>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.value(i, j)).collect())
            .collect()
    }

    pub fn to_dump(&self) -> GroundTruthDump {
        GroundTruthDump {
            n: self.n,
            r: self.r,
            block_values: self
                .block_values
                .chunks(self.r)
                .map(|row| row.iter().map(|&b| b as u8).collect())
                .collect(),
            row_block: self.row_block.clone(),
            col_block: self.col_block.clone(),
        }
    }

    pub fn from_dump(dump: &GroundTruthDump) -> Result<Self> {
        if dump.block_values.len() != dump.r {
            return Err(invalid("block_values must have r rows"));
        }
        let mut values = Vec::with_capacity(dump.r * dump.r);
        for row in &dump.block_values {
            if row.len() != dump.r {
                return Err(invalid("block_values must be r x r"));
            }
            for &v in row {
                match v {
                    0 => values.push(false),
                    1 => values.push(true),
                    other => return Err(invalid(format!("block value {other} is not binary"))),
                }
            }
        }
        let truth = Self::new(
            dump.r,
            values,
            dump.row_block.clone(),
            dump.col_block.clone(),
        )?;
        if truth.n != dump.n {
            return Err(invalid(format!(
                "dump declares n = {} but assignments have length {}",
                dump.n, truth.n
            )));
        }
        Ok(truth)
    }
}

/// JSON debug form of a [`GroundTruth`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthDump {
    pub n: usize,
    pub r: usize,
    pub block_values: Vec<Vec<u8>>,
    pub row_block: Vec<usize>,
    pub col_block: Vec<usize>,
}

/// Observed ternary matrix stored as two bit-planes.
///
/// Bit `j` of row `i` in `sampled` is set iff `Y(i, j) != *`; the matching
/// bit of `values` holds the observed symbol and is ignored wherever the entry
/// is erased. Padding bits past the last column are always clear in
/// `sampled`.
///
/// Synthetic instances are square. Real rating data (users x items) uses the
/// same type with `rows != cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    rows: usize,
    cols: usize,
    words: usize,
    sampled: Vec<u64>,
    values: Vec<u64>,
}

#[inline]
pub(crate) fn words_for(cols: usize) -> usize {
    cols.div_ceil(64)
}

impl Observation {
    /// All-erased `rows x cols` observation.
    pub fn erased(rows: usize, cols: usize) -> Self {
        let words = words_for(cols);
        Self {
            rows,
            cols,
            words,
            sampled: vec![0; rows * words],
            values: vec![0; rows * words],
        }
    }

    /// Builds an observation from raw row-major bit-planes of
    /// `rows * ceil(cols / 64)` words each.
    pub fn from_bit_planes(
        rows: usize,
        cols: usize,
        mut sampled: Vec<u64>,
        values: Vec<u64>,
    ) -> Result<Self> {
        let words = words_for(cols);
        if sampled.len() != rows * words || values.len() != rows * words {
            return Err(invalid(format!(
                "bit-planes must hold {} words each, got {} and {}",
                rows * words,
                sampled.len(),
                values.len()
            )));
        }
        let tail = cols % 64;
        if tail != 0 {
            let mask = (1u64 << tail) - 1;
            for row in sampled.chunks_mut(words) {
                row[words - 1] &= mask;
            }
        }
        Ok(Self {
            rows,
            cols,
            words,
            sampled,
            values,
        })
    }

    /// Parses rows written over `'0'`, `'1'` and `'*'`.
    pub fn parse_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().chars().count()).unwrap_or(0);
        let mut obs = Self::erased(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != cols {
                return Err(invalid(format!(
                    "row {i} has {} symbols, expected {cols}",
                    row.chars().count()
                )));
            }
            for (j, c) in row.chars().enumerate() {
                let entry = Entry::from_char(c)
                    .ok_or_else(|| invalid(format!("row {i} holds symbol {c:?}")))?;
                obs.set(i, j, entry);
            }
        }
        Ok(obs)
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words
    }

    pub fn sampled_row(&self, i: usize) -> &[u64] {
        &self.sampled[i * self.words..(i + 1) * self.words]
    }

    pub fn values_row(&self, i: usize) -> &[u64] {
        &self.values[i * self.words..(i + 1) * self.words]
    }

    pub fn sampled_plane(&self) -> &[u64] {
        &self.sampled
    }

    pub fn values_plane(&self) -> &[u64] {
        &self.values
    }

    pub fn entry(&self, i: usize, j: usize) -> Result<Entry> {
        if i >= self.rows {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: i,
                limit: self.rows,
            });
        }
        if j >= self.cols {
            return Err(Error::IndexOutOfRange {
                what: "col",
                index: j,
                limit: self.cols,
            });
        }
        Ok(self.get(i, j))
    }

    #[inline]
    pub(crate) fn get(&self, i: usize, j: usize) -> Entry {
        let w = i * self.words + j / 64;
        let bit = 1u64 << (j % 64);
        if self.sampled[w] & bit == 0 {
            Entry::Erased
        } else {
            Entry::from_bit(self.values[w] & bit != 0)
        }
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, entry: Entry) {
        let w = i * self.words + j / 64;
        let bit = 1u64 << (j % 64);
        match entry {
            Entry::Erased => {
                self.sampled[w] &= !bit;
                self.values[w] &= !bit;
            }
            Entry::Zero => {
                self.sampled[w] |= bit;
                self.values[w] &= !bit;
            }
            Entry::One => {
                self.sampled[w] |= bit;
                self.values[w] |= bit;
            }
        }
    }

    /// Number of observed entries in row `i`.
    pub fn sampled_in_row(&self, i: usize) -> usize {
        self.sampled_row(i)
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    /// Columns erased in row `i`, ascending.
    pub fn erased_columns(&self, i: usize) -> Vec<usize> {
        (0..self.cols)
            .filter(|&j| self.get(i, j) == Entry::Erased)
            .collect()
    }

    pub fn row_string(&self, i: usize) -> String {
        (0..self.cols).map(|j| self.get(i, j).as_char()).collect()
    }

    pub fn to_dump(&self) -> ObservationDump {
        ObservationDump {
            n: self.rows,
            rows: (0..self.rows).map(|i| self.row_string(i)).collect(),
        }
    }

    pub fn from_dump(dump: &ObservationDump) -> Result<Self> {
        if dump.rows.len() != dump.n {
            return Err(invalid(format!(
                "dump declares n = {} but holds {} rows",
                dump.n,
                dump.rows.len()
            )));
        }
        Self::parse_rows(&dump.rows)
    }
}

/// JSON debug form of an [`Observation`]: one string per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationDump {
    pub n: usize,
    pub rows: Vec<String>,
}
