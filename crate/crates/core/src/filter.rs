//! The local-popularity recommender.
//!
//! Step 1 ranks every other row by its agreement count with the target row,
//! `s(i, j) = #{c : Y(i, c) != *, Y(j, c) != *, Y(i, c) = Y(j, c)}`, and keeps
//! the top `T`. Step 2 looks at the columns erased in the target row and picks
//! the one holding the most `1`s among those `T` neighbours.
//!
//! The target row never competes for its own top-`T` slot.

use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::mix64;
use crate::error::{invalid, Error, Result};
use crate::model::{GroundTruth, Observation};

/// How equal scores are ordered, both at the top-`T` cutoff and between
/// equally popular columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TiePolicy {
    /// Lowest row or column index wins.
    #[default]
    LowestIndex,
    /// Uniform random order, derived from `(seed, target, T)` so that results
    /// do not depend on call order.
    RandomSeeded(u64),
    /// Average over all tied outcomes. Only meaningful where a probability
    /// is produced rather than a single choice.
    ExpectedOverTies,
}

impl TiePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            TiePolicy::LowestIndex => "lowest",
            TiePolicy::RandomSeeded(_) => "random",
            TiePolicy::ExpectedOverTies => "expected",
        }
    }

    fn rng(seed: u64, target: usize, t: usize, step: u64) -> ChaCha8Rng {
        let key = mix64(seed ^ mix64((target as u64) ^ mix64(t as u64)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(step);
        rng
    }
}

impl std::fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TiePolicy::RandomSeeded(seed) => write!(f, "random:{seed}"),
            other => f.write_str(other.name()),
        }
    }
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowest" => Ok(TiePolicy::LowestIndex),
            "expected" => Ok(TiePolicy::ExpectedOverTies),
            "random" => Ok(TiePolicy::RandomSeeded(0)),
            other => match other.strip_prefix("random:") {
                Some(seed) => seed
                    .parse()
                    .map(TiePolicy::RandomSeeded)
                    .map_err(|_| invalid(format!("bad tie seed {seed:?}"))),
                None => Err(invalid(format!(
                    "unknown tie policy {other:?} (expected lowest, random[:SEED] or expected)"
                ))),
            },
        }
    }
}

impl Serialize for TiePolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TiePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of one recommendation with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationTrace {
    pub target_row: usize,
    pub chosen_column: usize,
    /// `s(target, i)` for every row; the target's own slot holds 0.
    pub similarities: Vec<u32>,
    /// Selected neighbours, best first.
    pub top_set: Vec<usize>,
    /// Every erased column attaining `ones_count`, ascending.
    pub argmax_columns: Vec<usize>,
    /// `1`s in the chosen column among `top_set`.
    pub ones_count: u32,
    /// `0`s in the chosen column among `top_set`.
    pub zeros_count: u32,
    /// Fraction of `top_set` in the target's true block, once attached.
    pub purity: Option<f64>,
}

impl RecommendationTrace {
    pub fn attach_truth(&mut self, truth: &GroundTruth) {
        self.purity = Some(purity(truth, self.target_row, &self.top_set));
    }

    pub fn to_dump(&self) -> TraceDump {
        TraceDump {
            target: self.target_row,
            chosen: self.chosen_column,
            purity: self.purity,
            ones: self.ones_count,
            zeros: self.zeros_count,
            top: self.top_set.clone(),
        }
    }
}

/// JSON form of a trace for `--dump-trace`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDump {
    pub target: usize,
    pub chosen: usize,
    pub purity: Option<f64>,
    pub ones: u32,
    pub zeros: u32,
    pub top: Vec<usize>,
}

/// Fraction of `rows` sharing `target`'s user block.
pub fn purity(truth: &GroundTruth, target: usize, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let good = rows
        .iter()
        .filter(|&&i| truth.same_row_block(i, target))
        .count();
    good as f64 / rows.len() as f64
}

#[inline]
fn agreement(a_sampled: &[u64], a_values: &[u64], b_sampled: &[u64], b_values: &[u64]) -> u32 {
    a_sampled
        .iter()
        .zip(a_values)
        .zip(b_sampled.iter().zip(b_values))
        .map(|((&sa, &va), (&sb, &vb))| (sa & sb & !(va ^ vb)).count_ones())
        .sum()
}

fn check_row(obs: &Observation, i: usize) -> Result<()> {
    if i >= obs.n_rows() {
        return Err(Error::IndexOutOfRange {
            what: "row",
            index: i,
            limit: obs.n_rows(),
        });
    }
    Ok(())
}

/// Agreement count between rows `i` and `j` over their commonly observed
/// columns.
pub fn similarity(obs: &Observation, i: usize, j: usize) -> Result<u32> {
    check_row(obs, i)?;
    check_row(obs, j)?;
    if i == j {
        return Err(Error::SelfSimilarity(i));
    }
    Ok(agreement(
        obs.sampled_row(i),
        obs.values_row(i),
        obs.sampled_row(j),
        obs.values_row(j),
    ))
}

/// `s(target, i)` for every row `i`, with 0 in the target's own slot.
pub fn similarities(obs: &Observation, target: usize) -> Result<Vec<u32>> {
    check_row(obs, target)?;
    let (ts, tv) = (obs.sampled_row(target), obs.values_row(target));
    Ok((0..obs.n_rows())
        .map(|i| {
            if i == target {
                0
            } else {
                agreement(ts, tv, obs.sampled_row(i), obs.values_row(i))
            }
        })
        .collect())
}

/// Picks `t` rows other than `target` with the highest scores. The result is
/// ordered by score, then by the tie policy's order.
pub fn select_top(scores: &[u32], target: usize, t: usize, tie: TiePolicy) -> Result<Vec<usize>> {
    let rows = scores.len();
    if target >= rows {
        return Err(Error::IndexOutOfRange {
            what: "row",
            index: target,
            limit: rows,
        });
    }
    if t == 0 || t > rows - 1 {
        return Err(invalid(format!("T must lie in 1..=n-1 = {}, got {t}", rows - 1)));
    }
    let tie_keys: Vec<u64> = match tie {
        TiePolicy::LowestIndex => vec![0; rows],
        TiePolicy::RandomSeeded(seed) => {
            let mut rng = TiePolicy::rng(seed, target, t, 1);
            (0..rows).map(|_| rng.random()).collect()
        }
        TiePolicy::ExpectedOverTies => {
            return Err(Error::InvalidTiePolicy("expected"));
        }
    };
    let mut order: Vec<usize> = (0..rows).filter(|&i| i != target).collect();
    let key = |&i: &usize| (Reverse(scores[i]), tie_keys[i], i);
    if t < order.len() {
        order.select_nth_unstable_by_key(t - 1, key);
        order.truncate(t);
    }
    order.sort_unstable_by_key(key);
    Ok(order)
}

/// Step 1: the `t` rows most similar to `target`.
pub fn top_t(obs: &Observation, target: usize, t: usize, tie: TiePolicy) -> Result<Vec<usize>> {
    let scores = similarities(obs, target)?;
    select_top(&scores, target, t, tie)
}

/// Per-column `(ones, zeros)` among `rows`, counted only on columns erased in
/// `target`.
fn column_counts(obs: &Observation, target: usize, rows: &[usize]) -> (Vec<u32>, Vec<u32>) {
    let cols = obs.n_cols();
    let mut ones = vec![0u32; cols];
    let mut zeros = vec![0u32; cols];
    let target_sampled = obs.sampled_row(target);
    for &i in rows {
        let (s, v) = (obs.sampled_row(i), obs.values_row(i));
        for w in 0..obs.words_per_row() {
            let open = s[w] & !target_sampled[w];
            let mut one_bits = open & v[w];
            let mut zero_bits = open & !v[w];
            while one_bits != 0 {
                ones[w * 64 + one_bits.trailing_zeros() as usize] += 1;
                one_bits &= one_bits - 1;
            }
            while zero_bits != 0 {
                zeros[w * 64 + zero_bits.trailing_zeros() as usize] += 1;
                zero_bits &= zero_bits - 1;
            }
        }
    }
    (ones, zeros)
}

/// Runs both steps for `target`.
///
/// Fails with [`Error::NoErasedColumn`] when the target row is fully observed.
pub fn recommend(
    obs: &Observation,
    target: usize,
    t: usize,
    tie: TiePolicy,
) -> Result<RecommendationTrace> {
    check_row(obs, target)?;
    if tie == TiePolicy::ExpectedOverTies {
        return Err(Error::InvalidTiePolicy("expected"));
    }
    let similarities = similarities(obs, target)?;
    recommend_with(obs, target, t, similarities, tie)
}

/// Both steps with caller-supplied similarities to `target`; `obs` is only
/// read on `target` and on the chosen rows at the target's erased columns.
pub fn recommend_with(
    obs: &Observation,
    target: usize,
    t: usize,
    similarities: Vec<u32>,
    tie: TiePolicy,
) -> Result<RecommendationTrace> {
    check_row(obs, target)?;
    if similarities.len() != obs.n_rows() {
        return Err(invalid(format!(
            "expected {} similarities, got {}",
            obs.n_rows(),
            similarities.len()
        )));
    }
    let candidates = obs.erased_columns(target);
    if candidates.is_empty() {
        return Err(Error::NoErasedColumn(target));
    }
    let top_set = select_top(&similarities, target, t, tie)?;
    let (ones, zeros) = column_counts(obs, target, &top_set);

    let best = candidates.iter().map(|&j| ones[j]).max().unwrap_or(0);
    let argmax_columns: Vec<usize> = candidates.into_iter().filter(|&j| ones[j] == best).collect();
    let chosen_column = match tie {
        TiePolicy::RandomSeeded(seed) if argmax_columns.len() > 1 => {
            let mut rng = TiePolicy::rng(seed, target, t, 2);
            argmax_columns[rng.random_range(0..argmax_columns.len())]
        }
        _ => argmax_columns[0],
    };
    Ok(RecommendationTrace {
        target_row: target,
        chosen_column,
        similarities,
        top_set,
        ones_count: ones[chosen_column],
        zeros_count: zeros[chosen_column],
        argmax_columns,
        purity: None,
    })
}

/// `true` (an error) iff the recommended entry of `X` is 0.
pub fn score(truth: &GroundTruth, trace: &RecommendationTrace) -> bool {
    !truth.value(trace.target_row, trace.chosen_column)
}
