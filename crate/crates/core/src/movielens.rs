//! Movielens ratings: loading, binary quantization, splitting and BER
//! evaluation of the local-popularity algorithm on held-out ratings.
//!
//! Ratings 4 and 5 become 1, ratings 1 to 3 become 0. Two protocols are
//! available; both start from the top-`T` users most similar to `u` on the
//! training matrix.
//!
//! * [`Protocol::Predict`]: each test pair `(u, i)` is predicted by the
//!   majority bit of item `i` among the neighbours. Pairs where no neighbour
//!   rated `i` are abstentions.
//! * [`Protocol::Recommend`]: each user with held-out ratings is recommended
//!   the held-out item with the most 1s among the neighbours, and the
//!   recommendation fails when its true bit is 0. Users for whom no neighbour
//!   rated any held-out item are abstentions.
//!
//! Abstentions stay out of the BER denominator. The global-popularity
//! baseline replaces the neighbours by all training users and is scored on
//! the same pairs (or users) as the local algorithm.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{mix64, Seed};
use crate::error::{Error, Result};
use crate::filter::{self, TiePolicy};
use crate::model::{Entry, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    /// Dense user index.
    pub user: usize,
    /// Dense item index.
    pub item: usize,
    pub rating: u8,
    pub timestamp: i64,
}

/// Parsed ratings with dense ids. `user_ids[u]` is the raw id of user `u`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RatingsTable {
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    pub entries: Vec<Rating>,
}

impl RatingsTable {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// 4 and 5 map to `true`, 1 to 3 map to `false`.
pub fn quantize(rating: i64) -> Result<bool> {
    match rating {
        1..=3 => Ok(false),
        4 | 5 => Ok(true),
        _ => Err(Error::RatingOutOfRange { line: None, rating }),
    }
}

fn field<T: std::str::FromStr>(raw: Option<&str>, name: &str, line: usize) -> Result<T> {
    let raw = raw.ok_or_else(|| Error::MalformedLine {
        line,
        reason: format!("missing {name} field (expected 4 tab-separated integers)"),
    })?;
    raw.trim().parse().map_err(|_| Error::MalformedLine {
        line,
        reason: format!("{name} {raw:?} is not an integer"),
    })
}

/// Parses `user\titem\trating\ttimestamp` lines. Blank lines are skipped and
/// CRLF endings are accepted; line numbers in errors are 1-based.
pub fn parse<R: Read>(input: R) -> Result<RatingsTable> {
    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let user: u64 = field(parts.next(), "user id", line_no)?;
        let item: u64 = field(parts.next(), "item id", line_no)?;
        let rating: i64 = field(parts.next(), "rating", line_no)?;
        let timestamp: i64 = field(parts.next(), "timestamp", line_no)?;
        if parts.next().is_some() {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: "more than 4 fields".into(),
            });
        }
        if !(1..=5).contains(&rating) {
            return Err(Error::RatingOutOfRange {
                line: Some(line_no),
                rating,
            });
        }
        if !seen.insert((user, item)) {
            return Err(Error::DuplicateRating {
                line: line_no,
                user,
                item,
            });
        }
        raw.push((user, item, rating as u8, timestamp));
    }

    let dense = |ids: Vec<u64>| {
        let mut ids = ids;
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let user_ids = dense(raw.iter().map(|r| r.0).collect());
    let item_ids = dense(raw.iter().map(|r| r.1).collect());
    let entries = raw
        .into_iter()
        .map(|(u, i, rating, timestamp)| Rating {
            user: user_ids.binary_search(&u).unwrap(),
            item: item_ids.binary_search(&i).unwrap(),
            rating,
            timestamp,
        })
        .collect();
    Ok(RatingsTable {
        user_ids,
        item_ids,
        entries,
    })
}

/// Reads an ml-100k `u.data` file.
pub fn load_ml100k(path: impl AsRef<Path>) -> Result<RatingsTable> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestEntry {
    pub user: usize,
    pub item: usize,
    pub truth: bool,
}

/// Holds out `round(test_fraction * len)` uniformly chosen ratings.
///
/// The training observation has the held-out and the never-rated entries
/// erased. Test entries are sorted by `(user, item)`.
pub fn split(
    table: &RatingsTable,
    test_fraction: f64,
    seed: Seed,
) -> Result<(Observation, Vec<TestEntry>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(crate::error::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let pairs = table.len();
    let count = (test_fraction * pairs as f64).round() as usize;
    if count == 0 {
        return Err(Error::EmptySplit {
            fraction: test_fraction,
            pairs,
        });
    }
    let mut rng = seed.rng();
    let mut held = vec![false; pairs];
    for idx in sample(&mut rng, pairs, count) {
        held[idx] = true;
    }
    let mut train = Observation::erased(table.num_users(), table.num_items());
    let mut test = Vec::with_capacity(count);
    for (entry, &is_test) in table.entries.iter().zip(&held) {
        let bit = quantize(entry.rating as i64)?;
        if is_test {
            test.push(TestEntry {
                user: entry.user,
                item: entry.item,
                truth: bit,
            });
        } else {
            train.set(entry.user, entry.item, Entry::from_bit(bit));
        }
    }
    test.sort_unstable_by_key(|e| (e.user, e.item));
    Ok((train, test))
}

/// What is scored on the held-out ratings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One prediction per held-out rating.
    #[default]
    Predict,
    /// One recommendation per user, chosen among the user's held-out items.
    Recommend,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Predict => "predict",
            Protocol::Recommend => "recommend",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predict" => Ok(Protocol::Predict),
            "recommend" => Ok(Protocol::Recommend),
            other => Err(crate::error::invalid(format!(
                "unknown protocol {other:?} (expected predict or recommend)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Held-out ratings, or users with held-out ratings when recommending.
    pub test_pairs: u64,
    pub predicted: u64,
    pub abstained: u64,
    /// Expected-over-ties scoring adds 1/2 per tied vote, hence fractional.
    pub errors: f64,
    pub ber: f64,
    pub baseline_errors: f64,
    pub baseline_ber: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub tie: TiePolicy,
    pub split_seed: Seed,
}

/// Header of [`EvalReport::csv_line`].
pub const EVAL_CSV_HEADER: &str = "T,test_pairs,predicted,abstained,errors,ber,baseline_ber,seed";

impl EvalReport {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.t,
            self.test_pairs,
            self.predicted,
            self.abstained,
            self.errors,
            self.ber,
            self.baseline_ber,
            self.split_seed.master
        )
    }
}

/// Error contribution of predicting from a `(ones, zeros)` vote when the
/// truth is `truth`.
fn vote_error(ones: u32, zeros: u32, truth: bool, tie: TiePolicy, salt: u64) -> f64 {
    let predicted = match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => match tie {
            TiePolicy::LowestIndex => false,
            TiePolicy::RandomSeeded(seed) => mix64(seed ^ mix64(salt)) & 1 == 1,
            TiePolicy::ExpectedOverTies => return 0.5,
        },
    };
    (predicted != truth) as u8 as f64
}

fn bit_counts(obs: &Observation, rows: &[usize], item: usize) -> (u32, u32) {
    let (word, bit) = (item / 64, 1u64 << (item % 64));
    let mut ones = 0;
    let mut zeros = 0;
    for &row in rows {
        if obs.sampled_row(row)[word] & bit != 0 {
            if obs.values_row(row)[word] & bit != 0 {
                ones += 1;
            } else {
                zeros += 1;
            }
        }
    }
    (ones, zeros)
}

fn check_inputs(train: &Observation, test: &[TestEntry], t: usize) -> Result<()> {
    let users = train.n_rows();
    if t == 0 || t + 1 > users {
        return Err(crate::error::invalid(format!(
            "T must lie in 1..=users-1 = {}, got {t}",
            users.saturating_sub(1)
        )));
    }
    for e in test {
        if e.user >= users || e.item >= train.n_cols() {
            return Err(Error::IndexOutOfRange {
                what: "test pair",
                index: e.user.max(e.item),
                limit: users.max(train.n_cols()),
            });
        }
    }
    Ok(())
}

/// Neighbour selection cannot average over ties; it falls back to lowest
/// index under [`TiePolicy::ExpectedOverTies`].
fn step1_tie(tie: TiePolicy) -> TiePolicy {
    match tie {
        TiePolicy::ExpectedOverTies => TiePolicy::LowestIndex,
        other => other,
    }
}

/// Per-user `(scored, errors, baseline errors)` folded into a report.
fn report(
    protocol: Protocol,
    test_pairs: u64,
    per_group: Vec<Result<(u64, f64, f64)>>,
    t: usize,
    tie: TiePolicy,
    split_seed: Seed,
) -> Result<EvalReport> {
    let (mut predicted, mut errors, mut baseline_errors) = (0u64, 0.0, 0.0);
    for g in per_group {
        let (p, e, b) = g?;
        predicted += p;
        errors += e;
        baseline_errors += b;
    }
    let ratio = |x: f64| if predicted == 0 { f64::NAN } else { x / predicted as f64 };
    Ok(EvalReport {
        protocol,
        test_pairs,
        predicted,
        abstained: test_pairs - predicted,
        errors,
        ber: ratio(errors),
        baseline_errors,
        baseline_ber: ratio(baseline_errors),
        t,
        tie,
        split_seed,
    })
}

/// Scores the neighbourhood vote and the global-majority baseline on every
/// held-out rating ([`Protocol::Predict`]).
///
/// Vote ties follow `tie`: lowest index predicts 0, a seeded policy flips a
/// coin per pair, and expected-over-ties counts 1/2 of an error.
pub fn evaluate(
    train: &Observation,
    test: &[TestEntry],
    t: usize,
    tie: TiePolicy,
    split_seed: Seed,
) -> Result<EvalReport> {
    check_inputs(train, test, t)?;
    let all_users: Vec<usize> = (0..train.n_rows()).collect();
    let groups: Vec<&[TestEntry]> = test.chunk_by(|a, b| a.user == b.user).collect();
    let per_group = groups
        .par_iter()
        .map(|group| {
            let top = filter::top_t(train, group[0].user, t, step1_tie(tie))?;
            let (mut predicted, mut errors, mut baseline) = (0u64, 0.0, 0.0);
            for e in group.iter() {
                let (ones, zeros) = bit_counts(train, &top, e.item);
                if ones + zeros == 0 {
                    continue;
                }
                let salt = (e.user as u64) << 32 | e.item as u64;
                predicted += 1;
                errors += vote_error(ones, zeros, e.truth, tie, salt);
                let (g1, g0) = bit_counts(train, &all_users, e.item);
                baseline += vote_error(g1, g0, e.truth, tie, !salt);
            }
            Ok((predicted, errors, baseline))
        })
        .collect();
    report(Protocol::Predict, test.len() as u64, per_group, t, tie, split_seed)
}

/// Error of recommending the candidate with the highest score; `truths` and
/// `scores` are parallel and ordered by item index.
fn recommendation_error(scores: &[u32], truths: &[bool], tie: TiePolicy, salt: u64) -> f64 {
    let best = *scores.iter().max().expect("at least one candidate");
    let winners: Vec<bool> = scores
        .iter()
        .zip(truths)
        .filter(|(&s, _)| s == best)
        .map(|(_, &truth)| truth)
        .collect();
    let wrong = |truth: bool| (!truth) as u8 as f64;
    match tie {
        TiePolicy::LowestIndex => wrong(winners[0]),
        TiePolicy::RandomSeeded(seed) => {
            wrong(winners[(mix64(seed ^ mix64(salt)) % winners.len() as u64) as usize])
        }
        TiePolicy::ExpectedOverTies => {
            winners.iter().map(|&t| wrong(t)).sum::<f64>() / winners.len() as f64
        }
    }
}

/// Recommends one held-out item per user and scores it together with the
/// global-popularity baseline ([`Protocol::Recommend`]).
///
/// Ties between equally popular items follow `tie`; expected-over-ties
/// averages the error over the tied items.
pub fn evaluate_recommendations(
    train: &Observation,
    test: &[TestEntry],
    t: usize,
    tie: TiePolicy,
    split_seed: Seed,
) -> Result<EvalReport> {
    check_inputs(train, test, t)?;
    let all_users: Vec<usize> = (0..train.n_rows()).collect();
    let groups: Vec<&[TestEntry]> = test.chunk_by(|a, b| a.user == b.user).collect();
    let per_group = groups
        .par_iter()
        .map(|group| {
            let user = group[0].user;
            let top = filter::top_t(train, user, t, step1_tie(tie))?;
            let local: Vec<(u32, u32)> = group.iter().map(|e| bit_counts(train, &top, e.item)).collect();
            if local.iter().all(|&(ones, zeros)| ones + zeros == 0) {
                return Ok((0, 0.0, 0.0));
            }
            let truths: Vec<bool> = group.iter().map(|e| e.truth).collect();
            let ones: Vec<u32> = local.iter().map(|c| c.0).collect();
            let global: Vec<u32> = group
                .iter()
                .map(|e| bit_counts(train, &all_users, e.item).0)
                .collect();
            let salt = user as u64;
            Ok((
                1,
                recommendation_error(&ones, &truths, tie, salt),
                recommendation_error(&global, &truths, tie, !salt),
            ))
        })
        .collect::<Vec<_>>();
    report(Protocol::Recommend, groups.len() as u64, per_group, t, tie, split_seed)
}

/// Neighbourhood sizes tried on ml-100k.
pub const DEFAULT_T_GRID: [usize; 4] = [5, 10, 20, 40];

/// Evaluates every `T` in `grid`, in order.
pub fn evaluate_grid(
    train: &Observation,
    test: &[TestEntry],
    grid: &[usize],
    tie: TiePolicy,
    split_seed: Seed,
    protocol: Protocol,
) -> Result<Vec<EvalReport>> {
    grid.iter()
        .map(|&t| match protocol {
            Protocol::Predict => evaluate(train, test, t, tie, split_seed),
            Protocol::Recommend => evaluate_recommendations(train, test, t, tie, split_seed),
        })
        .collect()
}

/// The report with the lowest BER; earlier entries win ties.
pub fn best_report(reports: &[EvalReport]) -> Option<&EvalReport> {
    reports
        .iter()
        .filter(|r| !r.ber.is_nan())
        .fold(None, |best: Option<&EvalReport>, r| match best {
            Some(b) if b.ber <= r.ber => Some(b),
            _ => Some(r),
        })
}
