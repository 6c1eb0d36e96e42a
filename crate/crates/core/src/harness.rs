//! Monte Carlo BER estimation, regime sweeps and the exact oracle.
//!
//! Trial `i` of a run uses substream `i` of the run's master seed, so a trial's
//! outcome does not depend on which worker executes it. Outcomes are collected
//! in trial order and folded sequentially, which makes every summary (and
//! every emitted CSV byte) independent of the thread count.
//!
//! Trials never materialise the full observation: the similarity profile of
//! row 0 is drawn from its exact conditional law and only the entries read
//! by the second step are generated (see [`crate::channel`]).
//!
//! The recommendation target is always row 0. A trial whose target row is
//! fully observed cannot recommend anything; it is counted as skipped and left
//! out of the BER denominator.
//!
//! Points in one sweep share the master seed (common random numbers across
//! the grid).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::{derive_erasure, mix64, InstanceSampler, Seed};
use crate::error::{invalid, Error, Result};
use crate::filter::{self, RecommendationTrace, TiePolicy};
use crate::model::{GroundTruth, ModelParams, Observation, ScalingRegime};
use crate::theory;

/// Confidence level used by the acceptance checks.
pub const ACCEPTANCE_CONFIDENCE: f64 = 0.99;
/// Confidence level for exploratory sweeps.
pub const EXPLORATORY_CONFIDENCE: f64 = 0.95;

/// Wilson score interval for `errors` out of `trials`.
pub fn wilson_interval(errors: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || errors > trials {
        return Err(invalid(format!(
            "wilson interval needs 0 <= errors <= trials, trials >= 1 (errors = {errors}, trials = {trials})"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let n = trials as f64;
    let phat = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = z / denom * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if errors == 0 { 0.0 } else { (center - half).clamp(0.0, phat) };
    let high = if errors == trials { 1.0 } else { (center + half).clamp(phat, 1.0) };
    Ok((low, high))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerEstimate {
    /// Scored trials; skipped ones are excluded.
    pub trials: u64,
    pub errors: u64,
    pub skipped: u64,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

impl BerEstimate {
    pub fn from_counts(errors: u64, trials: u64, skipped: u64, confidence: f64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::AllTrialsSkipped(skipped as usize));
        }
        let (ci_low, ci_high) = wilson_interval(errors, trials, confidence)?;
        Ok(Self {
            trials,
            errors,
            skipped,
            ber: errors as f64 / trials as f64,
            ci_low,
            ci_high,
            confidence,
        })
    }

    /// Plug-in standard error `sqrt(ber (1 - ber) / trials)`.
    pub fn std_error(&self) -> f64 {
        (self.ber * (1.0 - self.ber) / self.trials as f64).sqrt()
    }
}

/// Everything needed to run a batch of independent trials.
#[derive(Debug, Clone)]
pub struct TrialSpec {
    pub params: ModelParams,
    pub t: usize,
    pub trials: u64,
    pub seed: Seed,
    pub tie: TiePolicy,
    /// Condition every trial on this truth instead of redrawing it.
    pub frozen_truth: Option<GroundTruth>,
}

impl TrialSpec {
    pub fn new(params: ModelParams, t: usize, trials: u64, seed: Seed, tie: TiePolicy) -> Self {
        Self {
            params,
            t,
            trials,
            seed,
            tie,
            frozen_truth: None,
        }
    }

    pub fn with_frozen_truth(mut self, truth: GroundTruth) -> Self {
        self.frozen_truth = Some(truth);
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.params.n();
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.t == 0 || self.t > n - 1 {
            return Err(invalid(format!("T must lie in 1..=n-1 = {}, got {}", n - 1, self.t)));
        }
        if self.tie == TiePolicy::ExpectedOverTies {
            return Err(Error::InvalidTiePolicy("expected"));
        }
        if let Some(truth) = &self.frozen_truth {
            if truth.n() != n || truth.r() != self.params.r() {
                return Err(invalid("frozen truth does not match params"));
            }
        }
        Ok(())
    }

    fn sampler(&self, index: u64) -> InstanceSampler {
        let seed = self.seed.with_stream(index);
        match &self.frozen_truth {
            Some(truth) => InstanceSampler::with_truth(self.params, truth.clone(), seed)
                .expect("validated against params"),
            None => InstanceSampler::new(self.params, seed),
        }
    }

    /// Tie policy for one trial; random policies get a fresh seed per trial.
    pub fn trial_tie(&self, index: u64) -> TiePolicy {
        match self.tie {
            TiePolicy::RandomSeeded(s) => TiePolicy::RandomSeeded(mix64(s ^ mix64(index))),
            other => other,
        }
    }

    /// Runs trial `index` and returns the truth, the partial observation and
    /// the trace, or `None` when the target row is fully observed.
    ///
    /// Similarities are drawn with [`InstanceSampler::similarity_profile`];
    /// the observation holds the target row and, for the top rows, the
    /// target's erased columns. Everything else stays erased.
    pub fn trial_trace(
        &self,
        index: u64,
    ) -> Result<Option<(GroundTruth, Observation, RecommendationTrace)>> {
        self.validate()?;
        let sampler = self.sampler(index);
        let n = self.params.n();
        let mut obs = sampler.target_row(0);
        if obs.sampled_in_row(0) == n {
            return Ok(None);
        }
        let tie = self.trial_tie(index);
        let sims = sampler.similarity_profile(&obs, 0);
        let top = filter::select_top(&sims, 0, self.t, tie)?;
        sampler.fill_erased_columns(&mut obs, 0, &top);
        let mut trace = filter::recommend_with(&obs, 0, self.t, sims, tie)?;
        debug_assert_eq!(trace.top_set, top);
        trace.attach_truth(sampler.truth());
        Ok(Some((sampler.into_truth(), obs, trace)))
    }

    fn run_one(&self, index: u64) -> Result<Outcome> {
        Ok(match self.trial_trace(index)? {
            None => Outcome::Skipped,
            Some((truth, _, trace)) => {
                let good = trace
                    .top_set
                    .iter()
                    .filter(|&&i| truth.same_row_block(i, 0))
                    .count();
                Outcome::Scored {
                    error: filter::score(&truth, &trace),
                    purity: trace.purity.unwrap_or(0.0),
                    all_good: good == self.t.min(truth.k() - 1),
                    ones: trace.ones_count,
                    zeros: trace.zeros_count,
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Skipped,
    Scored {
        error: bool,
        purity: f64,
        all_good: bool,
        ones: u32,
        zeros: u32,
    },
}

/// Aggregated outcome of a batch of trials.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialSummary {
    pub requested: u64,
    pub scored: u64,
    pub skipped: u64,
    pub errors: u64,
    pub purity_sum: f64,
    /// Trials whose top set holds as many same-block rows as possible,
    /// `min(T, k - 1)`: no row of the target's block lost its place to an
    /// outside row.
    pub all_good: u64,
    pub ones_sum: u64,
    pub zeros_sum: u64,
}

impl TrialSummary {
    fn add(&mut self, outcome: Outcome) {
        self.requested += 1;
        match outcome {
            Outcome::Skipped => self.skipped += 1,
            Outcome::Scored {
                error,
                purity,
                all_good,
                ones,
                zeros,
            } => {
                self.scored += 1;
                self.errors += error as u64;
                self.purity_sum += purity;
                self.all_good += all_good as u64;
                self.ones_sum += ones as u64;
                self.zeros_sum += zeros as u64;
            }
        }
    }

    pub fn estimate(&self, confidence: f64) -> Result<BerEstimate> {
        BerEstimate::from_counts(self.errors, self.scored, self.skipped, confidence)
    }

    fn mean(&self, sum: f64) -> Option<f64> {
        (self.scored > 0).then(|| sum / self.scored as f64)
    }

    pub fn purity_mean(&self) -> Option<f64> {
        self.mean(self.purity_sum)
    }

    pub fn all_good_fraction(&self) -> Option<f64> {
        self.mean(self.all_good as f64)
    }

    pub fn ones_mean(&self) -> Option<f64> {
        self.mean(self.ones_sum as f64)
    }

    pub fn zeros_mean(&self) -> Option<f64> {
        self.mean(self.zeros_sum as f64)
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool when
/// `threads` is 0.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Runs every trial of `spec` and folds the outcomes in trial order.
pub fn run_trials(spec: &TrialSpec, threads: usize) -> Result<TrialSummary> {
    spec.validate()?;
    let outcomes: Vec<Result<Outcome>> = with_threads(threads, || {
        (0..spec.trials)
            .into_par_iter()
            .map(|i| spec.run_one(i))
            .collect()
    });
    let mut summary = TrialSummary::default();
    for outcome in outcomes {
        summary.add(outcome?);
    }
    Ok(summary)
}

/// Monte Carlo estimate of the BER of the recommendation for row 0, with a
/// Wilson interval at [`ACCEPTANCE_CONFIDENCE`].
pub fn estimate_ber(
    params: &ModelParams,
    t: usize,
    trials: u64,
    seed: Seed,
    tie: TiePolicy,
) -> Result<BerEstimate> {
    let spec = TrialSpec::new(*params, t, trials, seed, tie);
    run_trials(&spec, 0)?.estimate(ACCEPTANCE_CONFIDENCE)
}

/// Mean top-set purity and the fraction of trials where no row of the
/// target's block was displaced by an outside row.
pub fn purity_stats(params: &ModelParams, t: usize, trials: u64, seed: Seed) -> Result<(f64, f64)> {
    let spec = TrialSpec::new(*params, t, trials, seed, TiePolicy::LowestIndex);
    let summary = run_trials(&spec, 0)?;
    match (summary.purity_mean(), summary.all_good_fraction()) {
        (Some(mean), Some(all)) => Ok((mean, all)),
        _ => Err(Error::AllTrialsSkipped(summary.skipped as usize)),
    }
}

/// Exact error probability of an exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactBer {
    /// `P_e` conditional on the target row having an erased column.
    pub value: f64,
    /// Probability mass of every enumerated observation; 1 up to rounding.
    pub total_mass: f64,
    /// Mass of observations whose target row is fully observed.
    pub skip_mass: f64,
}

/// Largest `n` accepted by the exact oracle.
pub const ORACLE_MAX_N: usize = 3;

#[derive(Debug, Clone, Copy, Default)]
struct Masses {
    error: f64,
    skip: f64,
    total: f64,
}

/// Enumerates all `3^(n^2)` observations of the fixed matrix `x`. Ties at the
/// top-`t` cutoff and between equally popular columns are averaged uniformly.
/// Self-contained: shares nothing with the filter implementation.
fn enumerate_observations(x: &[Vec<bool>], p: f64, epsilon: f64, t: usize) -> Masses {
    let n = x.len();
    let cells = n * n;
    let probs = [epsilon, (1.0 - epsilon) * (1.0 - p), (1.0 - epsilon) * p];
    let others: Vec<usize> = (1..n).collect();
    let subsets: Vec<Vec<usize>> = (0u32..(1 << others.len()))
        .filter(|m| m.count_ones() as usize == t)
        .map(|m| {
            others
                .iter()
                .enumerate()
                .filter(|(b, _)| m & (1 << b) != 0)
                .map(|(_, &i)| i)
                .collect()
        })
        .collect();

    let mut masses = Masses::default();
    let mut y = vec![vec![None::<bool>; n]; n];
    'outer: for code in 0..3usize.pow(cells as u32) {
        let mut rest = code;
        let mut weight = 1.0;
        for cell in 0..cells {
            let symbol = rest % 3;
            rest /= 3;
            weight *= probs[symbol];
            if weight == 0.0 {
                continue 'outer;
            }
            let (i, j) = (cell / n, cell % n);
            y[i][j] = match symbol {
                0 => None,
                1 => Some(x[i][j]),
                _ => Some(!x[i][j]),
            };
        }
        masses.total += weight;
        let erased: Vec<usize> = (0..n).filter(|&j| y[0][j].is_none()).collect();
        if erased.is_empty() {
            masses.skip += weight;
            continue;
        }
        let sim = |i: usize| {
            (0..n)
                .filter(|&j| matches!((y[0][j], y[i][j]), (Some(a), Some(b)) if a == b))
                .count()
        };
        let sims: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { sim(i) }).collect();
        let valid: Vec<&Vec<usize>> = subsets
            .iter()
            .filter(|s| {
                let inside = s.iter().map(|&i| sims[i]).min().unwrap_or(usize::MAX);
                let outside = others
                    .iter()
                    .filter(|i| !s.contains(i))
                    .map(|&i| sims[i])
                    .max()
                    .unwrap_or(0);
                inside >= outside
            })
            .collect();
        let mut expected_error = 0.0;
        for set in &valid {
            let ones: Vec<usize> = erased
                .iter()
                .map(|&j| set.iter().filter(|&&i| y[i][j] == Some(true)).count())
                .collect();
            let best = *ones.iter().max().unwrap();
            let winners: Vec<usize> = erased
                .iter()
                .zip(&ones)
                .filter(|(_, &o)| o == best)
                .map(|(&j, _)| j)
                .collect();
            let wrong = winners.iter().filter(|&&j| !x[0][j]).count();
            expected_error += wrong as f64 / winners.len() as f64;
        }
        masses.error += weight * expected_error / valid.len() as f64;
    }
    masses
}

fn check_oracle(params: &ModelParams, t: usize) -> Result<()> {
    if params.n() > ORACLE_MAX_N {
        return Err(Error::OracleTooLarge(params.n()));
    }
    if t == 0 || t > params.n() - 1 {
        return Err(invalid(format!("T must lie in 1..=n-1, got {t}")));
    }
    Ok(())
}

fn finish(m: Masses) -> Result<ExactBer> {
    let kept = m.total - m.skip;
    if kept <= 0.0 {
        return Err(Error::AllTrialsSkipped(0));
    }
    Ok(ExactBer {
        value: m.error / kept,
        total_mass: m.total,
        skip_mass: m.skip,
    })
}

/// Exact `P_e` conditional on `truth`, by enumeration (`n <= 3`).
pub fn exact_ber(params: &ModelParams, t: usize, truth: &GroundTruth) -> Result<ExactBer> {
    check_oracle(params, t)?;
    if truth.n() != params.n() {
        return Err(invalid("truth does not match params"));
    }
    finish(enumerate_observations(
        &truth.materialize(),
        params.p(),
        params.epsilon(),
        t,
    ))
}

/// Unconditional `P_e`: averages over all `2^(r^2)` block-value tables.
///
/// For `n <= 3` either `k = 1` or `r = 1`, and in both cases permuting rows
/// and columns of the block layout leaves the law of `X` unchanged, so the
/// canonical layout stands in for the average over assignments.
pub fn exact_ber_averaged(params: &ModelParams, t: usize) -> Result<ExactBer> {
    check_oracle(params, t)?;
    let (n, k, r) = (params.n(), params.k(), params.r());
    let layout: Vec<usize> = (0..n).map(|i| i / k).collect();
    let tables = 1u32 << (r * r);
    let mut sum = Masses::default();
    for bits in 0..tables {
        let values: Vec<bool> = (0..r * r).map(|b| bits & (1 << b) != 0).collect();
        let truth = GroundTruth::new(r, values, layout.clone(), layout.clone())?;
        let m = enumerate_observations(&truth.materialize(), params.p(), params.epsilon(), t);
        sum.error += m.error;
        sum.skip += m.skip;
        sum.total += m.total;
    }
    let scale = 1.0 / tables as f64;
    finish(Masses {
        error: sum.error * scale,
        skip: sum.skip * scale,
        total: sum.total * scale,
    })
}

/// How `T` is chosen at a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TRule {
    Fixed(usize),
    EqualsK,
}

impl TRule {
    pub fn resolve(&self, k: usize) -> usize {
        match *self {
            TRule::Fixed(t) => t,
            TRule::EqualsK => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    pub r: usize,
    pub alpha: f64,
    pub c: f64,
    pub p: f64,
    pub t_rule: TRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub trials: u64,
    pub seed: Seed,
    pub tie: TiePolicy,
    pub confidence: f64,
    pub threads: usize,
}

impl SweepConfig {
    pub fn new(trials: u64, seed: Seed) -> Self {
        Self {
            trials,
            seed,
            tie: TiePolicy::LowestIndex,
            confidence: EXPLORATORY_CONFIDENCE,
            threads: 0,
        }
    }
}

/// One row of sweep output. Field order and names are the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub alpha: f64,
    pub c: f64,
    pub gamma: f64,
    pub p: f64,
    pub epsilon: Option<f64>,
    #[serde(rename = "T")]
    pub t: usize,
    pub trials: Option<u64>,
    pub errors: Option<u64>,
    pub skipped: Option<u64>,
    pub ber: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub purity_mean: Option<f64>,
    pub purity_all_good: Option<f64>,
    pub ones_mean: Option<f64>,
    pub zeros_mean: Option<f64>,
    pub lower_bound: f64,
    pub seed: u64,
    pub status: String,
}

/// Column names of [`SweepPoint`] CSV output.
pub const SWEEP_CSV_HEADER: &str = "n,k,r,alpha,c,gamma,p,epsilon,T,trials,errors,skipped,ber,ci_low,ci_high,purity_mean,purity_all_good,ones_mean,zeros_mean,lower_bound,seed,status";

impl SweepPoint {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// The point's estimate, when it has one.
    pub fn estimate(&self, confidence: f64) -> Option<BerEstimate> {
        Some(BerEstimate {
            trials: self.trials?,
            errors: self.errors?,
            skipped: self.skipped?,
            ber: self.ber?,
            ci_low: self.ci_low?,
            ci_high: self.ci_high?,
            confidence,
        })
    }
}

/// `alpha - ln k / ln n`.
pub fn point_gamma(alpha: f64, k: usize, n: usize) -> f64 {
    if n <= 1 {
        return alpha;
    }
    alpha - (k as f64).ln() / (n as f64).ln()
}

fn run_point(point: &GridPoint, cfg: &SweepConfig) -> SweepPoint {
    let n = point.k * point.r;
    let t = point.t_rule.resolve(point.k);
    let gamma = point_gamma(point.alpha, point.k, n);
    let lower_bound = if gamma > 0.0 {
        theory::theorem1_lower_bound(point.p, gamma).unwrap_or(0.0)
    } else {
        0.0
    };
    let mut row = SweepPoint {
        n,
        k: point.k,
        r: point.r,
        alpha: point.alpha,
        c: point.c,
        gamma,
        p: point.p,
        epsilon: None,
        t,
        trials: None,
        errors: None,
        skipped: None,
        ber: None,
        ci_low: None,
        ci_high: None,
        purity_mean: None,
        purity_all_good: None,
        ones_mean: None,
        zeros_mean: None,
        lower_bound,
        seed: cfg.seed.master,
        status: String::new(),
    };
    let outcome = (|| -> Result<TrialSummary> {
        let regime = ScalingRegime::new(point.alpha, point.c, point.alpha - gamma)?;
        let epsilon = derive_erasure(&regime, n)?;
        row.epsilon = Some(epsilon);
        let params = ModelParams::new(n, point.k, point.r, point.p, epsilon)?;
        let spec = TrialSpec::new(params, t, cfg.trials, cfg.seed, cfg.tie);
        run_trials(&spec, cfg.threads)
    })();
    match outcome {
        Ok(summary) => {
            row.skipped = Some(summary.skipped);
            row.trials = Some(summary.scored);
            match summary.estimate(cfg.confidence) {
                Ok(est) => {
                    row.errors = Some(est.errors);
                    row.ber = Some(est.ber);
                    row.ci_low = Some(est.ci_low);
                    row.ci_high = Some(est.ci_high);
                    row.purity_mean = summary.purity_mean();
                    row.purity_all_good = summary.all_good_fraction();
                    row.ones_mean = summary.ones_mean();
                    row.zeros_mean = summary.zeros_mean();
                    row.status = "ok".into();
                }
                Err(e) => row.status = format!("error: {e}"),
            }
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// One [`SweepPoint`] per grid entry, in grid order. Failing points carry the
/// error in `status` and do not abort the sweep.
pub fn sweep(grid: &[GridPoint], cfg: &SweepConfig) -> Vec<SweepPoint> {
    grid.iter().map(|point| run_point(point, cfg)).collect()
}

/// `(k, r)` pairs with `k = ceil((k r)^0.2)` and `n = k r` in `[10^3, 10^4]`.
pub const SMALL_CLUSTER_LADDER: [(usize, usize); 4] = [(4, 250), (5, 600), (6, 1000), (7, 1400)];
/// `(k, r)` pairs of the large-cluster ladder.
pub const LARGE_CLUSTER_LADDER: [(usize, usize); 4] = [(8, 64), (12, 128), (16, 256), (24, 512)];

fn ladder(pairs: &[(usize, usize)], alpha: f64, c: f64, p: f64) -> Vec<GridPoint> {
    pairs
        .iter()
        .map(|&(k, r)| GridPoint {
            k,
            r,
            alpha,
            c,
            p,
            t_rule: TRule::EqualsK,
        })
        .collect()
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 4] = ["large-cluster", "small-cluster", "supercritical", "purity"];

/// Named regime grids.
///
/// * `large-cluster`: [`LARGE_CLUSTER_LADDER`], alpha 0.25, c 2, p 0.1, T = k.
/// * `small-cluster`: [`SMALL_CLUSTER_LADDER`], alpha 0.45, c 2, p 0.3, T = k.
/// * `supercritical`: [`SMALL_CLUSTER_LADDER`], alpha 0.6, c 2, p 0.1, T = k.
/// * `purity`: the large-cluster ladder at alpha 0.25, then at alpha 0.6.
pub fn preset(name: &str) -> Option<Vec<GridPoint>> {
    match name {
        "large-cluster" => Some(ladder(&LARGE_CLUSTER_LADDER, 0.25, 2.0, 0.1)),
        "small-cluster" => Some(ladder(&SMALL_CLUSTER_LADDER, 0.45, 2.0, 0.3)),
        "supercritical" => Some(ladder(&SMALL_CLUSTER_LADDER, 0.6, 2.0, 0.1)),
        "purity" => {
            let mut grid = ladder(&LARGE_CLUSTER_LADDER, 0.25, 2.0, 0.1);
            grid.extend(ladder(&LARGE_CLUSTER_LADDER, 0.6, 2.0, 0.1));
            Some(grid)
        }
        _ => None,
    }
}

/// Writes sweep rows as CSV with [`SWEEP_CSV_HEADER`].
pub fn write_sweep_csv<W: std::io::Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    if points.is_empty() {
        writer
            .write_record(SWEEP_CSV_HEADER.split(','))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    for point in points {
        writer.serialize(point).map_err(|e| Error::Io(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepPoint>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Io(e.to_string()))
}

/// Empirical frequencies of the two overlap events at one parameter point,
/// next to their Chernoff bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapCheck {
    pub trials: u64,
    pub delta: f64,
    /// `n p_g (1 - delta)`.
    pub good_threshold: f64,
    /// `n p_b (1 + delta)^2`.
    pub bad_threshold: f64,
    /// Trials where some same-block row has similarity `<= good_threshold`.
    pub good_events: u64,
    /// Trials where some other-block row has similarity `>= bad_threshold`.
    pub bad_events: u64,
    pub p1: theory::BoundReport,
    pub p2: theory::BoundReport,
}

impl OverlapCheck {
    pub fn good_frequency(&self) -> f64 {
        self.good_events as f64 / self.trials as f64
    }

    pub fn bad_frequency(&self) -> f64 {
        self.bad_events as f64 / self.trials as f64
    }

    fn std_error(freq: f64, trials: u64) -> f64 {
        (freq * (1.0 - freq) / trials as f64).sqrt()
    }

    /// Frequency does not exceed the bound by more than three standard errors.
    pub fn good_bound_holds(&self) -> bool {
        let f = self.good_frequency();
        f <= self.p1.value + 3.0 * Self::std_error(f, self.trials)
    }

    pub fn bad_bound_holds(&self) -> bool {
        let f = self.bad_frequency();
        f <= self.p2.value + 3.0 * Self::std_error(f, self.trials)
    }
}

/// Simulates the similarity profile of row 0 and counts how often each
/// overlap event occurs.
pub fn overlap_events(
    params: &ModelParams,
    delta: f64,
    trials: u64,
    seed: Seed,
    threads: usize,
) -> Result<OverlapCheck> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let (n, k, r) = (params.n() as u64, params.k() as u64, params.r() as u64);
    let (eps, p) = (params.epsilon(), params.p());
    let p1 = theory::chernoff_good(n, k, eps, p, delta)?;
    let p2 = theory::chernoff_bad(n, k, r, eps, delta)?;
    let good_threshold = n as f64 * theory::p_good(eps, p) * (1.0 - delta);
    let bad_threshold = n as f64 * theory::p_bad(eps) * (1.0 + delta) * (1.0 + delta);
    let events: Vec<Result<(bool, bool)>> = with_threads(threads, || {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let sampler = InstanceSampler::new(*params, seed.with_stream(i));
                let obs = sampler.target_row(0);
                let sims = sampler.similarity_profile(&obs, 0);
                let truth = sampler.truth();
                let (mut min_good, mut max_bad) = (u32::MAX, 0u32);
                for (i, &s) in sims.iter().enumerate().skip(1) {
                    if truth.same_row_block(i, 0) {
                        min_good = min_good.min(s);
                    } else {
                        max_bad = max_bad.max(s);
                    }
                }
                let good = min_good != u32::MAX && min_good as f64 <= good_threshold;
                let bad = k < n && max_bad as f64 >= bad_threshold;
                Ok((good, bad))
            })
            .collect()
    });
    let (mut good_events, mut bad_events) = (0, 0);
    for e in events {
        let (g, b) = e?;
        good_events += g as u64;
        bad_events += b as u64;
    }
    Ok(OverlapCheck {
        trials,
        delta,
        good_threshold,
        bad_threshold,
        good_events,
        bad_events,
        p1,
        p2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_examples() {
        let (lo, _) = wilson_interval(0, 40, 0.9).unwrap();
        assert_eq!(lo, 0.0);
        let (lo, hi) = wilson_interval(50, 100, 0.95).unwrap();
        assert!((lo - 0.40).abs() <= 0.015 && (hi - 0.60).abs() <= 0.015, "{lo} {hi}");
        // z = 1.96 by hand: centre 0.5, half = 1.96 / 1.0384 * sqrt(0.0025 + 0.000096)
        let half = 1.959_963_984_540_054 / (1.0 + 3.841_458_820_694_124 / 100.0)
            * (0.25f64 / 100.0 + 3.841_458_820_694_124 / 40_000.0).sqrt();
        assert!((hi - (0.5 + half)).abs() < 1e-12);
        for trials in [1u64, 2, 7, 100, 1000] {
            for errors in 0..=trials.min(50) {
                for conf in [0.5, 0.95, 0.999] {
                    let (lo, hi) = wilson_interval(errors, trials, conf).unwrap();
                    let phat = errors as f64 / trials as f64;
                    assert!(0.0 <= lo && lo <= phat && phat <= hi && hi <= 1.0);
                }
            }
        }
        assert!(wilson_interval(3, 2, 0.95).is_err());
        assert!(wilson_interval(0, 0, 0.95).is_err());
        assert!(wilson_interval(1, 2, 1.0).is_err());
    }

    #[test]
    fn degenerate_channel_skips_everything() {
        let params = ModelParams::new(2, 1, 2, 0.0, 0.0).unwrap();
        let err = estimate_ber(&params, 1, 10, Seed::new(0, 0), TiePolicy::LowestIndex).unwrap_err();
        assert_eq!(err, Error::AllTrialsSkipped(10));
    }

    #[test]
    fn skipped_trials_are_accounted() {
        let params = ModelParams::new(4, 2, 2, 0.1, 0.3).unwrap();
        let spec = TrialSpec::new(params, 1, 500, Seed::new(8, 0), TiePolicy::LowestIndex);
        let summary = run_trials(&spec, 0).unwrap();
        assert_eq!(summary.scored + summary.skipped, 500);
        assert!(summary.skipped > 0);
        let est = summary.estimate(0.95).unwrap();
        assert_eq!(est.trials + est.skipped, 500);
    }

    #[test]
    fn oracle_all_ones_truth_has_no_error() {
        let params = ModelParams::new(3, 1, 3, 0.0, 0.5).unwrap();
        let truth = GroundTruth::new(3, vec![true; 9], vec![0, 1, 2], vec![0, 1, 2]).unwrap();
        let exact = exact_ber(&params, 1, &truth).unwrap();
        assert_eq!(exact.value, 0.0);
        assert!((exact.total_mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_mass_is_normalised() {
        for &(n, k, p, eps) in &[(2, 1, 0.25, 0.5), (3, 1, 0.1, 0.8), (3, 3, 0.3, 0.2), (2, 2, 0.0, 0.0)] {
            let params = ModelParams::from_cluster_size(n, k, p, eps).unwrap();
            for t in 1..n {
                let truth = GroundTruth::new(n / k, vec![true; (n / k) * (n / k)], (0..n).map(|i| i / k).collect(), (0..n).map(|i| i / k).collect()).unwrap();
                match exact_ber(&params, t, &truth) {
                    Ok(e) => assert!((e.total_mass - 1.0).abs() < 1e-12),
                    Err(Error::AllTrialsSkipped(_)) => assert_eq!(eps, 0.0),
                    Err(e) => panic!("{e}"),
                }
            }
        }
        let big = ModelParams::new(4, 2, 2, 0.1, 0.5).unwrap();
        assert_eq!(exact_ber_averaged(&big, 1).unwrap_err(), Error::OracleTooLarge(4));
    }

    #[test]
    fn gamma_and_lower_bound_columns() {
        assert!((point_gamma(0.45, 4, 1000) - (0.45 - 4f64.ln() / 1000f64.ln())).abs() < 1e-15);
        let cfg = SweepConfig::new(5, Seed::new(1, 0));
        let bad = GridPoint {
            k: 2,
            r: 8,
            alpha: 0.25,
            c: 5.0,
            p: 0.1,
            t_rule: TRule::EqualsK,
        };
        let rows = sweep(&[bad], &cfg);
        assert!(rows[0].status.starts_with("error:"), "{}", rows[0].status);
        assert_eq!(rows[0].ber, None);
    }
}
