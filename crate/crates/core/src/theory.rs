//! Closed-form quantities for the local-popularity analysis.
//!
//! For a row `i` in the target's block, `s(target, i) ~ B(n, p_g)` with
//! `p_g = (1 - eps)^2 ((1 - p)^2 + p^2)`; for a row outside it the mean
//! agreement is `n p_b` with `p_b = (1 - eps)^2 / 2`. Chernoff and union bounds
//! control the two overlap tails:
//!
//! ```text
//! Pr[min_{good i} s <= n p_g (1 - d)]       <= k exp(-n p_g d^2 / 3)                         = p1
//! Pr[max_{bad i}  s >= n p_b (1 + d)^2]     <= (n - k) exp(-n p_b d^2 / 3) + 2r exp(-r d^2 / 6) = p2
//! ```
//!
//! Bounds are evaluated in log space and are not clipped to 1; a bound is
//! flagged vacuous when it is at least 1.
//!
//! The analysis also uses two thresholds on the number of `1`s in the chosen
//! column among the `k` neighbours, `t1(n) = min{sqrt(log n), 1/(2 gamma_n)}`
//! and `t2(n) = max{mu + min{sigma^(1/4), sqrt(log n)} sigma, sqrt(log n)}`.
//! They are reference formulas only; the harness reports the raw counts.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Result};

fn check_channel(epsilon: f64, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(invalid(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    if !(0.0..0.5).contains(&p) {
        return Err(invalid(format!("p must lie in [0, 1/2), got {p}")));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Per-column agreement probability for two rows of the same block.
pub fn p_good(epsilon: f64, p: f64) -> f64 {
    let keep = 1.0 - epsilon;
    keep * keep * ((1.0 - p) * (1.0 - p) + p * p)
}

/// Mean per-column agreement probability for two rows of different blocks.
pub fn p_bad(epsilon: f64) -> f64 {
    let keep = 1.0 - epsilon;
    keep * keep / 2.0
}

/// Inputs echoed by a [`BoundReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: u64,
    pub k: u64,
    pub r: Option<u64>,
    pub epsilon: f64,
    pub p: Option<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// May exceed 1 and may underflow to 0; see `log_value`.
    pub value: f64,
    pub log_value: f64,
    pub vacuous: bool,
    pub inputs: BoundInputs,
}

impl BoundReport {
    fn from_log(log_value: f64, inputs: BoundInputs) -> Self {
        Self {
            value: log_value.exp(),
            log_value,
            vacuous: log_value >= 0.0,
            inputs,
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// `p1 = k exp(-n p_g delta^2 / 3)`.
pub fn chernoff_good(n: u64, k: u64, epsilon: f64, p: f64, delta: f64) -> Result<BoundReport> {
    check_channel(epsilon, p)?;
    check_delta(delta)?;
    let log_value = (k as f64).ln() - n as f64 * p_good(epsilon, p) * delta * delta / 3.0;
    Ok(BoundReport::from_log(
        log_value,
        BoundInputs {
            n,
            k,
            r: None,
            epsilon,
            p: Some(p),
            delta,
        },
    ))
}

/// `p2 = (n - k) exp(-n p_b delta^2 / 3) + 2 r exp(-r delta^2 / 6)`.
pub fn chernoff_bad(n: u64, k: u64, r: u64, epsilon: f64, delta: f64) -> Result<BoundReport> {
    check_channel(epsilon, 0.0)?;
    check_delta(delta)?;
    if k > n {
        return Err(invalid(format!("k = {k} exceeds n = {n}")));
    }
    let d2 = delta * delta;
    let outside = ((n - k) as f64).ln() - n as f64 * p_bad(epsilon) * d2 / 3.0;
    let mixture = (2.0 * r as f64).ln() - r as f64 * d2 / 6.0;
    Ok(BoundReport::from_log(
        log_sum_exp(outside, mixture),
        BoundInputs {
            n,
            k,
            r: Some(r),
            epsilon,
            p: None,
            delta,
        },
    ))
}

/// Grid step used by [`separation_delta`].
pub const SEPARATION_GRID_STEP: f64 = 1e-4;

fn separates(epsilon: f64, p: f64, delta: f64) -> bool {
    p_good(epsilon, p) * (1.0 - delta) > p_bad(epsilon) * (1.0 + delta) * (1.0 + delta)
}

/// Largest `delta` on the `1e-4` grid with `p_g (1 - delta) > p_b (1 + delta)^2`.
///
/// When `p` is so close to 1/2 that no grid point separates, half of the exact
/// root is returned instead.
pub fn separation_delta(epsilon: f64, p: f64) -> Result<f64> {
    check_channel(epsilon, p)?;
    // p_g / p_b does not depend on epsilon; the root solves d^2 + (2 + rho) d + 1 - rho = 0
    let rho = 2.0 * ((1.0 - p) * (1.0 - p) + p * p);
    let b = 2.0 + rho;
    let root = (-b + (b * b + 4.0 * (rho - 1.0)).sqrt()) / 2.0;
    let mut m = (root / SEPARATION_GRID_STEP).floor() as i64;
    while m > 0 && !separates(epsilon, p, m as f64 * SEPARATION_GRID_STEP) {
        m -= 1;
    }
    while m + 1 < 10_000 && separates(epsilon, p, (m + 1) as f64 * SEPARATION_GRID_STEP) {
        m += 1;
    }
    if m > 0 {
        Ok(m as f64 * SEPARATION_GRID_STEP)
    } else {
        Ok(root / 2.0)
    }
}

/// `p^m / (p^m + (1 - p)^m)` with `m = floor(1 / gamma)`; 0 when `p = 0`.
pub fn theorem1_lower_bound(p: f64, gamma: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&p) {
        return Err(invalid(format!("p must lie in [0, 1/2), got {p}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let m = (1.0 / gamma).floor();
    Ok(logistic_error(m, p))
}

/// `p^d / (p^d + (1 - p)^d) = 1 / (1 + ((1 - p) / p)^d)` for `p > 0`.
fn logistic_error(d: f64, p: f64) -> f64 {
    let x = d * ((1.0 - p) / p).ln();
    1.0 / (1.0 + x.exp())
}

/// Posterior probability that the column's true value is 0 given `ones` and
/// `zeros` among its observed neighbour entries; depends on `ones - zeros`
/// only.
pub fn posterior_error(ones: u64, zeros: u64, p: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&p) {
        return Err(invalid(format!("p must lie in [0, 1/2), got {p}")));
    }
    let d = ones as f64 - zeros as f64;
    if p == 0.0 {
        return Ok(match ones.cmp(&zeros) {
            std::cmp::Ordering::Greater => 0.0,
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Equal => 0.5,
        });
    }
    Ok(logistic_error(d, p))
}

/// Probability that an entry known not to be `1` is `0` rather than erased,
/// given the column's true value.
///
/// With `p = 0` and `truth = 1` no such entry can be `0` and the result is 0,
/// including the degenerate `epsilon = 0` case where the conditioning event is
/// empty.
pub fn p_zero_given_truth(p: f64, epsilon: f64, truth: bool) -> Result<f64> {
    check_channel(epsilon, p)?;
    let keep = 1.0 - epsilon;
    let zero = if truth { p * keep } else { (1.0 - p) * keep };
    let denom = zero + epsilon;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(zero / denom)
}

/// Mean and standard deviation of the `1` count in a true-1 column over `k`
/// neighbours, `B(k, (1 - eps)(1 - p))`.
pub fn column_ones_moments(k: u64, epsilon: f64, p: f64) -> Result<(f64, f64)> {
    check_channel(epsilon, p)?;
    let q = (1.0 - epsilon) * (1.0 - p);
    let mu = k as f64 * q;
    let var = k as f64 * q * (1.0 - q);
    Ok((mu, var.sqrt()))
}

/// Standard normal upper tail `Q(t)`.
///
/// Values below the smallest normal `f64` (t above about 37.5) lose relative
/// precision; use [`ln_q_tail`] there.
pub fn q_tail(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// `ln Q(t)`, accurate over the whole real line.
pub fn ln_q_tail(t: f64) -> f64 {
    if t < 30.0 {
        return q_tail(t).ln();
    }
    // Q(t) = phi(t) / (t + 1/(t + 2/(t + 3/(t + ...))))
    let mut tail = t;
    for j in (1..=40).rev() {
        tail = t + j as f64 / tail;
    }
    -0.5 * t * t - 0.5 * (2.0 * std::f64::consts::PI).ln() - tail.ln()
}

/// Exact `Pr[X > threshold]` for `X ~ B(n, p)`.
///
/// Terms are built by ratio recurrences around the largest term of the tail
/// and summed smallest first.
pub fn binomial_tail(n: u64, p: f64, threshold: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("p must lie in [0, 1], got {p}")));
    }
    if threshold > n {
        return Err(invalid(format!("threshold {threshold} exceeds n = {n}")));
    }
    if threshold == n || p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let first = threshold + 1;
    let mode = ((n + 1) as f64 * p).floor().min(n as f64) as u64;
    let anchor = first.max(mode);
    let odds = p / (1.0 - p);
    let log_anchor =
        ln_binomial(n, anchor) + anchor as f64 * p.ln() + (n - anchor) as f64 * (1.0 - p).ln();

    const CUTOFF: f64 = 1e-22;
    let mut up = Vec::new();
    let mut ratio = 1.0;
    let mut i = anchor;
    while i < n {
        ratio *= (n - i) as f64 / (i + 1) as f64 * odds;
        i += 1;
        if ratio < CUTOFF {
            break;
        }
        up.push(ratio);
    }
    let mut down = Vec::new();
    ratio = 1.0;
    i = anchor;
    while i > first {
        ratio *= i as f64 / (n - i + 1) as f64 / odds;
        i -= 1;
        if ratio < CUTOFF {
            break;
        }
        down.push(ratio);
    }
    let sum: f64 = up.iter().rev().sum::<f64>() + down.iter().rev().sum::<f64>() + 1.0;
    Ok((log_anchor.exp() * sum).min(1.0))
}

/// A binomial tail at `t` standard deviations next to the normal tail `Q(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModerateDeviation {
    pub n: u64,
    pub p: f64,
    pub t: f64,
    /// `floor(n p + t sqrt(n p (1 - p)))`.
    pub threshold: u64,
    /// `Pr[X > threshold]` for `X ~ B(n, p)`.
    pub tail: f64,
    pub q: f64,
    pub ratio: f64,
}

pub fn moderate_deviation(n: u64, p: f64, t: f64) -> Result<ModerateDeviation> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("p must lie in (0, 1), got {p}")));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(invalid(format!("t must be a finite non-negative real, got {t}")));
    }
    let nf = n as f64;
    let threshold = (nf * p + t * (nf * p * (1.0 - p)).sqrt()).floor();
    if threshold > nf {
        return Err(invalid(format!("threshold {threshold} exceeds n = {n}")));
    }
    let threshold = threshold as u64;
    let tail = binomial_tail(n, p, threshold)?;
    let q = q_tail(t);
    Ok(ModerateDeviation {
        n,
        p,
        t,
        threshold,
        tail,
        q,
        ratio: tail / q,
    })
}
