//! Seeded generation of synthetic instances.
//!
//! Block values and the two balanced assignments are drawn from a ChaCha8
//! stream selected by [`Seed`]. The channel noise is counter-based: the erasure
//! and flip draws for entry `(i, j)` are a pure function of two per-instance
//! keys and the linear index `i * n + j`. Any subset of the observation can
//! therefore be produced on its own and always agrees bit-for-bit with the
//! fully materialised instance.
//!
//! Given the truth and the target row, the similarity of row `i` to the
//! target is a sum of two binomials: among the target's observed columns,
//! `M+` entries have `X(i, j)` equal to the target's observed bit and agree
//! with probability `(1 - eps)(1 - p)`; the other `M-` agree with probability
//! `(1 - eps) p`. Both counts depend on `i` only through its block, and the
//! draws are independent of row `i` on the target's erased columns.
//! [`InstanceSampler::similarity_profile`] samples from this law directly,
//! which lets the Monte Carlo harness skip the `n` by `|observed|` overlap.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Entry, GroundTruth, ModelParams, Observation, ScalingRegime};

/// Master seed plus substream selector. Identical pairs reproduce identical
/// instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub master: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn counter_draw(key: u64, index: u64) -> f64 {
    let bits = mix64(key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `epsilon = 1 - c / n^alpha`; rejects results outside `[0, 1)`.
pub fn derive_erasure(regime: &ScalingRegime, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n must be positive to derive epsilon"));
    }
    let scale = (n as f64).powf(regime.alpha());
    let epsilon = 1.0 - regime.c() / scale;
    if epsilon < 0.0 {
        return Err(invalid(format!(
            "epsilon = 1 - c/n^alpha < 0: c = {} exceeds n^alpha = {scale} (n = {n}, alpha = {})",
            regime.c(),
            regime.alpha()
        )));
    }
    if epsilon >= 1.0 {
        return Err(invalid(format!(
            "epsilon = 1 - c/n^alpha rounds to 1 (c = {}, n^alpha = {scale})",
            regime.c()
        )));
    }
    Ok(epsilon)
}

/// One use of the BSC followed by the erasure channel, driven by two uniform
/// draws in `[0, 1)`: the entry is erased iff `erase_draw < epsilon`, and
/// otherwise flipped iff `flip_draw < p`.
pub fn flip_and_erase(x: bool, p: f64, epsilon: f64, erase_draw: f64, flip_draw: f64) -> Entry {
    if erase_draw < epsilon {
        Entry::Erased
    } else {
        Entry::from_bit(x ^ (flip_draw < p))
    }
}

/// Uniform balanced assignment: a shuffle of `(0,..,0, 1,..,1, .., r-1)`.
fn balanced_assignment<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut layout: Vec<usize> = (0..n).map(|i| i / k).collect();
    layout.shuffle(rng);
    layout
}

/// Draws fair-coin block values and two independent uniform balanced
/// assignments.
pub fn draw_truth<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> GroundTruth {
    let r = params.r();
    let mut values = vec![false; r * r];
    for chunk in values.chunks_mut(64) {
        let word = rng.next_u64();
        for (j, v) in chunk.iter_mut().enumerate() {
            *v = (word >> j) & 1 == 1;
        }
    }
    let rows = balanced_assignment(params.n(), params.k(), rng);
    let cols = balanced_assignment(params.n(), params.k(), rng);
    GroundTruth::new(r, values, rows, cols).expect("balanced by construction")
}

/// A drawn instance whose observed entries can be produced lazily.
#[derive(Debug, Clone)]
pub struct InstanceSampler {
    params: ModelParams,
    truth: GroundTruth,
    erase_key: u64,
    flip_key: u64,
}

impl InstanceSampler {
    pub fn new(params: ModelParams, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let truth = draw_truth(&params, &mut rng);
        let erase_key = rng.next_u64();
        let flip_key = rng.next_u64();
        Self {
            params,
            truth,
            erase_key,
            flip_key,
        }
    }

    /// Conditions on a fixed truth; only the channel noise depends on `seed`.
    pub fn with_truth(params: ModelParams, truth: GroundTruth, seed: Seed) -> Result<Self> {
        if truth.n() != params.n() || truth.r() != params.r() {
            return Err(invalid(format!(
                "frozen truth has n = {}, r = {} but params have n = {}, r = {}",
                truth.n(),
                truth.r(),
                params.n(),
                params.r()
            )));
        }
        let mut rng = seed.rng();
        let erase_key = rng.next_u64();
        let flip_key = rng.next_u64();
        Ok(Self {
            params,
            truth,
            erase_key,
            flip_key,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn into_truth(self) -> GroundTruth {
        self.truth
    }

    /// `Y(i, j)`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> Entry {
        let index = (i * self.params.n() + j) as u64;
        let erase_draw = counter_draw(self.erase_key, index);
        if erase_draw < self.params.epsilon() {
            return Entry::Erased;
        }
        let flip_draw = counter_draw(self.flip_key, index);
        flip_and_erase(
            self.truth.value(i, j),
            self.params.p(),
            self.params.epsilon(),
            erase_draw,
            flip_draw,
        )
    }

    fn fill(&self, obs: &mut Observation, i: usize, cols: impl Iterator<Item = usize>) {
        for j in cols {
            let e = self.entry(i, j);
            if e != Entry::Erased {
                obs.set(i, j, e);
            }
        }
    }

    /// The complete observation.
    pub fn observation(&self) -> Observation {
        let n = self.params.n();
        let mut obs = Observation::erased(n, n);
        for i in 0..n {
            self.fill(&mut obs, i, 0..n);
        }
        obs
    }

    /// Observation that matches the full instance on row `target` and, for
    /// every other row, on the columns observed in `target`. All other entries
    /// are left erased. Similarities to `target` computed on it equal those of
    /// the full instance.
    pub fn target_overlap(&self, target: usize) -> Observation {
        let n = self.params.n();
        let mut obs = Observation::erased(n, n);
        self.fill(&mut obs, target, 0..n);
        let observed: Vec<usize> = (0..n)
            .filter(|&j| obs.get(target, j) != Entry::Erased)
            .collect();
        for i in (0..n).filter(|&i| i != target) {
            self.fill(&mut obs, i, observed.iter().copied());
        }
        obs
    }

    /// Observation with only row `target` generated.
    pub fn target_row(&self, target: usize) -> Observation {
        let n = self.params.n();
        let mut obs = Observation::erased(n, n);
        self.fill(&mut obs, target, 0..n);
        obs
    }

    /// Similarity of every row to `target`, drawn from its law given the
    /// truth and row `target` of `obs` (slot `target` is 0). Same law as
    /// computing similarities on the full instance, but not the same draws.
    pub fn similarity_profile(&self, obs: &Observation, target: usize) -> Vec<u32> {
        let (n, r) = (self.params.n(), self.params.r());
        let col_block = self.truth.col_block();
        // observed[b][v]: target's observed columns in block b with bit v
        let mut observed = vec![[0u64; 2]; r];
        for j in 0..n {
            match obs.get(target, j) {
                Entry::Erased => {}
                e => observed[col_block[j]][(e == Entry::One) as usize] += 1,
            }
        }
        let total: u64 = observed.iter().map(|c| c[0] + c[1]).sum();
        let base: u64 = observed.iter().map(|c| c[0]).sum();
        let lift: Vec<i64> = observed.iter().map(|c| c[1] as i64 - c[0] as i64).collect();
        let matching: Vec<u64> = self
            .truth
            .block_values()
            .chunks_exact(r)
            .map(|values| {
                let extra: i64 = values.iter().zip(&lift).map(|(&v, &d)| d * v as i64).sum();
                (base as i64 + extra) as u64
            })
            .collect();
        let keep = 1.0 - self.params.epsilon();
        let q_match = keep * (1.0 - self.params.p());
        let q_other = keep * self.params.p();
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.erase_key ^ mix64(self.flip_key ^ target as u64)));
        let mut draw = |trials: u64, q: f64| -> u32 {
            if trials == 0 || q <= 0.0 {
                return 0;
            }
            Binomial::new(trials, q.min(1.0)).expect("valid binomial").sample(&mut rng) as u32
        };
        let row_block = self.truth.row_block();
        (0..n)
            .map(|i| {
                if i == target {
                    return 0;
                }
                let m = matching[row_block[i]];
                draw(m, q_match) + draw(total - m, q_other)
            })
            .collect()
    }

    /// Fills, for each of `rows`, the columns erased in row `target`.
    pub fn fill_erased_columns(&self, obs: &mut Observation, target: usize, rows: &[usize]) {
        let erased = obs.erased_columns(target);
        for &i in rows {
            self.fill(obs, i, erased.iter().copied());
        }
    }

    /// Fills every column of the given rows.
    pub fn complete_rows(&self, obs: &mut Observation, rows: &[usize]) {
        let n = self.params.n();
        for &i in rows {
            self.fill(obs, i, 0..n);
        }
    }
}

/// Draws `(X, Y)` for one instance.
pub fn generate_instance(params: &ModelParams, seed: Seed) -> (GroundTruth, Observation) {
    let sampler = InstanceSampler::new(*params, seed);
    let obs = sampler.observation();
    (sampler.into_truth(), obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Binomial, DiscreteCDF};

    fn regime(alpha: f64, c: f64) -> ScalingRegime {
        ScalingRegime::new(alpha, c, 0.0).unwrap()
    }

    #[test]
    fn erasure_from_regime() {
        assert_eq!(derive_erasure(&regime(0.0, 0.5), 37).unwrap(), 0.5);
        assert!((derive_erasure(&regime(0.5, 1.0), 100).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(derive_erasure(&regime(0.25, 2.0), 16).unwrap(), 0.0);
        let err = derive_erasure(&regime(0.25, 3.0), 16).unwrap_err();
        assert!(err.to_string().contains("exceeds n^alpha"));
    }

    #[test]
    fn clean_channel_reproduces_x() {
        let params = ModelParams::new(12, 3, 4, 0.0, 0.0).unwrap();
        let (gt, obs) = generate_instance(&params, Seed::new(3, 0));
        let x = gt.materialize();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(obs.get(i, j), Entry::from_bit(x[i][j]));
            }
        }
    }

    #[test]
    fn determinism_and_balance() {
        let params = ModelParams::new(30, 5, 6, 0.2, 0.6).unwrap();
        let a = generate_instance(&params, Seed::new(11, 4));
        let b = generate_instance(&params, Seed::new(11, 4));
        assert_eq!(a, b);
        let c = generate_instance(&params, Seed::new(11, 5));
        assert_ne!(a.1, c.1);
        for s in 0..20 {
            let (gt, _) = generate_instance(&params, Seed::new(1, s));
            for b in 0..6 {
                assert_eq!(gt.row_block().iter().filter(|&&x| x == b).count(), 5);
                assert_eq!(gt.col_block().iter().filter(|&&x| x == b).count(), 5);
            }
        }
    }

    #[test]
    fn flip_and_erase_edges() {
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(flip_and_erase(true, 0.0, 0.0, u, u), Entry::One);
        }
        let mut rng = Seed::new(5, 0).rng();
        let eps = 1.0 - 1e-9;
        let erased = (0..100_000)
            .filter(|_| flip_and_erase(false, 0.0, eps, rng.random(), rng.random()) == Entry::Erased)
            .count();
        assert!(erased >= 99_990);
    }

    fn within_3_sigma(count: usize, total: usize, prob: f64) -> bool {
        let mean = total as f64 * prob;
        let sd = (total as f64 * prob * (1.0 - prob)).sqrt();
        (count as f64 - mean).abs() <= 3.0 * sd
    }

    #[test]
    fn flip_and_erase_distribution() {
        let mut rng = Seed::new(17, 2).rng();
        let draws = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            match flip_and_erase(true, 0.3, 0.5, rng.random(), rng.random()) {
                Entry::Erased => counts[0] += 1,
                Entry::One => counts[1] += 1,
                Entry::Zero => counts[2] += 1,
            }
        }
        assert!(within_3_sigma(counts[0], draws, 0.5), "{counts:?}");
        assert!(within_3_sigma(counts[1], draws, 0.35), "{counts:?}");
        assert!(within_3_sigma(counts[2], draws, 0.15), "{counts:?}");
    }

    #[test]
    fn channel_stages_commute_in_distribution() {
        // erase-then-flip vs flip-then-erase, each with its own draws
        let mut rng = Seed::new(23, 0).rng();
        let draws = 1_000_000;
        let (p, eps) = (0.2, 0.4);
        let mut a = [0usize; 3];
        let mut b = [0usize; 3];
        let idx = |e: Entry| match e {
            Entry::Erased => 0,
            Entry::One => 1,
            Entry::Zero => 2,
        };
        for _ in 0..draws {
            a[idx(flip_and_erase(true, p, eps, rng.random(), rng.random()))] += 1;
            let flipped = true ^ (rng.random::<f64>() < p);
            let e = if rng.random::<f64>() < eps {
                Entry::Erased
            } else {
                Entry::from_bit(flipped)
            };
            b[idx(e)] += 1;
        }
        for s in 0..3 {
            let pa = a[s] as f64 / draws as f64;
            let pb = b[s] as f64 / draws as f64;
            let se = (pa * (1.0 - pa) / draws as f64 * 2.0).sqrt();
            assert!((pa - pb).abs() <= 4.0 * se, "symbol {s}: {pa} vs {pb}");
        }
    }

    #[test]
    fn empirical_channel_rates() {
        let params = ModelParams::new(1000, 10, 100, 0.1, 0.8).unwrap();
        let (mut erased, mut total, mut flipped, mut unerased) = (0u64, 0u64, 0u64, 0u64);
        for s in 0..100 {
            let sampler = InstanceSampler::new(params, Seed::new(99, s));
            for i in 0..1000 {
                for j in 0..1000 {
                    total += 1;
                    match sampler.entry(i, j) {
                        Entry::Erased => erased += 1,
                        e => {
                            unerased += 1;
                            if e != Entry::from_bit(sampler.truth().value(i, j)) {
                                flipped += 1;
                            }
                        }
                    }
                }
            }
        }
        let interval = |trials: u64, prob: f64| {
            let b = Binomial::new(prob, trials).unwrap();
            (b.inverse_cdf(0.0005), b.inverse_cdf(0.9995))
        };
        let (lo, hi) = interval(total, 0.8);
        assert!((lo..=hi).contains(&erased), "{erased} not in [{lo}, {hi}]");
        let (lo, hi) = interval(unerased, 0.1);
        assert!((lo..=hi).contains(&flipped), "{flipped} not in [{lo}, {hi}]");
    }

    #[test]
    fn streams_are_independent() {
        // 3x3 contingency of entry symbols at matching positions, chi-square df = 4
        let params = ModelParams::new(200, 10, 20, 0.2, 0.5).unwrap();
        let a = InstanceSampler::new(params, Seed::new(7, 1));
        let b = InstanceSampler::new(params, Seed::new(7, 2));
        let idx = |e: Entry| match e {
            Entry::Erased => 0,
            Entry::One => 1,
            Entry::Zero => 2,
        };
        let mut table = [[0f64; 3]; 3];
        for i in 0..200 {
            for j in 0..200 {
                table[idx(a.entry(i, j))][idx(b.entry(i, j))] += 1.0;
            }
        }
        let total: f64 = table.iter().flatten().sum();
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..3).map(|c| table.iter().map(|r| r[c]).sum()).collect();
        let mut chi2 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let expected = rows[r] * cols[c] / total;
                chi2 += (table[r][c] - expected).powi(2) / expected;
            }
        }
        // 0.999 quantile of chi-square with 4 degrees of freedom
        assert!(chi2 < 18.467, "chi2 = {chi2}");
    }

    #[test]
    fn overlap_view_matches_full_instance() {
        let params = ModelParams::new(96, 8, 12, 0.15, 0.7).unwrap();
        for s in 0..10 {
            let sampler = InstanceSampler::new(params, Seed::new(41, s));
            let full = sampler.observation();
            let mut partial = sampler.target_overlap(0);
            for j in 0..96 {
                assert_eq!(partial.get(0, j), full.get(0, j));
            }
            for i in 1..96 {
                for j in 0..96 {
                    if full.get(0, j) != Entry::Erased {
                        assert_eq!(partial.get(i, j), full.get(i, j));
                    } else {
                        assert_eq!(partial.get(i, j), Entry::Erased);
                    }
                }
            }
            sampler.complete_rows(&mut partial, &[3, 50]);
            for j in 0..96 {
                assert_eq!(partial.get(3, j), full.get(3, j));
                assert_eq!(partial.get(50, j), full.get(50, j));
            }
        }
    }

    #[test]
    fn erased_column_fill_matches_full_instance() {
        let params = ModelParams::new(96, 8, 12, 0.15, 0.7).unwrap();
        let sampler = InstanceSampler::new(params, Seed::new(2, 9));
        let full = sampler.observation();
        let mut partial = sampler.target_row(0);
        sampler.fill_erased_columns(&mut partial, 0, &[5, 77]);
        for i in 0..96 {
            for j in 0..96 {
                let expected = if i == 0 || ((i == 5 || i == 77) && full.get(0, j) == Entry::Erased) {
                    full.get(i, j)
                } else {
                    Entry::Erased
                };
                assert_eq!(partial.get(i, j), expected, "({i}, {j})");
            }
        }
    }

    #[test]
    fn noiseless_profile_equals_computed_similarities() {
        // With p = 0 and eps = 0 both binomials are degenerate.
        for &(n, k) in &[(12, 3), (40, 8), (64, 1), (30, 30)] {
            let params = ModelParams::from_cluster_size(n, k, 0.0, 0.0).unwrap();
            for s in 0..5 {
                let sampler = InstanceSampler::new(params, Seed::new(17, s));
                let target = s as usize % n;
                let obs = sampler.observation();
                let expected = crate::filter::similarities(&obs, target).unwrap();
                assert_eq!(sampler.similarity_profile(&sampler.target_row(target), target), expected);
            }
        }
    }

    #[test]
    fn profile_law_matches_full_instance() {
        // Same frozen truth, independent noise: per-row similarity means and
        // variances from the two paths agree within sampling error.
        let params = ModelParams::new(48, 6, 8, 0.2, 0.5).unwrap();
        let truth = InstanceSampler::new(params, Seed::new(99, 0)).into_truth();
        let trials = 4000;
        let mut full = vec![(0.0, 0.0); 48];
        let mut fast = vec![(0.0, 0.0); 48];
        for s in 0..trials {
            let sampler = InstanceSampler::with_truth(params, truth.clone(), Seed::new(5, s)).unwrap();
            let a = crate::filter::similarities(&sampler.target_overlap(0), 0).unwrap();
            let b = sampler.similarity_profile(&sampler.target_row(0), 0);
            for i in 1..48 {
                let (x, y) = (a[i] as f64, b[i] as f64);
                full[i].0 += x;
                full[i].1 += x * x;
                fast[i].0 += y;
                fast[i].1 += y * y;
            }
        }
        let n = trials as f64;
        for i in 1..48 {
            let (m1, m2) = (full[i].0 / n, fast[i].0 / n);
            let (v1, v2) = (full[i].1 / n - m1 * m1, fast[i].1 / n - m2 * m2);
            let se = ((v1 + v2) / n).sqrt();
            assert!((m1 - m2).abs() <= 4.5 * se, "row {i}: means {m1} vs {m2}");
            // variance of a sample variance is about 2 v^2 / n for these
            // near-normal counts
            let se_v = (2.0 * (v1 * v1 + v2 * v2) / n).sqrt();
            assert!((v1 - v2).abs() <= 4.5 * se_v, "row {i}: variances {v1} vs {v2}");
        }
    }

    #[test]
    fn frozen_truth_is_respected() {
        let params = ModelParams::new(4, 2, 2, 0.0, 0.0).unwrap();
        let gt = GroundTruth::new(2, vec![true, false, false, true], vec![0, 1, 0, 1], vec![1, 1, 0, 0])
            .unwrap();
        let sampler = InstanceSampler::with_truth(params, gt.clone(), Seed::new(1, 1)).unwrap();
        let obs = sampler.observation();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(obs.get(i, j), Entry::from_bit(gt.value(i, j)));
            }
        }
        let other = ModelParams::new(6, 3, 2, 0.0, 0.0).unwrap();
        assert!(InstanceSampler::with_truth(other, gt, Seed::new(1, 1)).is_err());
    }
}
