use localpop::channel::{generate_instance, InstanceSampler, Seed};
use localpop::filter::{self, TiePolicy};
use localpop::harness::{self, TrialSpec};
use localpop::model::{Entry, GroundTruth, ModelParams, Observation};

/// Straightforward step 2: first erased column with the most observed 1s
/// among `top`.
fn brute_force_choice(rows: &[Vec<Entry>], top: &[usize]) -> Option<usize> {
    let n = rows[0].len();
    let mut best: Option<(usize, usize)> = None;
    for j in (0..n).filter(|&j| rows[0][j] == Entry::Erased) {
        let ones = top.iter().filter(|&&i| rows[i][j] == Entry::One).count();
        if best.is_none_or(|(_, b)| ones > b) {
            best = Some((j, ones));
        }
    }
    best.map(|(j, _)| j)
}

/// Truths for n = 4 with the target in block 0: every row layout and block
/// table for k = 2 and k = 4, and a fixed set of tables for k = 1.
fn small_truths() -> Vec<GroundTruth> {
    let cols2 = vec![0, 0, 1, 1];
    let mut out = Vec::new();
    for rows in [[0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0]] {
        for values in 0..16u32 {
            let table = (0..4).map(|b| values & (1 << b) != 0).collect();
            out.push(GroundTruth::new(2, table, rows.to_vec(), cols2.clone()).unwrap());
        }
    }
    for v in [false, true] {
        out.push(GroundTruth::new(1, vec![v], vec![0; 4], vec![0; 4]).unwrap());
    }
    let identity: Vec<usize> = (0..4).collect();
    for values in [0x0000u32, 0xFFFF, 0x8421, 0x1248, 0xA5A5, 0x0F0F, 0x3C96, 0x6001] {
        let table = (0..16).map(|b| values & (1 << b) != 0).collect();
        out.push(GroundTruth::new(4, table, identity.clone(), identity.clone()).unwrap());
    }
    out
}

#[test]
fn noiseless_recommendations_on_all_small_instances() {
    // p = 0, so every observed entry equals X. Whenever the top set lies in
    // the target's block and some erased column with X(0, j) = 1 shows a 1 in
    // the top set, the recommendation is correct. Every erasure pattern is
    // enumerated and step 2 is compared against a direct implementation.
    let n = 4;
    let mut checked = 0;
    for truth in small_truths() {
        let x = truth.materialize();
        let x_bits: Vec<u64> = x
            .iter()
            .map(|row| row.iter().enumerate().map(|(j, &b)| (b as u64) << j).sum())
            .collect();
        for mask in 0..(1u32 << (n * n)) {
            if mask & 0xF == 0xF {
                continue; // target fully observed
            }
            let sampled: Vec<u64> = (0..n).map(|i| (mask as u64 >> (4 * i)) & 0xF).collect();
            let values: Vec<u64> = (0..n).map(|i| sampled[i] & x_bits[i]).collect();
            let obs = Observation::from_bit_planes(n, n, sampled.clone(), values).unwrap();
            let rows: Vec<Vec<Entry>> = (0..n)
                .map(|i| (0..n).map(|j| obs.entry(i, j).unwrap()).collect())
                .collect();
            for t in 1..n {
                let trace = filter::recommend(&obs, 0, t, TiePolicy::LowestIndex).unwrap();
                assert_eq!(Some(trace.chosen_column), brute_force_choice(&rows, &trace.top_set));
                assert!(trace.argmax_columns.contains(&trace.chosen_column));
                let all_good = trace.top_set.iter().all(|&i| truth.same_row_block(i, 0));
                let witness = (0..n).any(|j| {
                    rows[0][j] == Entry::Erased
                        && x[0][j]
                        && trace.top_set.iter().any(|&i| rows[i][j] == Entry::One)
                });
                if all_good && witness {
                    assert!(x[0][trace.chosen_column]);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 10_000, "{checked}");
}

#[test]
fn harness_matches_full_instance_pipeline() {
    let params = ModelParams::new(120, 6, 20, 0.2, 0.85).unwrap();
    let (t, trials, seed) = (6, 3000, Seed::new(21, 0));
    let spec = TrialSpec::new(params, t, trials, seed, TiePolicy::LowestIndex);
    let fast = harness::run_trials(&spec, 0).unwrap();

    let (mut errors, mut scored, mut purity) = (0u64, 0u64, 0.0);
    for s in 0..trials {
        let (truth, obs) = generate_instance(&params, Seed::new(1_000 + s, 3));
        if obs.sampled_in_row(0) == params.n() {
            continue;
        }
        let mut trace = filter::recommend(&obs, 0, t, TiePolicy::LowestIndex).unwrap();
        trace.attach_truth(&truth);
        errors += filter::score(&truth, &trace) as u64;
        purity += trace.purity.unwrap();
        scored += 1;
    }
    let b1 = fast.errors as f64 / fast.scored as f64;
    let b2 = errors as f64 / scored as f64;
    let se = (b1 * (1.0 - b1) / fast.scored as f64 + b2 * (1.0 - b2) / scored as f64).sqrt();
    assert!((b1 - b2).abs() <= 4.0 * se, "BER {b1} vs {b2}");
    assert!(b1 > 0.05 && b1 < 0.45, "configuration should be informative, BER {b1}");
    let p1 = fast.purity_mean().unwrap();
    let p2 = purity / scored as f64;
    assert!((p1 - p2).abs() < 0.03, "purity {p1} vs {p2}");
}

#[test]
fn trial_trace_is_consistent_with_truth() {
    let params = ModelParams::new(60, 5, 12, 0.1, 0.6).unwrap();
    let spec = TrialSpec::new(params, 5, 50, Seed::new(3, 0), TiePolicy::RandomSeeded(4));
    for i in 0..50 {
        let (truth, obs, trace) = spec.trial_trace(i).unwrap().unwrap();
        let sampler = InstanceSampler::new(params, Seed::new(3, i));
        assert_eq!(&truth, sampler.truth());
        assert_eq!(obs.entry(0, trace.chosen_column).unwrap(), Entry::Erased);
        assert_eq!(trace.top_set.len(), 5);
        assert!(!trace.top_set.contains(&0));
        let purity = trace.top_set.iter().filter(|&&r| truth.same_row_block(r, 0)).count() as f64 / 5.0;
        assert_eq!(trace.purity, Some(purity));
    }
}

#[test]
fn summaries_do_not_depend_on_thread_count() {
    let params = ModelParams::new(200, 10, 20, 0.1, 0.8).unwrap();
    let spec = TrialSpec::new(params, 10, 400, Seed::new(77, 0), TiePolicy::RandomSeeded(5));
    let one = harness::run_trials(&spec, 1).unwrap();
    let four = harness::run_trials(&spec, 4).unwrap();
    assert_eq!(one, four);
}

#[test]
fn frozen_truth_conditions_every_trial() {
    let params = ModelParams::new(3, 1, 3, 0.1, 0.5).unwrap();
    let truth = GroundTruth::new(3, vec![true, false, false, true, true, false, false, false, true], vec![0, 1, 2], vec![0, 1, 2]).unwrap();
    let spec = TrialSpec::new(params, 1, 60_000, Seed::new(12, 0), TiePolicy::RandomSeeded(1)).with_frozen_truth(truth.clone());
    let est = harness::run_trials(&spec, 0).unwrap().estimate(0.999).unwrap();
    let exact = harness::exact_ber(&params, 1, &truth).unwrap();
    assert!(est.ci_low <= exact.value && exact.value <= est.ci_high, "{est:?} vs {exact:?}");
}
