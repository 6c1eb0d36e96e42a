//! Command-line front end.
//!
//! Every record echoes the resolved configuration, defaults included. Exit
//! codes: 0 on success, 1 on usage or parameter errors (including a run where
//! every trial was skipped), 2 when some sweep points failed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::channel::{derive_erasure, generate_instance, Seed};
use crate::error::{invalid, Error, Result};
use crate::filter::TiePolicy;
use crate::harness::{self, GridPoint, SweepConfig, TRule, TrialSpec};
use crate::model::{GroundTruth, ModelParams, ScalingRegime};
use crate::movielens;
use crate::theory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "localpop", version, about = "Local-popularity recommendation experiments")]
pub struct Cli {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 uses every core). Output does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output format [default: json for theory and oracle, csv otherwise].
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write records here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo BER of the recommendation for row 0.
    Simulate(SimulateArgs),
    /// Run a grid of regime points.
    Sweep(SweepArgs),
    /// Evaluate closed-form bounds.
    Theory(TheoryArgs),
    /// Exact BER by enumeration for n <= 3.
    Oracle(OracleArgs),
    /// Evaluate the neighbourhood vote on Movielens ratings.
    Movielens(MovielensArgs),
}

/// Model parameters shared by `simulate` and `oracle`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Number of users and items.
    #[arg(long)]
    pub n: usize,
    /// Cluster size.
    #[arg(long)]
    pub k: usize,
    /// Number of clusters; must equal n / k.
    #[arg(long)]
    pub r: Option<usize>,
    /// BSC flip probability.
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
    /// Erasure probability; derived as 1 - c / n^alpha when omitted.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Scaling exponent used when epsilon is omitted.
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    /// Scaling constant used when epsilon is omitted.
    #[arg(long, default_value_t = 2.0)]
    pub c: f64,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelParams> {
        let k = self.k;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let r = self.r.unwrap_or(self.n / k);
        let epsilon = match self.epsilon {
            Some(e) => e,
            None => {
                let beta = if self.n > 1 { (k as f64).ln() / (self.n as f64).ln() } else { 0.0 };
                derive_erasure(&ScalingRegime::new(self.alpha, self.c, beta)?, self.n)?
            }
        };
        ModelParams::new(self.n, k, r, self.p, epsilon)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Neighbourhood size [default: k].
    #[arg(long = "t")]
    pub t: Option<usize>,
    /// Number of trials.
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    /// Tie policy: lowest, random[:SEED].
    #[arg(long, default_value_t = TiePolicy::LowestIndex)]
    pub tie: TiePolicy,
    /// Confidence level of the Wilson interval.
    #[arg(long, default_value_t = harness::EXPLORATORY_CONFIDENCE)]
    pub confidence: f64,
    /// Draw the block structure once and condition every trial on it.
    #[arg(long, default_value_t = false)]
    pub freeze_truth: bool,
    /// Write the truth and observation of trial 0 as JSON to this path.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Write one JSON trace per scored trial to this path.
    #[arg(long)]
    pub dump_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Named grid: large-cluster, small-cluster, supercritical, purity.
    #[arg(long)]
    pub preset: Option<String>,
    /// Explicit grid point as K:R; repeatable.
    #[arg(long = "point", value_name = "K:R")]
    pub points: Vec<String>,
    /// Scaling exponent for explicit points.
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    /// Scaling constant for explicit points.
    #[arg(long, default_value_t = 2.0)]
    pub c: f64,
    /// BSC flip probability for explicit points.
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
    /// Fixed neighbourhood size for explicit points [default: k].
    #[arg(long = "t")]
    pub t: Option<usize>,
    /// Trials per point.
    #[arg(long, default_value_t = 500)]
    pub trials: u64,
    /// Tie policy: lowest, random[:SEED].
    #[arg(long, default_value_t = TiePolicy::LowestIndex)]
    pub tie: TiePolicy,
    /// Confidence level of the Wilson intervals.
    #[arg(long, default_value_t = harness::EXPLORATORY_CONFIDENCE)]
    pub confidence: f64,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["lower_bound", "chernoff", "posterior", "tail"])))]
pub struct TheoryArgs {
    /// Asymptotic BER lower bound from --p and --gamma.
    #[arg(long, default_value_t = false)]
    pub lower_bound: bool,
    /// Overlap bounds p1, p2 from --n, --k, --r, --epsilon, --p, --delta.
    #[arg(long, default_value_t = false)]
    pub chernoff: bool,
    /// Posterior error from --ones, --zeros, --p.
    #[arg(long, default_value_t = false)]
    pub posterior: bool,
    /// Binomial tail against Q(t) from --n, --p, --tn.
    #[arg(long, default_value_t = false)]
    pub tail: bool,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub r: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Deviation parameter [default: the separation delta of --epsilon, --p].
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub ones: Option<u64>,
    #[arg(long)]
    pub zeros: Option<u64>,
    /// Standard deviations for --tail [default: n^(1/8)].
    #[arg(long)]
    pub tn: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Neighbourhood size.
    #[arg(long = "t", default_value_t = 1)]
    pub t: usize,
    /// Fix the r*r block values (row-major bits, e.g. 0110) instead of
    /// averaging over them.
    #[arg(long)]
    pub block_values: Option<String>,
    /// Also run this many Monte Carlo trials for comparison (0 skips).
    #[arg(long, default_value_t = 0)]
    pub trials: u64,
    /// Confidence level of the Monte Carlo interval.
    #[arg(long, default_value_t = harness::ACCEPTANCE_CONFIDENCE)]
    pub confidence: f64,
}

#[derive(Debug, Args)]
pub struct MovielensArgs {
    /// Path of the ml-100k u.data file.
    #[arg(long, default_value = "data/ml-100k/u.data")]
    pub data: PathBuf,
    /// Fraction of ratings held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Neighbourhood sizes, comma separated.
    #[arg(long = "t", value_delimiter = ',', default_value = "5,10,20,40")]
    pub t: Vec<usize>,
    /// Tie policy: lowest, random[:SEED], expected.
    #[arg(long, default_value_t = TiePolicy::LowestIndex)]
    pub tie: TiePolicy,
    /// Scoring protocol: predict (every held-out rating) or recommend (one
    /// item per user).
    #[arg(long, default_value_t = movielens::Protocol::Predict)]
    pub protocol: movielens::Protocol,
}

/// Output of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRecord {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub p: f64,
    pub epsilon: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub requested: u64,
    pub tie: TiePolicy,
    pub confidence: f64,
    pub freeze_truth: bool,
    pub seed: u64,
    pub trials: u64,
    pub errors: u64,
    pub skipped: u64,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub purity_mean: f64,
    pub purity_all_good: f64,
    pub ones_mean: f64,
    pub zeros_mean: f64,
}

/// Output of `theory`; only the fields of the chosen mode are present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TheoryRecord {
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ones: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeros: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1_vacuous: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2_vacuous: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

/// Output of `oracle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub p: f64,
    pub epsilon: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub block_values: Option<String>,
    pub exact_ber: f64,
    pub total_mass: f64,
    pub skip_mass: f64,
    pub seed: u64,
    pub trials: Option<u64>,
    pub errors: Option<u64>,
    pub ber: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// CSV row of `movielens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovielensRecord {
    #[serde(rename = "T")]
    pub t: usize,
    pub test_pairs: u64,
    pub predicted: u64,
    pub abstained: u64,
    pub errors: f64,
    pub ber: f64,
    pub baseline_ber: f64,
    pub seed: u64,
}

/// JSON output of `movielens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovielensRun {
    pub data: String,
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub test_fraction: f64,
    pub tie: TiePolicy,
    pub protocol: movielens::Protocol,
    pub seed: u64,
    pub best_t: Option<usize>,
    pub reports: Vec<movielens::EvalReport>,
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

/// Serializes `records` as CSV (header plus rows) or, for JSON, as one object
/// per line.
pub fn write_records<T: Serialize, W: Write>(records: &[T], format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in records {
                w.serialize(r).map_err(io_err)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut out = out;
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(io_err)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

/// Parses output written by [`write_records`].
pub fn read_records<T: for<'de> Deserialize<'de>>(text: &str, format: Format) -> Result<Vec<T>> {
    match format {
        Format::Csv => csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(io_err),
        Format::Json => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(io_err))
            .collect(),
    }
}

fn parse_point(raw: &str) -> Result<(usize, usize)> {
    let (k, r) = raw
        .split_once(':')
        .ok_or_else(|| invalid(format!("grid point {raw:?} is not K:R")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| invalid(format!("grid point {raw:?} is not K:R")))
    };
    Ok((parse(k)?, parse(r)?))
}

fn parse_block_values(raw: &str, r: usize) -> Result<Vec<bool>> {
    let bits: Vec<bool> = raw
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(invalid(format!("block value {other:?} is not 0 or 1"))),
        })
        .collect::<Result<_>>()?;
    if bits.len() != r * r {
        return Err(invalid(format!("expected r*r = {} block values, got {}", r * r, bits.len())));
    }
    Ok(bits)
}

struct Context<'a> {
    seed: u64,
    threads: usize,
    format: Format,
    out: &'a mut dyn Write,
}

fn simulate(args: &SimulateArgs, ctx: &mut Context) -> Result<i32> {
    let params = args.model.resolve()?;
    let t = args.t.unwrap_or(params.k());
    let seed = Seed::new(ctx.seed, 0);
    let mut spec = TrialSpec::new(params, t, args.trials, seed, args.tie);
    if args.freeze_truth {
        let (truth, _) = generate_instance(&params, seed);
        spec = spec.with_frozen_truth(truth);
    }
    if let Some(path) = &args.dump {
        let (truth, obs) = match &spec.frozen_truth {
            Some(truth) => {
                let sampler = crate::channel::InstanceSampler::with_truth(params, truth.clone(), seed.with_stream(0))?;
                (truth.clone(), sampler.observation())
            }
            None => generate_instance(&params, seed.with_stream(0)),
        };
        let dump = serde_json::json!({ "truth": truth.to_dump(), "observation": obs.to_dump() });
        std::fs::write(path, format!("{dump}\n"))?;
    }
    if let Some(path) = &args.dump_trace {
        let mut w = BufWriter::new(File::create(path)?);
        for i in 0..args.trials {
            if let Some((_, _, trace)) = spec.trial_trace(i)? {
                serde_json::to_writer(&mut w, &trace.to_dump()).map_err(io_err)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
    }
    let summary = harness::run_trials(&spec, ctx.threads)?;
    let est = summary.estimate(args.confidence)?;
    let record = SimulateRecord {
        n: params.n(),
        k: params.k(),
        r: params.r(),
        p: params.p(),
        epsilon: params.epsilon(),
        t,
        requested: args.trials,
        tie: args.tie,
        confidence: args.confidence,
        freeze_truth: args.freeze_truth,
        seed: ctx.seed,
        trials: est.trials,
        errors: est.errors,
        skipped: est.skipped,
        ber: est.ber,
        ci_low: est.ci_low,
        ci_high: est.ci_high,
        purity_mean: summary.purity_mean().unwrap_or(f64::NAN),
        purity_all_good: summary.all_good_fraction().unwrap_or(f64::NAN),
        ones_mean: summary.ones_mean().unwrap_or(f64::NAN),
        zeros_mean: summary.zeros_mean().unwrap_or(f64::NAN),
    };
    write_records(&[record], ctx.format, &mut *ctx.out)?;
    Ok(0)
}

fn sweep(args: &SweepArgs, ctx: &mut Context) -> Result<i32> {
    let grid: Vec<GridPoint> = match (&args.preset, args.points.is_empty()) {
        (Some(_), false) => return Err(invalid("use either --preset or --point, not both")),
        (Some(name), true) => harness::preset(name).ok_or_else(|| {
            invalid(format!("unknown preset {name:?} (known: {})", harness::PRESETS.join(", ")))
        })?,
        (None, true) => return Err(invalid("sweep needs --preset or at least one --point")),
        (None, false) => args
            .points
            .iter()
            .map(|raw| {
                let (k, r) = parse_point(raw)?;
                Ok(GridPoint {
                    k,
                    r,
                    alpha: args.alpha,
                    c: args.c,
                    p: args.p,
                    t_rule: args.t.map_or(TRule::EqualsK, TRule::Fixed),
                })
            })
            .collect::<Result<_>>()?,
    };
    let cfg = SweepConfig {
        trials: args.trials,
        seed: Seed::new(ctx.seed, 0),
        tie: args.tie,
        confidence: args.confidence,
        threads: ctx.threads,
    };
    let points = harness::sweep(&grid, &cfg);
    match ctx.format {
        Format::Csv => harness::write_sweep_csv(&points, &mut *ctx.out)?,
        Format::Json => write_records(&points, Format::Json, &mut *ctx.out)?,
    }
    Ok(if points.iter().all(|p| p.is_ok()) { 0 } else { 2 })
}

fn need<T: Copy>(value: Option<T>, flag: &str, mode: &str) -> Result<T> {
    value.ok_or_else(|| invalid(format!("theory --{mode} needs --{flag}")))
}

fn theory_record(args: &TheoryArgs) -> Result<TheoryRecord> {
    if args.lower_bound {
        let mode = "lower-bound";
        let p = need(args.p, "p", mode)?;
        let gamma = need(args.gamma, "gamma", mode)?;
        Ok(TheoryRecord {
            mode: mode.into(),
            p: Some(p),
            gamma: Some(gamma),
            lower_bound: Some(theory::theorem1_lower_bound(p, gamma)?),
            ..Default::default()
        })
    } else if args.chernoff {
        let mode = "chernoff";
        let n = need(args.n, "n", mode)?;
        let k = need(args.k, "k", mode)?;
        let r = args.r.unwrap_or(if k > 0 { n / k } else { 0 });
        let epsilon = need(args.epsilon, "epsilon", mode)?;
        let p = need(args.p, "p", mode)?;
        let delta = match args.delta {
            Some(d) => d,
            None => theory::separation_delta(epsilon, p)?,
        };
        let p1 = theory::chernoff_good(n, k, epsilon, p, delta)?;
        let p2 = theory::chernoff_bad(n, k, r, epsilon, delta)?;
        Ok(TheoryRecord {
            mode: mode.into(),
            n: Some(n),
            k: Some(k),
            r: Some(r),
            p: Some(p),
            epsilon: Some(epsilon),
            delta: Some(delta),
            p1: Some(p1.value),
            p1_vacuous: Some(p1.vacuous),
            p2: Some(p2.value),
            p2_vacuous: Some(p2.vacuous),
            ..Default::default()
        })
    } else if args.posterior {
        let mode = "posterior";
        let ones = need(args.ones, "ones", mode)?;
        let zeros = need(args.zeros, "zeros", mode)?;
        let p = need(args.p, "p", mode)?;
        Ok(TheoryRecord {
            mode: mode.into(),
            p: Some(p),
            ones: Some(ones),
            zeros: Some(zeros),
            posterior_error: Some(theory::posterior_error(ones, zeros, p)?),
            ..Default::default()
        })
    } else {
        let mode = "tail";
        let n = need(args.n, "n", mode)?;
        let p = need(args.p, "p", mode)?;
        let tn = args.tn.unwrap_or((n as f64).powf(0.125));
        let md = theory::moderate_deviation(n, p, tn)?;
        Ok(TheoryRecord {
            mode: mode.into(),
            n: Some(n),
            p: Some(p),
            tn: Some(tn),
            threshold: Some(md.threshold),
            tail: Some(md.tail),
            q: Some(md.q),
            ratio: Some(md.ratio),
            ..Default::default()
        })
    }
}

fn oracle(args: &OracleArgs, ctx: &mut Context) -> Result<i32> {
    let params = args.model.resolve()?;
    let exact = match &args.block_values {
        Some(raw) => {
            let values = parse_block_values(raw, params.r())?;
            let layout: Vec<usize> = (0..params.n()).map(|i| i / params.k()).collect();
            let truth = GroundTruth::new(params.r(), values, layout.clone(), layout)?;
            harness::exact_ber(&params, args.t, &truth)?
        }
        None => harness::exact_ber_averaged(&params, args.t)?,
    };
    let mut record = OracleRecord {
        n: params.n(),
        k: params.k(),
        r: params.r(),
        p: params.p(),
        epsilon: params.epsilon(),
        t: args.t,
        block_values: args.block_values.clone(),
        exact_ber: exact.value,
        total_mass: exact.total_mass,
        skip_mass: exact.skip_mass,
        seed: ctx.seed,
        trials: None,
        errors: None,
        ber: None,
        ci_low: None,
        ci_high: None,
    };
    if args.trials > 0 {
        if args.block_values.is_some() {
            return Err(invalid("Monte Carlo comparison is only available for the averaged oracle"));
        }
        let spec = TrialSpec::new(params, args.t, args.trials, Seed::new(ctx.seed, 0), TiePolicy::RandomSeeded(ctx.seed));
        let est = harness::run_trials(&spec, ctx.threads)?.estimate(args.confidence)?;
        record.trials = Some(est.trials);
        record.errors = Some(est.errors);
        record.ber = Some(est.ber);
        record.ci_low = Some(est.ci_low);
        record.ci_high = Some(est.ci_high);
    }
    write_records(&[record], ctx.format, &mut *ctx.out)?;
    Ok(0)
}

/// Loads, splits and evaluates; shared with the acceptance checks.
pub fn movielens_run(
    data: &std::path::Path,
    test_fraction: f64,
    grid: &[usize],
    tie: TiePolicy,
    protocol: movielens::Protocol,
    seed: u64,
) -> Result<MovielensRun> {
    let table = movielens::load_ml100k(data)?;
    let split_seed = Seed::new(seed, 0);
    let (train, test) = movielens::split(&table, test_fraction, split_seed)?;
    let reports = movielens::evaluate_grid(&train, &test, grid, tie, split_seed, protocol)?;
    Ok(MovielensRun {
        data: data.display().to_string(),
        users: table.num_users(),
        items: table.num_items(),
        ratings: table.len(),
        test_fraction,
        tie,
        protocol,
        seed,
        best_t: movielens::best_report(&reports).map(|r| r.t),
        reports,
    })
}

fn run_movielens(args: &MovielensArgs, ctx: &mut Context) -> Result<i32> {
    let run = movielens_run(&args.data, args.test_fraction, &args.t, args.tie, args.protocol, ctx.seed)?;
    match ctx.format {
        Format::Json => write_records(&[run], Format::Json, &mut *ctx.out)?,
        Format::Csv => {
            let rows: Vec<MovielensRecord> = run
                .reports
                .iter()
                .map(|r| MovielensRecord {
                    t: r.t,
                    test_pairs: r.test_pairs,
                    predicted: r.predicted,
                    abstained: r.abstained,
                    errors: r.errors,
                    ber: r.ber,
                    baseline_ber: r.baseline_ber,
                    seed: r.split_seed.master,
                })
                .collect();
            write_records(&rows, Format::Csv, &mut *ctx.out)?;
        }
    }
    Ok(0)
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let default_format = match cli.command {
        Command::Theory(_) | Command::Oracle(_) => Format::Json,
        _ => Format::Csv,
    };
    let mut file;
    let out: &mut dyn Write = match &cli.output {
        Some(path) => {
            file = BufWriter::new(File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?);
            &mut file
        }
        None => out,
    };
    let mut ctx = Context {
        seed: cli.seed,
        threads: cli.threads,
        format: cli.format.unwrap_or(default_format),
        out,
    };
    let code = match &cli.command {
        Command::Simulate(a) => simulate(a, &mut ctx)?,
        Command::Sweep(a) => sweep(a, &mut ctx)?,
        Command::Theory(a) => {
            let record = theory_record(a)?;
            write_records(&[record], ctx.format, &mut *ctx.out)?;
            0
        }
        Command::Oracle(a) => oracle(a, &mut ctx)?,
        Command::Movielens(a) => run_movielens(a, &mut ctx)?,
    };
    ctx.out.flush()?;
    Ok(code)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match dispatch(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

/// The clap command tree, for help generation and introspection.
pub fn command() -> clap::Command {
    Cli::command()
}
