use localpop::cli::{self, Format, MovielensRecord, OracleRecord, SimulateRecord, TheoryRecord};
use localpop::harness::{self, SweepPoint};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("localpop").chain(args.iter().copied());
    let code = cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn lower_bound_query() {
    let (code, out, _) = run(&["theory", "--lower-bound", "--p", "0.2", "--gamma", "0.5"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let lb = v["lower_bound"].as_f64().unwrap();
    assert!((lb - 1.0 / 17.0).abs() < 1e-15, "{lb}");
    assert!(out.starts_with("{\"mode\":\"lower-bound\",\"p\":0.2,\"gamma\":0.5,\"lower_bound\":0.0588"));
}

#[test]
fn degenerate_simulation_is_a_usage_error() {
    let (code, out, err) = run(&["simulate", "--n", "2", "--k", "1", "--p", "0", "--epsilon", "0"]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.contains("skipped"), "{err}");
}

#[test]
fn invalid_parameters_name_the_violated_invariant() {
    let (code, _, err) = run(&["simulate", "--n", "10", "--k", "3", "--r", "3", "--epsilon", "0.5"]);
    assert_eq!(code, 1);
    assert!(err.contains("n = r·k violated"), "{err}");
    let (code, _, err) = run(&["simulate", "--n", "10", "--k", "2", "--bogus"]);
    assert_eq!(code, 1);
    assert!(err.contains("--bogus"), "{err}");
    let (code, _, err) = run(&["theory", "--lower-bound", "--p", "0.2"]);
    assert_eq!(code, 1);
    assert!(err.contains("--gamma"), "{err}");
}

#[test]
fn help_exits_cleanly() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["simulate", "sweep", "theory", "oracle", "movielens"] {
        assert!(out.contains(sub), "{sub}");
    }
}

#[test]
fn help_lists_every_flag_with_its_default() {
    let mut root = cli::command();
    root.build();
    let globals: Vec<clap::Arg> = root.get_arguments().cloned().collect();
    for sub in root.get_subcommands() {
        let name = sub.get_name().to_string();
        if name == "help" {
            continue;
        }
        let (code, help, _) = run(&[name.as_str(), "--help"]);
        assert_eq!(code, 0);
        for arg in sub.get_arguments().chain(globals.iter()) {
            let Some(long) = arg.get_long() else { continue };
            if long == "help" || long == "version" {
                continue;
            }
            assert!(help.contains(&format!("--{long}")), "{name}: --{long} missing from help");
            if !arg.get_num_args().is_some_and(|n| n.takes_values()) {
                continue; // switches default to off
            }
            let defaults: Vec<String> = arg
                .get_default_values()
                .iter()
                .map(|d| d.to_string_lossy().into_owned())
                .collect();
            if !defaults.is_empty() {
                let shown = format!("[default: {}]", defaults.join(" "));
                assert!(help.contains(&shown), "{name}: --{long} default {shown} missing");
            }
        }
    }
}

fn sweep_args(format: &str, threads: &str) -> Vec<String> {
    [
        "sweep", "--point", "4:30", "--point", "5:40", "--point", "2:8", "--alpha", "0.2", "--c", "2",
        "--trials", "300", "--seed", "7", "--threads", threads, "--format", format,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn sweep_output_is_deterministic_and_round_trips() {
    let args = sweep_args("csv", "1");
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    // 2:8 gives n = 16 and n^alpha < c, so that point fails
    let (code, first, _) = run(&argv);
    assert_eq!(code, 2);
    let (_, second, _) = run(&argv);
    assert_eq!(first, second);
    let args4 = sweep_args("csv", "4");
    let argv4: Vec<&str> = args4.iter().map(String::as_str).collect();
    assert_eq!(run(&argv4).1, first);

    assert_eq!(first.lines().next().unwrap(), harness::SWEEP_CSV_HEADER);
    let points = harness::read_sweep_csv(first.as_bytes()).unwrap();
    assert_eq!(points.len(), 3);
    assert!(points[0].is_ok() && points[1].is_ok());
    assert!(points[2].status.starts_with("error:"));
    assert_eq!(points[2].ber, None);
    let mut again = Vec::new();
    harness::write_sweep_csv(&points, &mut again).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), first);

    let json_args = sweep_args("json", "1");
    let argv: Vec<&str> = json_args.iter().map(String::as_str).collect();
    let (_, json, _) = run(&argv);
    let parsed: Vec<SweepPoint> = cli::read_records(&json, Format::Json).unwrap();
    assert_eq!(parsed, points);
    let mut again = Vec::new();
    cli::write_records(&parsed, Format::Json, &mut again).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), json);
}

fn assert_round_trip<T>(text: &str, format: Format)
where
    T: serde::Serialize + for<'de> serde::Deserialize<'de> + PartialEq + std::fmt::Debug,
{
    let records: Vec<T> = cli::read_records(text, format).unwrap();
    assert!(!records.is_empty());
    let mut again = Vec::new();
    cli::write_records(&records, format, &mut again).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), text);
}

#[test]
fn records_round_trip() {
    for (format, flag) in [(Format::Csv, "csv"), (Format::Json, "json")] {
        let (code, out, _) = run(&["simulate", "--n", "200", "--k", "10", "--trials", "50", "--format", flag]);
        assert_eq!(code, 0);
        assert_round_trip::<SimulateRecord>(&out, format);

        for theory in [
            &["theory", "--lower-bound", "--p", "0.3", "--gamma", "0.25"][..],
            &["theory", "--chernoff", "--n", "2000", "--k", "2", "--epsilon", "0.15", "--p", "0.02"][..],
            &["theory", "--posterior", "--ones", "3", "--zeros", "1", "--p", "0.1"][..],
            &["theory", "--tail", "--n", "10000", "--p", "0.5"][..],
        ] {
            let mut args = theory.to_vec();
            args.extend(["--format", flag]);
            let (code, out, err) = run(&args);
            assert_eq!(code, 0, "{err}");
            assert_round_trip::<TheoryRecord>(&out, format);
        }

        let (code, out, err) = run(&["oracle", "--n", "3", "--k", "1", "--p", "0.25", "--epsilon", "0.5", "--trials", "2000", "--format", flag]);
        assert_eq!(code, 0, "{err}");
        assert_round_trip::<OracleRecord>(&out, format);
    }
}

#[test]
fn simulate_echoes_resolved_configuration() {
    let (_, out, _) = run(&["simulate", "--n", "256", "--k", "16", "--alpha", "0.25", "--trials", "20", "--format", "json"]);
    let rec: Vec<SimulateRecord> = cli::read_records(&out, Format::Json).unwrap();
    let rec = &rec[0];
    assert_eq!((rec.n, rec.k, rec.r, rec.t), (256, 16, 16, 16));
    assert!((rec.epsilon - 0.5).abs() < 1e-12);
    assert_eq!(rec.tie.to_string(), "lowest");
    assert_eq!(rec.requested, 20);
    assert_eq!(rec.trials + rec.skipped, 20);
}

#[test]
fn dumps_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("instance.json");
    let trace = dir.path().join("trace.jsonl");
    let output = dir.path().join("out.csv");
    let (code, out, err) = run(&[
        "simulate", "--n", "40", "--k", "4", "--epsilon", "0.7", "--trials", "5",
        "--dump", dump.to_str().unwrap(), "--dump-trace", trace.to_str().unwrap(),
        "--output", output.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.is_empty());
    assert!(std::fs::read_to_string(&output).unwrap().starts_with("n,k,r,"));
    let inst: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert_eq!(inst["observation"]["rows"].as_array().unwrap().len(), 40);
    assert_eq!(inst["truth"]["n"], 40);
    let traces = std::fs::read_to_string(&trace).unwrap();
    let first: serde_json::Value = serde_json::from_str(traces.lines().next().unwrap()).unwrap();
    let keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    for key in ["target", "chosen", "purity", "ones", "zeros", "top"] {
        assert!(keys.contains(&key), "{key}");
    }
    assert_eq!(first["top"].as_array().unwrap().len(), 4);
}

#[test]
fn oracle_matches_monte_carlo() {
    let (code, out, _) = run(&["oracle", "--n", "2", "--k", "1", "--p", "0.25", "--epsilon", "0.5", "--trials", "20000"]);
    assert_eq!(code, 0);
    let rec: Vec<OracleRecord> = cli::read_records(&out, Format::Json).unwrap();
    let rec = &rec[0];
    assert!((rec.total_mass - 1.0).abs() < 1e-12);
    assert!(rec.ci_low.unwrap() <= rec.exact_ber && rec.exact_ber <= rec.ci_high.unwrap(), "{rec:?}");
    let (code, _, err) = run(&["oracle", "--n", "4", "--k", "2", "--epsilon", "0.5"]);
    assert_eq!(code, 1);
    assert!(err.contains("n <= 3"), "{err}");
}

#[test]
fn movielens_on_a_small_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.data");
    let mut text = String::new();
    for u in 1..=30u32 {
        for i in 1..=25u32 {
            if (u * 7 + i * 3) % 4 != 0 {
                let rating = if (u % 2 == 0) == (i % 3 == 0) { 5 } else { 2 };
                text.push_str(&format!("{u}\t{i}\t{rating}\t{}\r\n", u * i));
            }
        }
    }
    std::fs::write(&path, text).unwrap();
    for protocol in ["predict", "recommend"] {
        let (code, out, err) = run(&["movielens", "--data", path.to_str().unwrap(), "--t", "3,6", "--protocol", protocol, "--seed", "2"]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.lines().next().unwrap(), localpop::movielens::EVAL_CSV_HEADER);
        assert_eq!(out.lines().count(), 3);
        assert_round_trip::<MovielensRecord>(&out, Format::Csv);
        let rows: Vec<MovielensRecord> = cli::read_records(&out, Format::Csv).unwrap();
        for r in &rows {
            assert_eq!(r.predicted + r.abstained, r.test_pairs);
            assert!(r.ber <= r.baseline_ber, "{r:?}");
        }
    }
    let (code, out, _) = run(&["movielens", "--data", path.to_str().unwrap(), "--t", "3,6", "--format", "json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["users"], 30);
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);
    assert_eq!(v["protocol"], "predict");

    let (code, _, err) = run(&["movielens", "--data", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("missing"), "{err}");
}
