use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use weyl_persistence_cli::config::{ExperimentConfig, Format, KernelChoice, SideChoice};
use weyl_persistence_cli::record::RunHeader;
use weyl_persistence_cli::CliError;

fn weyl_persist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weyl-persist")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

fn config_strategy() -> impl Strategy<Value = ExperimentConfig> {
    (
        (
            proptest::option::of(prop_oneof![Just(KernelChoice::Gauss), Just(KernelChoice::Sech)]),
            proptest::option::of(proptest::collection::vec(0u64..5000, 1..6)),
            proptest::option::of(proptest::collection::vec(0.0f64..100.0, 1..6)),
            proptest::option::of(1e-4f64..1.0),
            proptest::option::of(1u64..10_000_000),
            proptest::option::of(any::<u64>()),
        ),
        (
            proptest::option::of(1usize..64),
            proptest::option::of("[a-z]{1,8}\\.jsonl"),
            proptest::option::of(prop_oneof![Just(Format::Jsonl), Just(Format::Csv)]),
            proptest::option::of(prop_oneof![Just(SideChoice::Half), Just(SideChoice::Whole), Just(SideChoice::Both)]),
            proptest::option::of(any::<bool>()),
        ),
    )
        .prop_map(|((kernel, n, t, step, trials, seed), (workers, out, format, side, refine))| ExperimentConfig {
            kernel,
            n,
            t,
            step,
            trials,
            seed,
            workers,
            out: out.map(Into::into),
            format,
            side,
            refine,
            ..ExperimentConfig::default()
        })
}

proptest! {
    #[test]
    fn config_survives_toml_round_trip(config in config_strategy()) {
        let text = config.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), config);
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    use weyl_persistence::Error as E;
    let cases: Vec<(CliError, i32)> = vec![
        (CliError::ConfigInvalid("x".into()), 2),
        (E::InsufficientData { usable: 1, needed: 3 }.into(), 3),
        (E::GridTooLarge { points: 5000, cap: 4096 }.into(), 4),
        (E::FactorizationFailed { jitter: 1e-8 }.into(), 5),
        (E::OddDegreeWholeLine { n: 3 }.into(), 6),
        (E::PrecisionLoss { n: 1, z: 1.0, lower: 0.0, upper: 1.0 }.into(), 7),
        (E::InvalidParameter("x".into()).into(), 8),
        (CliError::Io("x".into()), 9),
        (CliError::VerificationFailed(vec!["x".into()]), 10),
    ];
    for (error, expected) in cases {
        assert_eq!(error.exit_code(), expected, "{error}");
    }
}

#[test]
fn zero_horizon_is_insufficient_data_but_keeps_the_estimate() {
    let out = weyl_persist(&["estimate-b", "--T", "0", "--trials", "1000"]);
    assert_eq!(code(&out), 3);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut records = stdout.lines();
    let header: RunHeader = serde_json::from_str(records.next().unwrap()).unwrap();
    assert!(header.error.is_some());
    let estimate: serde_json::Value = serde_json::from_str(records.next().unwrap()).unwrap();
    assert_eq!(estimate["type"], "estimate");
    assert_eq!(estimate["trials"], 1000);
}

#[test]
fn invalid_inputs_map_to_their_exit_codes() {
    assert_eq!(code(&weyl_persist(&["estimate-b", "--kernel", "cauchy"])), 2);
    assert_eq!(code(&weyl_persist(&["estimate-b", "--step", "-0.1"])), 2);
    assert_eq!(code(&weyl_persist(&["estimate-b", "--T", "10", "--step", "0.001", "--trials", "10"])), 4);
    assert_eq!(code(&weyl_persist(&["weyl-exponent", "--side", "whole", "--n", "65", "--trials", "10"])), 6);
    assert_eq!(code(&weyl_persist(&["weyl-exponent", "--n", "4", "--trials", "10"])), 8);
    assert_eq!(code(&weyl_persist(&["decompose", "--n", "7", "--trials", "10"])), 8);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no/such/dir/out.jsonl");
    let args = ["estimate-b", "--T", "1,2,3", "--trials", "100", "--out", missing.to_str().unwrap()];
    assert_eq!(code(&weyl_persist(&args)), 9);
}

#[test]
fn config_file_rejects_unknown_keys_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "trails = 10\n").unwrap();
    assert_eq!(code(&weyl_persist(&["estimate-b", "--config", bad.to_str().unwrap()])), 2);

    let good = dir.path().join("good.toml");
    std::fs::write(&good, "T = [1.0, 2.0, 3.0]\ntrials = 500\nkernel = \"sech\"\n").unwrap();
    let out_path = dir.path().join("run.jsonl");
    let args =
        ["estimate-b", "--config", good.to_str().unwrap(), "--trials", "700", "--out", out_path.to_str().unwrap()];
    assert_eq!(code(&weyl_persist(&args)), 0);
    let header: RunHeader = serde_json::from_str(&lines(&out_path)[0]).unwrap();
    assert_eq!(header.config.trials, Some(700));
    assert_eq!(header.config.kernel, Some(KernelChoice::Sech));
    assert_eq!(header.config.t, Some(vec![1.0, 2.0, 3.0]));
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |workers: &str, name: &str| {
        let path = dir.path().join(name);
        let args = [
            "weyl-exponent",
            "--side",
            "both",
            "--n",
            "16,36,64",
            "--trials",
            "5000",
            "--workers",
            workers,
            "--out",
            path.to_str().unwrap(),
        ];
        assert_eq!(code(&weyl_persist(&args)), 0);
        lines(&path)
    };
    let one = run("1", "one.jsonl");
    let three = run("3", "three.jsonl");
    assert_eq!(one.len(), 10);
    assert_eq!(one[1..], three[1..]);
}

#[test]
fn snapshot_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.jsonl");
    let args = ["decompose", "--n", "64", "--trials", "4000", "--seed", "99", "--out", first.to_str().unwrap()];
    assert_eq!(code(&weyl_persist(&args)), 0);
    let first_lines = lines(&first);
    let header: RunHeader = serde_json::from_str(&first_lines[0]).unwrap();

    let second = dir.path().join("second.jsonl");
    let snapshot = ExperimentConfig { out: Some(second.clone()), ..header.config };
    let config_path = dir.path().join("snapshot.toml");
    std::fs::write(&config_path, snapshot.to_toml().unwrap()).unwrap();
    assert_eq!(code(&weyl_persist(&["decompose", "--config", config_path.to_str().unwrap()])), 0);
    assert_eq!(first_lines[1..], lines(&second)[1..]);
}

#[test]
fn csv_output_has_one_row_per_result() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let args = ["estimate-b", "--T", "1,2,3", "--trials", "2000", "--format", "csv", "--out", path.to_str().unwrap()];
    assert_eq!(code(&weyl_persist(&args)), 0);
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    let kind = headers.iter().position(|h| h == "kind").unwrap();
    let kinds: Vec<&str> = rows.iter().map(|r| &r[kind]).collect();
    assert_eq!(kinds, ["estimate", "estimate", "estimate", "fit", "derived"]);
}

#[test]
fn verify_bounds_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bounds.jsonl");
    assert_eq!(code(&weyl_persist(&["verify-bounds", "--out", path.to_str().unwrap()])), 0);
    let reports: Vec<serde_json::Value> = lines(&path)[1..].iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 13);
    assert!(reports.iter().all(|r| r["type"] == "report" && r["pass"] == true));
}
