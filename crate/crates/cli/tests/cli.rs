//! End-to-end tests against the installed binary: exit codes, byte-level
//! determinism, and agreement between the CLI path and direct library calls
//! on the same input files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mptrial::analyze::{analyze_comparator, analyze_contrast, AnalysisOptions};
use mptrial::comparators::Comparator;
use mptrial::data::{parse_records, DataSchema};
use mptrial::estimators::Method;
use mptrial::scheme::parse_scheme;
use mptrial::sim::oracle::TruthTable;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mptrial"));
    // keep the ambient environment from steering worker counts
    cmd.env_remove("MPTRIAL_WORKERS");
    cmd
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("spawn mptrial");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn write_toy(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let data = dir.join("toy.csv");
    fs::write(&data, "pid,episode,arm,y,x\na,1,1,4.0,0\nb,1,2,1.0,0\n").unwrap();
    let schema = dir.join("schema.json");
    fs::write(
        &schema,
        r#"{"participant_id": "pid", "episode": "episode", "arm": "arm", "outcome": "y",
            "covariates": {"x": {"role": "x", "type": "numeric"}}}"#,
    )
    .unwrap();
    let scheme = dir.join("scheme.json");
    fs::write(
        &scheme,
        r#"{"arms": ["1", "2"],
            "rows": [{"episode": "any", "z": {}, "p": {"1": "0.5", "2": "0.5"}}]}"#,
    )
    .unwrap();
    (data, schema, scheme)
}

#[test]
fn toy_dataset_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "analyze", "--data", "toy.csv", "--schema", "schema.json", "--scheme",
            "scheme.json", "--comparisons", "1:2", "--methods", "sipw", "--format", "json",
            "--out", "report.json",
        ],
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let contrast = &report["contrasts"][0];
    // both units weighted by 1/0.5: arm-1 mean 4, arm-2 mean 1
    assert_eq!(contrast["estimate"], serde_json::json!(3.0));
    assert_eq!(contrast["per_episode"][0]["theta_jk"], serde_json::json!(4.0));
    assert_eq!(contrast["per_episode"][0]["theta_kj"], serde_json::json!(1.0));
    assert_eq!(contrast["se"], serde_json::json!(0.0));
    // the stdout table is also produced when --out is set
    assert!(String::from_utf8_lossy(&out.stdout).contains("sipw"));
    // ... and the manifest lands next to the report
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("report.json.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "analyze");
    assert_eq!(manifest["inputs"]["data"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"][0], "report.json");
}

#[test]
fn uncovered_z_pattern_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    // a scheme keyed on a z-column the toy data does not carry any rows for
    fs::write(
        dir.path().join("scheme.json"),
        r#"{"arms": ["1", "2"],
            "rows": [{"episode": 1, "z": {"g": "west"}, "p": {"1": "0.5", "2": "0.5"}}]}"#,
    )
    .unwrap();
    let out = bin()
        .current_dir(dir.path())
        .args([
            "analyze", "--data", "toy.csv", "--schema", "schema.json", "--scheme",
            "scheme.json", "--comparisons", "1:2", "--methods", "ipw",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("uncovered z-pattern"));
}

#[test]
fn estimation_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    // one participant: the cluster-robust variance does not exist
    fs::write(dir.path().join("toy.csv"), "pid,episode,arm,y,x\na,1,1,4.0,0\n").unwrap();
    let out = bin()
        .current_dir(dir.path())
        .args([
            "analyze", "--data", "toy.csv", "--schema", "schema.json", "--scheme",
            "scheme.json", "--comparisons", "1:2", "--methods", "ipw",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 participants"));
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .args([
            "analyze", "--data", "absent.csv", "--schema", "s.json", "--scheme", "a.json",
            "--comparisons", "1:2", "--methods", "ipw",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // the schema is opened first, so that is the file named in the error
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read schema 's.json'"));
}

#[test]
fn augmented_methods_demand_explicit_covariate_choice() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let args = [
        "analyze", "--data", "toy.csv", "--schema", "schema.json", "--scheme", "scheme.json",
        "--comparisons", "1:2", "--methods", "aipw",
    ];
    let out = bin().current_dir(dir.path()).args(args).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--intercept-only"));
    let out =
        bin().current_dir(dir.path()).args(args).arg("--intercept-only").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "simulate", "--n", "100", "--reps", "3", "--seed", "41", "--truth-from-oracle",
        "30000",
    ];
    let variants: [&[&str]; 3] = [
        &["--out", "a.csv", "--truth-out", "a-truths.json"],
        &["--out", "b.csv", "--truth-out", "b-truths.json", "--workers", "1"],
        &["--out", "c.csv", "--truth-out", "c-truths.json", "--workers", "2"],
    ];
    for extra in variants {
        let mut args: Vec<&str> = base.to_vec();
        args.extend_from_slice(extra);
        let out = run_in(dir.path(), &args);
        assert!(out.status.success());
    }
    // and once more steered by the environment variable
    let out = bin()
        .current_dir(dir.path())
        .env("MPTRIAL_WORKERS", "3")
        .args(base)
        .args(["--out", "d.csv", "--truth-out", "d-truths.json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read(dir.path().join("a.csv")).unwrap();
    let truths = fs::read(dir.path().join("a-truths.json")).unwrap();
    for stem in ["b", "c", "d"] {
        assert_eq!(csv, fs::read(dir.path().join(format!("{stem}.csv"))).unwrap(), "{stem}");
        assert_eq!(
            truths,
            fs::read(dir.path().join(format!("{stem}-truths.json"))).unwrap(),
            "{stem}"
        );
    }
    assert!(!csv.is_empty());
    let header = String::from_utf8_lossy(&csv);
    assert!(header.starts_with("method,comparison,truth,bias,sd,mean_se,cp,reps_used\n"));
}

#[test]
fn analyze_matches_direct_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate", "--n", "200", "--reps", "1", "--seed", "9", "--truth-from-oracle",
            "2000", "--out", "s.csv", "--dump-data", "sim",
        ],
    );
    assert!(out.status.success());
    let out = run_in(
        dir.path(),
        &[
            "analyze", "--data", "sim/data-rep0.csv", "--schema", "sim/schema.json",
            "--scheme", "sim/scheme.json", "--comparisons", "2:1,3:1", "--methods",
            "ipw,sipw,aipw,ps,aps,anova,ancova,anhecova", "--covariates", "x_c,x_b",
            "--margin", "-3", "--format", "json", "--out", "report.json",
        ],
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();

    let schema = DataSchema::from_reader(
        fs::File::open(dir.path().join("sim/schema.json")).unwrap(),
    )
    .unwrap();
    let scheme =
        parse_scheme(fs::File::open(dir.path().join("sim/scheme.json")).unwrap()).unwrap();
    let (rs, _) = parse_records(
        fs::File::open(dir.path().join("sim/data-rep0.csv")).unwrap(),
        &schema,
    )
    .unwrap();
    let mut options = AnalysisOptions::default();
    options.covariates = vec!["x_c".to_string(), "x_b".to_string()];
    options.margin = Some(-3.0);

    let mut idx = 0;
    for (j, k) in [("2", "1"), ("3", "1")] {
        for method in Method::ALL {
            let lib = analyze_contrast(&rs, &scheme, method, j, k, &options).unwrap();
            let cli = &report["contrasts"][idx];
            idx += 1;
            assert_eq!(cli["method"], serde_json::json!(method.to_string()));
            assert_eq!(cli["comparison"].as_str().unwrap(), format!("{j}v{k}"));
            assert_eq!(cli["estimate"].as_f64().unwrap(), lib.estimate, "{method} {j}v{k}");
            assert_eq!(cli["se"].as_f64().unwrap(), lib.se, "{method} {j}v{k}");
            assert_eq!(cli["ci"][0].as_f64().unwrap(), lib.ci[0]);
            assert_eq!(cli["ci"][1].as_f64().unwrap(), lib.ci[1]);
            assert_eq!(
                cli["noninferiority"]["declared"].as_bool().unwrap(),
                lib.noninferiority.as_ref().unwrap().declared
            );
        }
    }
    let mut idx = 0;
    for (j, k) in [("2", "1"), ("3", "1")] {
        for kind in Comparator::ALL {
            let lib = analyze_comparator(&rs, kind, None, j, k, &options).unwrap();
            let cli = &report["comparators"][idx];
            idx += 1;
            assert_eq!(cli["estimate"].as_f64().unwrap(), lib.estimate, "{kind} {j}v{k}");
            assert_eq!(cli["se"].as_f64().unwrap(), lib.se, "{kind} {j}v{k}");
        }
    }
}

#[test]
fn oracle_writes_a_loadable_truth_table_reused_by_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["oracle", "--draws", "20000", "--seed", "3", "--out", "t.json"],
    );
    assert!(out.status.success());
    let table =
        TruthTable::from_json(fs::File::open(dir.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(table.draws, 20000);
    assert_eq!(table.scenario, 1);
    for key in ["2v1", "3v1", "2v1@ep1", "3v1@ep2", "2v1@substudy"] {
        assert!(table.get(key).is_some(), "missing {key}");
    }

    // the table feeds back into simulate as long as the scenario agrees
    let out = run_in(
        dir.path(),
        &[
            "simulate", "--n", "80", "--reps", "2", "--seed", "3", "--truth-file", "t.json",
            "--out", "s.csv",
        ],
    );
    assert!(out.status.success());
    let out = bin()
        .current_dir(dir.path())
        .args([
            "simulate", "--n", "80", "--reps", "2", "--seed", "3", "--scenario", "2",
            "--truth-file", "t.json", "--out", "s2.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario"));
}

#[test]
fn config_files_and_flags_agree() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"n": 90, "scenario": 2, "seed": 17, "reps": 2}"#,
    )
    .unwrap();
    fs::write(dir.path().join("cfg.toml"), "n = 90\nscenario = 2\nseed = 17\nreps = 2\n")
        .unwrap();
    let runs = [
        vec!["--config", "cfg.json", "--out", "j.csv"],
        vec!["--config", "cfg.toml", "--out", "t.csv"],
        vec![
            "--n", "90", "--scenario", "2", "--seed", "17", "--reps", "2", "--out", "f.csv",
        ],
    ];
    for extra in runs {
        let mut args = vec!["simulate", "--truth-from-oracle", "10000"];
        args.extend(extra);
        let out = run_in(dir.path(), &args);
        assert!(out.status.success());
    }
    let j = fs::read(dir.path().join("j.csv")).unwrap();
    assert_eq!(j, fs::read(dir.path().join("t.csv")).unwrap());
    assert_eq!(j, fs::read(dir.path().join("f.csv")).unwrap());
}

#[test]
fn validate_reports_the_shape_and_checks_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate", "--n", "60", "--reps", "1", "--seed", "2", "--truth-from-oracle",
            "1000", "--out", "s.csv", "--dump-data", "sim",
        ],
    );
    assert!(out.status.success());
    let out = run_in(
        dir.path(),
        &[
            "validate", "--data", "sim/data-rep0.csv", "--schema", "sim/schema.json",
            "--scheme", "sim/scheme.json",
        ],
    );
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("60 participants"), "{text}");
    assert!(text.contains("episode 1: 60 records"), "{text}");
    assert!(text.contains("covers every record"), "{text}");
    assert!(text.trim_end().ends_with("ok"), "{text}");
}
