use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn delayshare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delayshare"))
        .args(args)
        .env_remove("DELAYSHARE_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout_of(args: &[&str]) -> String {
    let out = delayshare(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json_of(args: &[&str]) -> serde_json::Value {
    serde_json::from_str(&stdout_of(args)).unwrap()
}

fn field(v: &serde_json::Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("missing {key} in {v}"))
}

#[test]
fn eval_prints_csv_with_header() {
    let out = stdout_of(&[
        "eval",
        "--mechanism",
        "scs",
        "--dist",
        "uniform",
        "--n",
        "3",
        "--samples",
        "20000",
    ]);
    let mut lines = out.lines();
    assert_eq!(
        lines.next().unwrap(),
        "mechanism,dist,n,objective,estimate,std_error,samples,fail_prob,seed"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "scs");
    let estimate: f64 = row[4].parse().unwrap();
    assert!((estimate - 1.61).abs() < 0.03, "{estimate}");
}

#[test]
fn eval_json_edge_cases() {
    let normal = json_of(&[
        "eval",
        "--mechanism",
        "single:1",
        "--dist",
        "normal:0.5,0.1",
        "--n",
        "500",
        "--samples",
        "5000",
        "--json",
    ]);
    assert!(field(&normal, "estimate") < 0.005);
    let single = json_of(&[
        "eval",
        "--mechanism",
        "scs",
        "--dist",
        "uniform",
        "--n",
        "1",
        "--objective",
        "max",
        "--samples",
        "5000",
        "--json",
    ]);
    assert!(field(&single, "estimate") > 0.999);
    assert!(field(&single, "fail_prob") > 0.999);
}

#[test]
fn bad_arguments_exit_nonzero() {
    for args in [
        &["eval", "--mechanism", "single:1.5", "--dist", "uniform", "--n", "3"][..],
        &["eval", "--mechanism", "scs", "--dist", "beta:0,1", "--n", "3"],
        &[
            "eval",
            "--mechanism",
            "seq:@/nonexistent/genome.txt",
            "--dist",
            "uniform",
            "--n",
            "3",
        ],
        &["bounds", "--dist", "bernoulli:0.5"],
        &["competitive", "--kmax", "0"],
        &["check", "--mechanism", "optdeadline", "--n", "4", "--grid-step", "0.02"],
    ] {
        assert!(!delayshare(args).status.success(), "{args:?} should fail");
    }
}

#[test]
fn bounds_reports_ratio_and_closed_forms() {
    let u = json_of(&["bounds", "--dist", "uniform", "--n", "500", "--fail", "0.002"]);
    assert!((field(&u, "sumdelay_lower_bound") - 0.998).abs() < 1e-3);
    assert!((field(&u, "scs_maxdelay_closed_form") - 0.632).abs() < 1e-3);
    assert!((field(&u, "r_star") - 1.0).abs() < 1e-3);
    assert!((field(&u, "recommended_deadline") - 1.01 / (500.0 * 0.01 * 0.99)).abs() < 1e-6);
    let b = json_of(&["bounds", "--dist", "beta:0.5,0.5"]);
    assert!((field(&b, "r_star") - 1.927).abs() < 0.005);
}

#[test]
fn competitive_lists_alpha() {
    let out = stdout_of(&["competitive", "--kmax", "4"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "k,alpha,at_least_four");
    assert_eq!(lines[1], "1,1.0,false");
    assert_eq!(lines[2], "2,2.0,false");
    assert_eq!(lines[4], "4,3.25,false");
    let big = stdout_of(&["competitive", "--kmax", "1000"]);
    assert_eq!(big.lines().count(), 1001);
    assert!(!big.contains("true"));
}

#[test]
fn check_reports_clean_and_manipulable_mechanisms() {
    let clean = stdout_of(&["check", "--mechanism", "single:0.5", "--n", "3", "--grid-step", "0.1"]);
    assert!(clean.trim_end().ends_with("clean"), "{clean}");

    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("check");
    let found = stdout_of(&[
        "check",
        "--mechanism",
        "optdeadline",
        "--profile",
        "0.9,0.8,0.26,0.26",
        "--grid-step",
        "0.02",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!found.contains("clean"), "{found}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("check.json")).unwrap()).unwrap();
    assert!(report["violation_count"].as_u64().unwrap() > 0);
    assert!(out_dir.join("manifest.json").exists());

    let verdict = stdout_of(&[
        "check",
        "--dominance",
        "optdeadline",
        "scs",
        "--n",
        "3",
        "--grid-step",
        "0.1",
        "--objective",
        "max",
    ]);
    assert!(!verdict.contains("B_dominates"), "{verdict}");
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn ga_genome_round_trips_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, workers: &str| {
        let out = dir.path().join(sub);
        stdout_of(&[
            "ga",
            "--dist",
            "bernoulli:0.5",
            "--n",
            "3",
            "--seed",
            "3",
            "--rounds",
            "30",
            "--population",
            "40",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        out
    };
    let a = run("a", "1");
    let b = run("b", "2");
    for name in ["genome.txt", "trace.csv", "result.json"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs between runs");
    }
    assert!(read(&a, "trace.csv").starts_with("round,best,mean,survivors\n"));
    let manifest: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["subcommand"], "ga");
    assert_eq!(manifest["seed"], 3);

    let result: serde_json::Value = serde_json::from_str(&read(&a, "result.json")).unwrap();
    let genome = a.join("genome.txt");
    let mechanism = format!("seq:@{}", genome.display());
    let eval = json_of(&[
        "eval",
        "--mechanism",
        &mechanism,
        "--dist",
        "bernoulli:0.5",
        "--n",
        "3",
        "--json",
    ]);
    assert_eq!(
        eval["mechanism"].as_str().unwrap(),
        format!("seq:{}", result["best"].as_str().unwrap())
    );
    assert!((field(&eval, "estimate") - field(&result, "best_fitness")).abs() < 0.05);
}

#[test]
fn eval_outputs_ignore_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(workers);
        stdout_of(&[
            "eval",
            "--mechanism",
            "groupopt",
            "--dist",
            "beta:0.5,0.5",
            "--n",
            "7",
            "--samples",
            "10000",
            "--seed",
            "5",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        csvs.push(read(&out, "eval.csv"));
        assert!(out.join("eval.json").exists() && out.join("manifest.json").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
}
