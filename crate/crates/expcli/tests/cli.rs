use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn expcli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expcli"))
        .args(args)
        .env_remove("DEMLAB_SEED")
        .output()
        .expect("spawn expcli")
}

fn json(args: &[&str]) -> Value {
    let out = expcli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn normal_quantile(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// erfc by Simpson quadrature of `2/sqrt(pi) * exp(-t^2)` over `[x, x + 10]`.
fn erfc(x: f64) -> f64 {
    let f = |t: f64| (-t * t).exp();
    let (a, b) = (x, x.max(0.0) + 10.0);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
}

const CHECKPOINTS: &str = "experiment_id,variant_id,metric_id,time_index,count_c,mean_c,variance_c
e1,ctl,rev,0,100,1.0,4.0
e1,trt,rev,0,100,1.3,4.2
e1,ctl,rev,1,200,1.02,4.1
e1,trt,rev,1,210,1.35,4.0
e1,ctl,rev,2,300,1.01,4.0
e1,trt,rev,2,305,1.4,4.1
e2,ctl,rev,0,500,2.0,1.0
e2,trt,rev,0,500,2.0,1.0
e2,ctl,rev,1,1000,2.01,1.0
e2,trt,rev,1,1000,2.0,1.1
";

const SCENARIO: &str = "n0 = 1000\nn1 = 2000\nn2 = 2000\nn3 = 3000
mu_C0 = 1.0\nmu_C1 = 1.0\nmu_C2 = 1.1\nmu_C3 = 0.9\nmu_I1 = 1.2\nmu_I2 = 1.15\nmu_Iphi = 1.0\nmu_Ipsi = 1.05
var_C0 = 2\nvar_C1 = 2\nvar_C2 = 2\nvar_C3 = 2\nvar_I1 = 2\nvar_I2 = 2\nvar_Iphi = 2\nvar_Ipsi = 2
";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn mde_matches_closed_form() {
    let v = json(&[
        "mde", "--alpha", "0.05", "--power", "0.8", "--var-a", "1", "--var-b", "1", "--n", "1000",
        "--m", "1000",
    ]);
    assert_eq!(v["schema"], 1);
    let z = normal_quantile(0.975) - normal_quantile(0.2);
    let expected = z * (2.0f64 / 1000.0).sqrt();
    let got = v["result"]["mde"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    assert!((got - 0.1253).abs() < 5e-5);
}

#[test]
fn rulu_value_case_study() {
    let v = json(&[
        "rulu-value",
        "--sigma-v",
        "1",
        "--sigma1",
        "0.5",
        "--sigma2",
        "0.4",
        "--mu-v",
        "0",
        "--n",
        "100",
        "--m",
        "10",
    ]);
    let g = v["result"]["relative_gain"].as_f64().unwrap();
    assert!((g - 0.038).abs() < 5e-4, "{g}");
    for key in ["expected_gain", "var_gain", "sharpe_ratio"] {
        assert!(v["result"][key].is_number(), "{key}");
    }
}

#[test]
fn srm_balanced_counts() {
    let v = json(&["srm", "--counts", "1000,1000", "--ratios", "1,1"]);
    assert_eq!(v["result"]["outcome"]["statistic"].as_f64(), Some(0.0));
    assert_eq!(v["result"]["outcome"]["p_value"].as_f64(), Some(1.0));
}

#[test]
fn usage_errors_exit_2() {
    let out = expcli(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
    let out = expcli(&[
        "mde", "--var-a", "1", "--var-b", "1", "--n", "10", "--m", "10", "--bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = expcli(&["srm", "--counts", "1,2,3", "--ratios", "1,1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = expcli(&[
        "mde", "--var-a", "-1", "--var-b", "1", "--n", "10", "--m", "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(expcli(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_csv_reports_line() {
    let dir = TempDir::new().unwrap();
    let bad = CHECKPOINTS.replace("e1,ctl,rev,1,200,", "e1,ctl,rev,1,20,");
    let path = write(dir.path(), "cp.csv", &bad);
    let out = expcli(&["msprt-replay", "--checkpoints", &path, "--tau2", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("row 3 (line 4)"), "{}", stderr(&out));

    let path = write(
        dir.path(),
        "r.csv",
        "unit_id,group,value\nu1,a,1\nu2,b,oops\n",
    );
    let out = expcli(&["test", "--test", "welch", "--responses", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let path = write(dir.path(), "empty.csv", "user_id,value\n");
    let out = expcli(&["bootstrap-se", "--transactions", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no rows"));
}

#[test]
fn two_sample_test_needs_two_groups() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "r.csv", "unit_id,group,value\nu1,a,1\nu2,a,3\n");
    let out = expcli(&["test", "--test", "welch", "--responses", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least two groups"));
}

#[test]
fn welch_test_on_responses() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("unit_id,group,value\n");
    for i in 0..40 {
        text += &format!("a{i},control,{}\nb{i},treatment,{}\n", i % 5, i % 5 + 1);
    }
    let path = write(dir.path(), "r.csv", &text);
    let v = json(&["test", "--test", "welch", "--responses", &path]);
    let r = &v["result"]["result"];
    // equal variances and sizes: t = 1 / sqrt(2 s^2 / 40)
    let s2: f64 = {
        let xs: Vec<f64> = (0..40).map(|i| (i % 5) as f64).collect();
        let m = xs.iter().sum::<f64>() / 40.0;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 39.0
    };
    let t = 1.0 / (2.0 * s2 / 40.0).sqrt();
    assert!((r["statistic"].as_f64().unwrap() - t).abs() < 1e-12);
    assert_eq!(r["reject"], true);
}

#[test]
fn replay_csv_reparses_to_json_rows() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "cp.csv", CHECKPOINTS);
    let args = ["msprt-replay", "--checkpoints", &path, "--tau2-scale", "1"];
    let j = json(&args);
    let rows = j["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let mut with_csv = args.to_vec();
    with_csv.extend(["--format", "csv"]);
    let out = expcli(&with_csv);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let header = rdr.headers().unwrap().clone();
    let records: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), rows.len());
    for (rec, row) in records.iter().zip(rows) {
        for (k, cell) in header.iter().zip(rec.iter()) {
            let expected = &row[k];
            match expected {
                Value::Number(n) => {
                    assert_eq!(cell.parse::<f64>().unwrap(), n.as_f64().unwrap(), "{k}")
                }
                Value::String(s) => assert_eq!(cell, s),
                Value::Null => assert_eq!(cell, ""),
                Value::Bool(b) => assert_eq!(cell.parse::<bool>().unwrap(), *b),
                other => panic!("unexpected {other}"),
            }
        }
    }
}

#[test]
fn scalar_csv_reparses_to_json_result() {
    let args = [
        "samplesize",
        "--theta",
        "0.1",
        "--var-a",
        "1",
        "--var-b",
        "2",
        "--ratio",
        "1.5",
    ];
    let j = json(&args);
    let mut with_csv = args.to_vec();
    with_csv.extend(["--format", "csv"]);
    let out = expcli(&with_csv);
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(rdr.headers().unwrap(), vec!["key", "value"]);
    let mut seen = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let expected = j["result"][&rec[0]].as_f64().unwrap();
        assert_eq!(rec[1].parse::<f64>().unwrap(), expected);
        seen += 1;
    }
    assert_eq!(seen, j["result"].as_object().unwrap().len());
}

#[test]
fn table_format_lists_every_field() {
    let out = expcli(&[
        "srm", "--counts", "520,480", "--ratios", "1,1", "--format", "table",
    ]);
    let text = stdout(&out);
    assert!(text.starts_with("srm\n"));
    assert!(text.contains("outcome.p_value"));
}

#[test]
fn replay_monitors() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "cp.csv", CHECKPOINTS);
    let m = json(&[
        "msprt-replay",
        "--checkpoints",
        &path,
        "--tau2",
        "0.1",
        "--experiment",
        "e1",
    ]);
    let series = m["result"]["series"].as_array().unwrap();
    assert_eq!(series.len(), 1);
    assert_eq!(series[0]["control"], "ctl");
    let b = json(&["bayes-replay", "--checkpoints", &path, "--v2", "0.1"]);
    assert_eq!(b["result"]["series"].as_array().unwrap().len(), 2);
    let out = expcli(&["msprt-replay", "--checkpoints", &path]);
    assert_eq!(out.status.code(), Some(2));
    let out = expcli(&[
        "msprt-replay",
        "--checkpoints",
        &path,
        "--tau2",
        "1",
        "--metric",
        "nope",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn confusion_counts_every_series() {
    let dir = TempDir::new().unwrap();
    let sub = dir.path().join("series");
    std::fs::create_dir(&sub).unwrap();
    write(&sub, "a.csv", CHECKPOINTS);
    write(&sub, "b.csv", &CHECKPOINTS.replace("e1", "e3"));
    write(&sub, "notes.txt", "ignored");
    let v = json(&[
        "confusion",
        "--dir",
        sub.to_str().unwrap(),
        "--monitor",
        "bayes",
        "--v2",
        "0.1",
    ]);
    let m = &v["result"]["matrix"];
    let total: u64 = ["both_reject", "monitor_only", "reference_only", "neither"]
        .iter()
        .map(|k| m[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 4);
    assert_eq!(v["result"]["series"], 4);
}

#[test]
fn bootstrap_se_is_seeded() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("user_id,product_id,value\n");
    for i in 0..400 {
        text += &format!("u{},p{},{}\n", i % 50, i % 7, (i * 13 % 17) as f64 / 3.0);
    }
    let path = write(dir.path(), "tx.csv", &text);
    let run = |seed: &str, mode: &str| {
        json(&[
            "bootstrap-se",
            "--transactions",
            &path,
            "--mode",
            mode,
            "--b",
            "300",
            "--seed",
            seed,
        ])
    };
    let a = run("7", "oneway");
    assert_eq!(a, run("7", "oneway"));
    assert_ne!(
        a["result"]["bootstrap"]["se"],
        run("8", "oneway")["result"]["bootstrap"]["se"]
    );
    assert_eq!(a["result"]["bootstrap"]["b_resamples"], 300);
    let two = run("7", "twoway");
    assert!(two["result"]["bootstrap"]["se"].as_f64().unwrap() > 0.0);
}

#[test]
fn seed_env_and_flag() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "sc.toml", SCENARIO);
    let args = [
        "pse-verify",
        "--scenario",
        path.as_str(),
        "--runs",
        "1000",
        "--resamples",
        "200",
    ];
    let with_env = |seed: &str, extra: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_expcli"))
            .args(args)
            .args(extra)
            .env("DEMLAB_SEED", seed)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        serde_json::from_slice::<Value>(&out.stdout).unwrap()
    };
    let a = with_env("11", &[]);
    assert_eq!(a["result"]["seed"], 11);
    assert_eq!(a, with_env("11", &[]));
    assert_eq!(with_env("99", &["--seed", "11"]), a);
    assert_ne!(with_env("12", &[]), a);
    assert_eq!(with_env("11", &["--workers", "1"]), a);
}

#[test]
fn pse_commands() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "sc.toml", SCENARIO);
    let e = json(&["pse-eval", "--scenario", &path]);
    let setups = e["result"]["setups"].as_array().unwrap();
    assert_eq!(setups.len(), 4);
    // setup 1 contrasts the two strategies within group 3: mu_Ipsi - mu_Iphi
    let s1 = setups[0]["actual_effect"].as_f64().unwrap();
    assert!((s1 - 0.05).abs() < 1e-12, "{s1}");

    let c = json(&["pse-compare", "--scenario", &path, "--a", "1", "--b", "4"]);
    assert_eq!(c["result"]["comparisons"].as_array().unwrap().len(), 1);
    let all = json(&["pse-compare", "--scenario", &path]);
    assert_eq!(all["result"]["comparisons"].as_array().unwrap().len(), 6);

    let adv = json(&["pse-advise", "--scenario", &path]);
    assert!(adv["result"]["dilution"]["verdict"].is_string());
    assert!(adv["result"]["dual_control"]["verdict"].is_string());

    let no_dilution = write(
        dir.path(),
        "n0.toml",
        &SCENARIO.replace("n0 = 1000", "n0 = 0"),
    );
    let adv = json(&["pse-advise", "--scenario", &no_dilution]);
    assert!(adv["result"]["dilution"]["error"]
        .as_str()
        .unwrap()
        .contains("n0 = 0"));

    let out = expcli(&["pse-eval", "--scenario", &path, "--setups", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let broken = write(
        dir.path(),
        "bad.toml",
        &SCENARIO.replace("var_C0 = 2", "var_C0 = x"),
    );
    let out = expcli(&["pse-eval", "--scenario", &broken]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn design_calculators_agree() {
    let n = json(&[
        "samplesize",
        "--theta",
        "0.1",
        "--var-a",
        "1",
        "--var-b",
        "1",
    ]);
    let n = n["result"]["n"].as_f64().unwrap();
    let p = json(&[
        "power",
        "--theta",
        "0.1",
        "--var-a",
        "1",
        "--var-b",
        "1",
        "--n",
        &n.to_string(),
        "--m",
        &n.to_string(),
    ]);
    assert!(p["result"]["power"].as_f64().unwrap() >= 0.8);
    let p = json(&[
        "power",
        "--theta",
        "0.1",
        "--var-a",
        "1",
        "--var-b",
        "1",
        "--n",
        &(n - 1.0).to_string(),
        "--m",
        &(n - 1.0).to_string(),
    ]);
    assert!(p["result"]["power"].as_f64().unwrap() < 0.8);
}

#[test]
fn rulu_verify_reports_six_checks() {
    let v = json(&[
        "rulu-verify",
        "--sigma-v",
        "1",
        "--sigma1",
        "0.5",
        "--sigma2",
        "0.4",
        "--n",
        "50",
        "--m",
        "5",
        "--runs",
        "2000",
        "--resamples",
        "200",
        "--seed",
        "3",
    ]);
    let checks = v["result"]["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 6);
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
    let e_gain = checks.iter().find(|c| c["quantity"] == "e_gain").unwrap();
    assert!(e_gain["in_ci"].as_bool().unwrap());
}
