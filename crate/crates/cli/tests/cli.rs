use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn zipscan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zipscan"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("bad JSON ({e}); stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 3x3 lattice, 3 periods, constant ZIP(0.1, 2) baselines, and a strong
/// excess in two adjacent corner cells at t = 1 when `hot` is set.
fn lattice(dir: &Path, hot: bool) {
    let ids: Vec<String> = (0..9).map(|i| format!("L{i}")).collect();
    let mut counts = String::from("location_id,time,count\n");
    let mut base = String::from("location_id,time,p,mu\n");
    let mut geo = String::from("location_id,x,y\n");
    for (i, id) in ids.iter().enumerate() {
        geo.push_str(&format!("{id},{},{}\n", i % 3, i / 3));
        for t in 1..=3 {
            let y = if hot && t == 1 && i < 2 {
                15
            } else {
                [2, 1, 0][(i + t) % 3]
            };
            counts.push_str(&format!("{id},{t},{y}\n"));
            base.push_str(&format!("{id},{t},0.1,2\n"));
        }
    }
    write(dir, "counts.csv", &counts);
    write(dir, "baselines.csv", &base);
    write(dir, "geometry.csv", &geo);
}

const INPUTS: [&str; 6] = [
    "--counts",
    "counts.csv",
    "--baselines",
    "baselines.csv",
    "--geometry",
    "geometry.csv",
];

fn scan_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["scan"];
    v.extend_from_slice(&INPUTS);
    v.extend_from_slice(extra);
    v
}

#[test]
fn single_location_report() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "counts.csv", "location_id,time,count\nA,1,3\n");
    write(d, "baselines.csv", "location_id,time,p,mu\nA,1,0,1\n");
    write(d, "geometry.csv", "location_id,x,y\nA,0,0\n");
    let out = zipscan(&scan_args(&["--seed", "1", "--replicates", "19"]), d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = json(&out);
    let expected = 3.0 * 3f64.ln() - 2.0;
    assert!((r["lambda_star"].as_f64().unwrap() - expected).abs() < 1e-9);
    assert!((r["most_likely_cluster"]["q_hat"].as_f64().unwrap() - 3.0).abs() < 1e-6);
    assert_eq!(r["most_likely_cluster"]["members"], serde_json::json!(["A"]));
    assert_eq!(r["locations"], serde_json::json!(["A"]));
    assert_eq!(r["config"]["seed"], 1);
}

#[test]
fn no_excess_scores_zero_with_p_one() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "counts.csv", "location_id,time,count\nA,1,1\nA,2,0\nB,1,0\nB,2,2\n");
    write(
        d,
        "baselines.csv",
        "location_id,time,p,mu\nA,1,0.2,3\nA,2,0.2,3\nB,1,0.2,3\nB,2,0.2,3\n",
    );
    write(d, "geometry.csv", "location_id,x,y\nA,0,0\nB,1,0\n");
    write(d, "history.txt", "0.5\n1.5 2.5\n");
    let out = zipscan(&scan_args(&["--pvalue", "empirical", "--history", "history.txt"]), d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = json(&out);
    assert_eq!(r["lambda_star"].as_f64(), Some(0.0));
    assert_eq!(r["p_value"]["p_value"].as_f64(), Some(1.0));
    assert_eq!(r["null_rejected"], false);
}

#[test]
fn rejection_sets_exit_code_two() {
    let dir = TempDir::new().unwrap();
    lattice(dir.path(), true);
    let out = zipscan(
        &scan_args(&["--seed", "3", "--replicates", "99", "--top-k", "3"]),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let r = json(&out);
    assert_eq!(r["null_rejected"], true);
    assert!(r["p_value"]["p_value"].as_f64().unwrap() < 0.05);
    let mlc: Vec<&str> = r["most_likely_cluster"]["members"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(mlc, ["L0", "L1"]);
    assert_eq!(r["most_likely_cluster"]["duration"], 1);
    let clusters = r["clusters"].as_array().unwrap();
    assert_eq!(clusters.len(), 3);
    let lambdas: Vec<f64> = clusters.iter().map(|c| c["lambda"].as_f64().unwrap()).collect();
    assert!(lambdas.windows(2).all(|w| w[0] >= w[1]));

    let calm = TempDir::new().unwrap();
    lattice(calm.path(), false);
    let out = zipscan(&scan_args(&["--seed", "3", "--replicates", "99"]), calm.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json(&out)["null_rejected"], false);
}

#[test]
fn reports_are_reproducible_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    lattice(dir.path(), true);
    for method in ["monte-carlo", "gumbel"] {
        let base = scan_args(&[
            "--seed",
            "11",
            "--replicates",
            "49",
            "--pvalue",
            method,
            "--zones",
            "flex",
        ]);
        let a = zipscan(&base, dir.path());
        let b = zipscan(&base, dir.path());
        let mut threaded = base.clone();
        threaded.extend_from_slice(&["--threads", "3"]);
        let c = zipscan(&threaded, dir.path());
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout);
        assert_eq!(a.stdout, c.stdout);
    }
}

#[test]
fn calibrate_then_empirical_scan() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    lattice(d, true);
    let out = zipscan(
        &[
            "calibrate",
            "--baselines",
            "baselines.csv",
            "--geometry",
            "geometry.csv",
            "--replicates",
            "5",
            "--seed",
            "9",
            "--out",
            "history.json",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let history: Value = serde_json::from_str(&fs::read_to_string(d.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["values"].as_array().unwrap().len(), 5);

    let out = zipscan(&scan_args(&["--pvalue", "empirical", "--history", "history.json"]), d);
    assert!(matches!(out.status.code(), Some(0 | 2)), "{}", stderr(&out));
    let p = json(&out)["p_value"]["p_value"].as_f64().unwrap();
    assert!((1..=6).any(|k| (p - k as f64 / 6.0).abs() < 1e-12), "P = {p}");

    // Same seed and R: the calibrated history equals the scan's own replicates.
    let mc = json(&zipscan(&scan_args(&["--seed", "9", "--replicates", "5"]), d));
    assert_eq!(mc["p_value"]["p_value"].as_f64().unwrap(), p);
}

#[test]
fn input_errors_exit_one_with_message() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    lattice(d, false);
    let cases: [(&str, &str, &str); 5] = [
        ("counts.csv", "location_id,time,count\nA,1,1\nA,1,2\n", "duplicate"),
        ("counts.csv", "location_id,time,count\nA,1,-1\n", "negative count"),
        ("counts.csv", "location_id,time,count\nA,1,1\nA,3,1\n", "missing cell"),
        ("counts.csv", "location_id,time,count\nA,x,1\n", "malformed"),
        ("counts.csv", "id,time,count\nA,1,1\n", "header"),
    ];
    for (file, contents, needle) in cases {
        let sub = TempDir::new().unwrap();
        lattice(sub.path(), false);
        write(sub.path(), file, contents);
        let out = zipscan(&scan_args(&["--seed", "1"]), sub.path());
        assert_eq!(out.status.code(), Some(1));
        assert!(stderr(&out).contains(needle), "{needle}: {}", stderr(&out));
    }

    let mut base = fs::read_to_string(d.join("baselines.csv")).unwrap();
    base = base.replacen("L0,1,0.1,2", "L0,1,1.0,2", 1);
    write(d, "bad_p.csv", &base);
    let out = zipscan(
        &[
            "scan",
            "--counts",
            "counts.csv",
            "--baselines",
            "bad_p.csv",
            "--geometry",
            "geometry.csv",
            "--seed",
            "1",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("p=1"), "{}", stderr(&out));

    let partial: String = fs::read_to_string(d.join("baselines.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("L8,"))
        .map(|l| format!("{l}\n"))
        .collect();
    write(d, "partial.csv", &partial);
    let out = zipscan(
        &[
            "scan",
            "--counts",
            "counts.csv",
            "--baselines",
            "partial.csv",
            "--geometry",
            "geometry.csv",
            "--seed",
            "1",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("location mismatch"), "{}", stderr(&out));

    let out = zipscan(&scan_args(&["--pvalue", "gumbel"]), d);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--seed"));

    let out = zipscan(&scan_args(&["--no-such-flag"]), d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zones_command_lists_canonical_zones() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "geometry.csv", "location_id,x,y\nA,0,0\nB,1,0\nC,3,0\n");
    let out = zipscan(&["zones", "--geometry", "geometry.csv", "--kmax", "1"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "zone,size,members\n0,1,A\n1,1,B\n2,1,C\n3,2,A;B\n4,2,B;C\n"
    );

    write(d, "matrix.csv", "location_id,A,B,C\nA,0,1,2\nB,1,0,1\nC,2,1,0\n");
    let out = zipscan(
        &[
            "zones",
            "--geometry",
            "matrix.csv",
            "--zones",
            "flex",
            "--max-size",
            "3",
            "--adjacency-k",
            "1",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(",3,A;B;C\n"));
    assert!(!text.contains(",2,A;C\n"));
}

fn column(table: &str, name: &str) -> usize {
    table
        .lines()
        .next()
        .unwrap()
        .split(',')
        .position(|c| c == name)
        .unwrap()
}

#[test]
fn simulate_writes_tables_and_power_increases_with_risk() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(
        d,
        "experiment.toml",
        r#"
master_seed = 5
replicates = 39
outbreaks_per_scenario = 40
methods = ["eb-zip"]
alphas = [0.05]

[[scenarios]]
name = "null"
locations = 16
p = 0.15
mu = 5.0
relative_risk = 1.0
baseline_weeks = 3
outbreak_weeks = 1
max_duration = 2
max_zone_size = 4

[[scenarios]]
name = "q2"
locations = 16
p = 0.15
mu = 5.0
relative_risk = 2.0
outbreak_size = 3
baseline_weeks = 3
outbreak_weeks = 1
max_duration = 2
max_zone_size = 4
"#,
    );
    let out = zipscan(&["simulate", "--config", "experiment.toml", "--out", "tables"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for f in ["detection.csv", "false_positive.csv", "datasets.csv", "experiment.json"] {
        assert!(d.join("tables").join(f).exists(), "{f}");
    }
    let fp = fs::read_to_string(d.join("tables/false_positive.csv")).unwrap();
    assert_eq!(fp.lines().count(), 2, "one null scenario x one alpha");

    let det = fs::read_to_string(d.join("tables/detection.csv")).unwrap();
    let (name_col, sig_col) = (column(&det, "name"), column(&det, "signalling"));
    let signalling = |name: &str| -> f64 {
        det.lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|f| f[name_col] == name)
            .map(|f| f[sig_col].parse().unwrap())
            .unwrap()
    };
    assert!(signalling("q2") > signalling("null"));
}
