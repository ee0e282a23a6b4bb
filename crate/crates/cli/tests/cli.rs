use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oversmooth::verify::Check;
use serde_json::Value;
use tempfile::TempDir;

fn oversmooth(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oversmooth"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn spectrum_of_counterexample() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(&["spectrum", "--preset", "counterexample"], tmp.path());
    assert!(o.status.success());
    let s = read_json(&tmp.path().join("summary.json"));
    assert_eq!(s["components"], 1);
    assert_eq!(s["n"], 4);
    assert_eq!(s["m_edges"], 4);
    let spectrum = fs::read_to_string(tmp.path().join("spectrum.csv")).unwrap();
    assert_eq!(spectrum.lines().count(), 5);
    assert!(tmp.path().join("histogram.csv").exists());
}

#[test]
fn spectrum_of_empty_graph_from_file() {
    let tmp = TempDir::new().unwrap();
    let edges = tmp.path().join("g.txt");
    fs::write(&edges, "# three isolated nodes\nn 3\n").unwrap();
    let o = oversmooth(
        &["spectrum", "--edges", edges.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&tmp.path().join("summary.json"));
    assert_eq!(s["components"], 3);
    assert_eq!(s["lambda"], 0.0);
    assert!(s["lambda_inv"].is_null());
}

#[test]
fn unreadable_graph_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &["spectrum", "--edges", "/nonexistent/graph.txt"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let o = oversmooth(&["spectrum", "--er", "10"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = oversmooth(&["spectrum", "--preset", "nope"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn added_edges_grow_the_graph() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &["spectrum", "--er", "60,0.05", "--add-edges", "40"],
        tmp.path(),
    );
    assert!(o.status.success());
    let noisy = read_json(&tmp.path().join("summary.json"));
    let o = oversmooth(&["spectrum", "--er", "60,0.05"], tmp.path());
    assert!(o.status.success());
    let clean = read_json(&tmp.path().join("summary.json"));
    assert_eq!(
        noisy["m_edges"].as_u64().unwrap(),
        clean["m_edges"].as_u64().unwrap() + 40
    );
}

#[test]
fn field_verdicts() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(&["field", "--case", "1"], tmp.path());
    assert!(stdout(&o).contains("uniform decrease: yes"));
    let o = oversmooth(&["field", "--case", "2"], tmp.path());
    assert!(stdout(&o).contains("uniform decrease: no"));
    let o = oversmooth(&["field", "--case", "1", "--w", "0"], tmp.path());
    assert!(stdout(&o).contains("uniform decrease: yes"));
    let csv = fs::read_to_string(tmp.path().join("field_w1.2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41 * 41 + 1);
    let o = oversmooth(&["field", "--case", "3"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn field_sweep_writes_one_file_per_weight() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &["field", "--case", "2", "--sweep", "--resolution", "11"],
        tmp.path(),
    );
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 6);
    for w in ["0.5", "1", "1.2", "1.5", "2", "4"] {
        assert!(tmp.path().join(format!("field_w{w}.csv")).exists(), "{w}");
    }
}

#[test]
fn trajectory_inside_m_stays_there() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &[
            "trajectory",
            "--er",
            "120,0.1",
            "--x0-in-m",
            "--layers",
            "5",
            "--svg",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let d: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(d < 1e-10, "{line}");
    }
}

#[test]
fn trajectory_summary_and_bound() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &[
            "trajectory",
            "--er",
            "150,0.2",
            "--s",
            "0.5",
            "--channels",
            "8",
            "--svg",
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    let s = read_json(&tmp.path().join("trajectory_summary.json"));
    let lambda = s["lambda"].as_f64().unwrap();
    assert!((s["s_lambda"].as_f64().unwrap() - 0.5 * lambda).abs() < 1e-9);
    assert_eq!(s["s_lambda_below_one"], true);
    assert_eq!(s["bound_violations"].as_array().unwrap().len(), 0);
    let svg = fs::read_to_string(tmp.path().join("trajectory.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn threshold_and_markov_and_counterexample() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(&["threshold", "--n", "1000", "--p", "0.1"], tmp.path());
    assert!(o.status.success());
    let t = read_json(&tmp.path().join("threshold.json"));
    let expected =
        (1.0f64 / 7.0) * ((1000.0 * 0.1 - 0.1 + 1.0) / (4.0f64 * 1000.0 / 0.05).ln()).sqrt();
    assert!((t["s0"].as_f64().unwrap() - expected).abs() < 1e-12);

    let o = oversmooth(&["markov", "--steps", "30"], tmp.path());
    assert!(o.status.success());
    let m = fs::read_to_string(tmp.path().join("markov.csv")).unwrap();
    assert_eq!(m.lines().count(), 32);

    let o = oversmooth(&["markov", "--preset", "counterexample"], tmp.path());
    assert!(o.status.success());

    let o = oversmooth(&["counterexample", "--trials", "5"], tmp.path());
    assert!(o.status.success());
    let c = read_json(&tmp.path().join("counterexample_summary.json"));
    assert!(c["control_ranks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|k| k == 1));
}

#[test]
fn concentration_small_run() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &["concentration", "--n", "200", "--p", "0.3", "--trials", "4"],
        tmp.path(),
    );
    assert!(o.status.success());
    let r = read_json(&tmp.path().join("concentration.json"));
    assert_eq!(r["trials"], 4);
    assert_eq!(r["passed"], true);
}

#[test]
fn verify_single_check_mode() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &["verify", "--check", "relu-lemma", "--trials", "10000"],
        tmp.path(),
    );
    assert!(o.status.success());
    let reports: Vec<_> = fs::read_dir(tmp.path().join("reports"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(reports.len(), 2, "{reports:?}");
    let r = read_json(&tmp.path().join("reports/relu-lemma.json"));
    assert_eq!(r["trials"], 10000);
    assert_eq!(r["violations"], 0);
}

#[test]
fn verify_rejects_unknown_check() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(&["verify", "--check", "nope"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bypassing_assumptions_reports_violations() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &[
            "verify",
            "--check",
            "layer-contraction",
            "--bypass-assumptions",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let r = read_json(&tmp.path().join("reports/layer-contraction.json"));
    assert!(r["violations"].as_u64().unwrap() > 0);
    assert!(r["payload"].is_object());
}

#[test]
fn tolerance_override_is_applied() {
    let tmp = TempDir::new().unwrap();
    let o = oversmooth(
        &[
            "verify",
            "--check",
            "rank-control",
            "--tol",
            "rank_relative=1e-6",
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    let s = read_json(&tmp.path().join("reports/summary.json"));
    assert_eq!(s["tolerances"]["rank_relative"], 1e-6);
    let o = oversmooth(&["verify", "--tol", "bogus=1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        oversmooth(&["verify", "--seed", "42"], dir.path());
        oversmooth(&["spectrum", "--er", "80,0.1", "--seed", "7"], dir.path());
        oversmooth(
            &["trajectory", "--er", "80,0.1", "--seed", "7", "--svg"],
            dir.path(),
        );
        oversmooth(&["field", "--case", "2"], dir.path());
    }
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    let ra = dir_bytes(&a.path().join("reports"));
    assert_eq!(ra.len(), Check::ALL.len() + 1);
    assert_eq!(ra, dir_bytes(&b.path().join("reports")));
}
