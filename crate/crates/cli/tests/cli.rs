//! End-to-end runs of the `slgp` binary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn slgp(args: &[&str], out: &Path) -> Output {
    slgp_with_workers(args, out, None)
}

fn slgp_with_workers(args: &[&str], out: &Path, workers: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slgp"));
    cmd.args(args).arg("--out").arg(out);
    match workers {
        Some(n) => cmd.env("SLGP_WORKERS", n.to_string()),
        None => cmd.env_remove("SLGP_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn csv(path: PathBuf) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

/// Key paths and value kinds of a JSON document, arrays collapsed to `[]`.
fn layout(v: &Value, path: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            out.insert(format!("{path} object"));
            for (k, x) in m {
                layout(x, &format!("{path}.{k}"), out);
            }
        }
        Value::Array(items) => {
            out.insert(format!("{path} array"));
            for x in items {
                layout(x, &format!("{path}[]"), out);
            }
        }
        Value::String(_) => {
            out.insert(format!("{path} string"));
        }
        Value::Number(_) => {
            out.insert(format!("{path} number"));
        }
        Value::Bool(_) => {
            out.insert(format!("{path} bool"));
        }
        Value::Null => {
            out.insert(format!("{path} null"));
        }
    }
}

fn check_golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("SLGP_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "layout of {name} changed; rerun with SLGP_BLESS=1 if intended");
}

fn json_layout(v: &Value) -> String {
    let mut set = BTreeSet::new();
    layout(v, "$", &mut set);
    set.into_iter().map(|l| l + "\n").collect()
}

#[test]
fn plan_elbow_writes_four_weighted_components() {
    let dir = TempDir::new().unwrap();
    let o = slgp(&["plan", "--scenario", "elbow"], dir.path());
    ok(&o);
    let m = read_json(dir.path().join("mixture.json"));
    let comps = m["components"].as_array().unwrap();
    assert_eq!(comps.len(), 4);
    let total: f64 = comps.iter().map(|c| c["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12, "weights sum to {total}");
    for id in ["free", "fix1", "fix2", "fix12"] {
        assert!(dir.path().join(format!("solution-{id}.json")).exists());
        assert!(dir.path().join(format!("policy-{id}.json")).exists());
    }
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("fStar") && report.contains("logRatio") && report.contains("weight"));
}

#[test]
fn plan_push_prefers_two_fingers_in_log_ratio() {
    let dir = TempDir::new().unwrap();
    ok(&slgp(&["plan", "--scenario", "push"], dir.path()));
    let m = read_json(dir.path().join("mixture.json"));
    let lr = |id: &str| {
        m["components"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["skeletonId"] == id)
            .unwrap()["logRatio"]
            .as_f64()
            .unwrap()
    };
    assert!(lr("two") > lr("single"));
}

#[test]
fn output_layouts_match_golden() {
    let dir = TempDir::new().unwrap();
    ok(&slgp(&["simulate", "--scenario", "tworoute", "--seeds", "1..2", "--trace"], dir.path()));
    let p = dir.path();
    for name in ["mixture.json", "solution-A.json", "policy-A.json", "scenario.json", "config.json"] {
        check_golden(&format!("{name}.layout"), &json_layout(&read_json(p.join(name))));
    }
    let rollouts = fs::read_to_string(p.join("rollouts.jsonl")).unwrap();
    let first: Value = serde_json::from_str(rollouts.lines().next().unwrap()).unwrap();
    check_golden("rollouts.jsonl.layout", &json_layout(&first));
    let headers: String = ["summary.csv", "weights.csv", "trace-A.csv"]
        .iter()
        .map(|f| format!("{f}: {}\n", fs::read_to_string(p.join(f)).unwrap().lines().next().unwrap()))
        .collect();
    check_golden("csv.headers", &headers);
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let runs: Vec<TempDir> = [Some(1), Some(4)]
        .into_iter()
        .map(|w| {
            let dir = TempDir::new().unwrap();
            ok(&slgp_with_workers(&["simulate", "--scenario", "tworoute", "--seeds", "1..6"], dir.path(), w));
            dir
        })
        .collect();
    let names: BTreeSet<_> = fs::read_dir(runs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(names.len() >= 10);
    for name in names {
        if name == "config.json" {
            continue;
        }
        let a = fs::read(runs[0].path().join(&name)).unwrap();
        let b = fs::read(runs[1].path().join(&name)).unwrap();
        assert!(a == b, "{name:?} differs between runs");
    }
}

#[test]
fn noiseless_switching_rollout_reproduces_the_plan() {
    for scenario in ["elbow", "tworoute"] {
        let dir = TempDir::new().unwrap();
        ok(&slgp(
            &["simulate", "--scenario", scenario, "--controller", "switching", "--noise", "0", "--seeds", "1"],
            dir.path(),
        ));
        let rows = csv(dir.path().join("summary.csv"));
        assert_eq!(rows[0][4], "finalDeviation");
        let dev: f64 = rows[1][4].parse().unwrap();
        assert!(dev < 1e-6, "{scenario}: final deviation {dev}");
    }
}

#[test]
fn tworoute_disturbance_switches_route() {
    let dir = TempDir::new().unwrap();
    ok(&slgp(
        &["simulate", "--scenario", "tworoute", "--disturb", "12:0.0,0.8", "--seeds", "1..20"],
        dir.path(),
    ));
    let rows = csv(dir.path().join("weights.csv"));
    assert_eq!(rows[0], ["seed", "n", "A", "B", "active"]);
    for r in &rows[1..] {
        let n: usize = r[1].parse().unwrap();
        let b: f64 = r[3].parse().unwrap();
        if n < 12 {
            assert_eq!(r[4], "A", "seed {} step {n}", r[0]);
        } else if n > 12 {
            assert_eq!(r[4], "B", "seed {} step {n}", r[0]);
            assert!(b >= 0.5 - 1e-9, "seed {} step {n}: weight of B {b}", r[0]);
        }
    }
    let summary = csv(dir.path().join("summary.csv"));
    assert_eq!(summary.len(), 21);
    assert!(summary[1..].iter().all(|r| r[2] == "B" && r[6] == "1"));
}

fn mean_final_error(controller: &str) -> f64 {
    let dir = TempDir::new().unwrap();
    ok(&slgp(
        &["simulate", "--scenario", "elbow", "--controller", controller, "--seeds", "1..40"],
        dir.path(),
    ));
    let rows = csv(dir.path().join("summary.csv"));
    let errors: Vec<f64> = rows[1..].iter().map(|r| r[3].parse().unwrap()).collect();
    errors.iter().sum::<f64>() / errors.len() as f64
}

#[test]
fn switching_beats_blending_on_noisy_elbow() {
    let (b, s) = (mean_final_error("blending"), mean_final_error("switching"));
    assert!(s < b, "switching {s} vs blending {b}");
}

#[test]
fn unconverged_plan_exits_nonzero_with_status() {
    let dir = TempDir::new().unwrap();
    let o = slgp(&["plan", "--scenario", "elbow", "--set", "solver.maxOuter=1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("maxIterations"), "{report}");
    assert!(!dir.path().join("mixture.json").exists());
}

#[test]
fn configuration_layers_apply_in_order() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"scenario": {"name": "tworoute", "horizon": 30}, "hysteresis": 0.5}"#).unwrap();
    let out = dir.path().join("out");
    let o = slgp(
        &["plan", "--config", cfg.to_str().unwrap(), "--set", "scenario.horizon=24"],
        &out,
    );
    ok(&o);
    let c = read_json(out.join("config.json"));
    assert_eq!(c["scenario"]["name"], "tworoute");
    assert_eq!(c["scenario"]["horizon"], 24);
    assert_eq!(c["hysteresis"], 0.5);
}

#[test]
fn invalid_configuration_is_reported() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["plan", "--set", "solver.noSuchKey=1"][..],
        &["plan", "--set", "solver.tolStep=-1"][..],
        &["simulate", "--disturb", "99:1,0"][..],
        &["simulate", "--seeds", "5..1"][..],
    ] {
        let o = slgp(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
}

#[test]
fn selftest_passes_and_prints_reference_weights() {
    let o = Command::new(env!("CARGO_BIN_EXE_slgp")).arg("selftest").output().unwrap();
    ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains(" 0 failed") && !stdout.contains("[FAIL]"), "{stdout}");
    let table = stdout.lines().find(|l| l.starts_with("[PASS] table")).expect("table arithmetic line");
    let start = table.find("weights [").expect("weights in table line") + "weights [".len();
    let end = start + table[start..].find(']').unwrap();
    let w: Vec<f64> = table[start..end].split(", ").map(|v| v.parse().unwrap()).collect();
    assert_eq!(w.len(), 4);
    for (a, b) in w.iter().zip([0.0626, 0.0850, 0.5810, 0.2713]) {
        assert!((a - b).abs() <= 1e-3, "{table}");
    }
}
