use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_grauert-lab");
const HEADER: &str = "experiment,manifold,param_name,param_value,value,reference,abs_err,rel_err,quad_err,clip_count,seed";

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn circle_zeros(out: &Path, seed: u64) -> String {
    format!(
        r#"{{"experiment": "circle-zeros", "manifold": {{"kind": "circle", "dim": 1}}, "output_dir": {:?}, "modes": [5, 10, 20], "seed": {seed}}}"#,
        out.to_str().unwrap()
    )
}

fn listing(dir: &Path) -> Vec<String> {
    if !dir.exists() {
        return Vec::new();
    }
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn circle_zeros_pass_and_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.json", &circle_zeros(&out, 4));
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(listing(&out), ["manifest.json", "results.csv", "summary.json"]);

    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let mut sin_rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 11);
        assert_eq!(cells[0], "circle-zeros");
        assert_eq!(cells[10], "4");
        if cells[2] == "k_sin" {
            let k: f64 = cells[3].parse().unwrap();
            let v: f64 = cells[4].parse().unwrap();
            assert_eq!(v, 2.0 * k);
            sin_rows += 1;
        }
    }
    assert_eq!(sin_rows, 3);

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "pass");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["experiment"], "circle-zeros");
}

#[test]
fn same_seed_same_bytes_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let body = |d: &str| {
        format!(
            r#"{{"experiment": "random-onb-sphere", "manifold": {{"kind": "round-sphere", "dim": 2}}, "output_dir": {:?}, "modes": [6], "samples": 3, "grid": {{"n_radial": 4, "n_base": 12, "n_fiber": 8}}, "seed": 11}}"#,
            tmp.path().join(d).to_str().unwrap()
        )
    };
    let a = write_config(tmp.path(), "a.json", &body("a"));
    let b = write_config(tmp.path(), "b.json", &body("b"));
    let oa = run(&["run", "--config", a.to_str().unwrap(), "--threads", "1"]);
    let ob = run(&["run", "--config", b.to_str().unwrap(), "--threads", "3"]);
    assert!(matches!(oa.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(oa.status.code(), ob.status.code());
    let ra = fs::read(tmp.path().join("a/results.csv")).unwrap();
    let rb = fs::read(tmp.path().join("b/results.csv")).unwrap();
    assert!(!ra.is_empty());
    assert_eq!(ra, rb);
}

#[test]
fn seed_override_lands_in_every_row() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.json", &circle_zeros(&out, 1));
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--seed", "99"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",99")));
}

#[test]
fn malformed_json_exits_2_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "bad.json", &circle_zeros(&out, 0)[..40]);
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(listing(&out).is_empty());
}

#[test]
fn unknown_field_exits_2_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let body = circle_zeros(&out, 0).replacen('{', r#"{"moedes": [3], "#, 1);
    let cfg = write_config(tmp.path(), "typo.json", &body);
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(listing(&out).is_empty());
}

#[test]
fn missing_config_and_bad_ranges_exit_2() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["run", "--config", tmp.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let out = tmp.path().join("out");
    let body = format!(
        r#"{{"experiment": "geometry-checks", "manifold": {{"kind": "hyperboloid", "dim": 2}}, "epsilon": 2.5, "output_dir": {:?}}}"#,
        out.to_str().unwrap()
    );
    let cfg = write_config(tmp.path(), "h.json", &body);
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(listing(&out).is_empty());

    let cfg = write_config(tmp.path(), "c.json", &circle_zeros(&out, 0));
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(listing(&out).is_empty());
}

#[test]
fn unwritable_output_dir_exits_2() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = write_config(tmp.path(), "c.json", &circle_zeros(&blocker.join("out"), 0));
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_tables_and_errors() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["report", "--dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["report", "--dir", tmp.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(tmp.path().join("results.csv"), format!("{HEADER}\n")).unwrap();
    assert_eq!(run(&["report", "--dir", tmp.path().to_str().unwrap()]).status.code(), Some(2));
    fs::write(tmp.path().join("results.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(run(&["report", "--dir", tmp.path().to_str().unwrap()]).status.code(), Some(2));

    let rows = [
        "husimi,circle1,k_log_l1,5,0.02,0,0.02,,,0,0",
        "husimi,circle1,k_log_l1,10,0.01,0,0.01,,,0,0",
        "husimi,circle1,k_log_l1,20,0.005,0,0.005,,,0,0",
    ];
    fs::write(tmp.path().join("results.csv"), format!("{HEADER}\n{}\n", rows.join("\n"))).unwrap();
    let o = run(&["report", "--dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("husimi on circle1: k_log_l1"));
    let report = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let ratios: Vec<&str> = report.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(ratios, ["", "2", "2"]);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["run"]).status.code(), Some(2));
}
