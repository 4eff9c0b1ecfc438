//! Result files. Everything is rendered in memory first and then moved into
//! place, so a failed run leaves no partial outputs behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::Resolved;
use crate::experiments::Outcome;
use crate::LabError;

pub const RESULTS_HEADER: [&str; 11] = [
    "experiment",
    "manifold",
    "param_name",
    "param_value",
    "value",
    "reference",
    "abs_err",
    "rel_err",
    "quad_err",
    "clip_count",
    "seed",
];

pub const RESULTS: &str = "results.csv";
pub const SUMMARY: &str = "summary.json";
pub const MANIFEST: &str = "manifest.json";

/// Shortest round-trip text; exponent form outside a readable range.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> LabError + '_ {
    move |e| LabError::Io(format!("{}: {e}", path.display()))
}

pub fn render_results(cfg: &Resolved, outcome: &Outcome) -> Result<Vec<u8>, LabError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let exp = cfg.experiment.name();
    let manifold = cfg.manifold.label();
    let seed = cfg.seed.to_string();
    let fail = |e: csv::Error| LabError::Io(format!("csv: {e}"));
    w.write_record(RESULTS_HEADER).map_err(fail)?;
    for r in &outcome.rows {
        w.write_record([
            exp,
            &manifold,
            &r.param_name,
            &fmt_f64(r.param_value),
            &fmt_f64(r.value),
            &opt(r.reference),
            &opt(r.abs_err()),
            &opt(r.rel_err()),
            &opt(r.quad_err),
            &r.clip_count.to_string(),
            &seed,
        ])
        .map_err(fail)?;
    }
    w.into_inner().map_err(|e| LabError::Io(format!("csv: {e}")))
}

pub fn render_summary(cfg: &Resolved, outcome: &Outcome) -> Vec<u8> {
    let summary = json!({
        "experiment": cfg.experiment.name(),
        "manifold": cfg.manifold.label(),
        "status": if outcome.passed() { "pass" } else { "fail" },
        "checks": outcome.checks,
    });
    let mut out = serde_json::to_vec_pretty(&summary).expect("plain json");
    out.push(b'\n');
    out
}

pub fn render_manifest(cfg: &Resolved, threads: Option<usize>) -> Vec<u8> {
    let manifest = json!({
        "tool": "grauert-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": grauert_core::VERSION,
        "seed": cfg.seed,
        "threads": threads,
        "config": cfg,
        "outputs": [RESULTS, SUMMARY, MANIFEST],
    });
    let mut out = serde_json::to_vec_pretty(&manifest).expect("plain json");
    out.push(b'\n');
    out
}

/// Writes the three files into `cfg.output_dir` via staged renames.
pub fn write_all(cfg: &Resolved, outcome: &Outcome, threads: Option<usize>) -> Result<(), LabError> {
    let files = [
        (RESULTS, render_results(cfg, outcome)?),
        (SUMMARY, render_summary(cfg, outcome)),
        (MANIFEST, render_manifest(cfg, threads)),
    ];
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let result = (|| {
        for (name, bytes) in &files {
            let tmp = dir.join(format!(".{name}.partial"));
            fs::write(&tmp, bytes).map_err(io(&tmp))?;
            staged.push((tmp, dir.join(name)));
        }
        for (tmp, dst) in &staged {
            fs::rename(tmp, dst).map_err(io(dst))?;
        }
        Ok(())
    })();
    if result.is_err() {
        for (tmp, dst) in &staged {
            let _ = fs::remove_file(tmp);
            let _ = fs::remove_file(dst);
        }
    }
    result
}
