//! The eight named experiments. Each returns its rows in parameter order and
//! the pass/fail checks derived from them.

use std::f64::consts::PI;

use grauert_core::currents::{
    empirical_zero_pairing, empirical_zero_pairing_rows, husimi_average, limit_zero_pairing, liouville_average,
    log_husimi_l1, log_moving_norm, BaseFactor, RadialBump, TestFunction, TraceKernel,
};
use grauert_core::geometry::{
    complexify, limit_form_identity_residual, monge_ampere, monge_ampere_equation_residual, ManifoldKind,
};
use grauert_core::quadrature::{ball_bundle_grid, sphere_bundle_grid};
use grauert_core::randombasis::{cluster_stream, random_onb, RandomBasisConfig};
use grauert_core::spectral::{enumerate_cluster, ComplexEigenfunction, EigenfunctionSpec, Parity};
use grauert_core::zeros::{
    argument_principle_count, locate_zeros, real_nodal_pairing, zero_measure_pairing, Geodesic, Rect, StripFunction,
};
use grauert_core::{ComplexPoint, ModelManifold, PairingResult, TubePoint};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{Experiment, Resolved};
use crate::LabError;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub param_name: String,
    pub param_value: f64,
    pub value: f64,
    pub reference: Option<f64>,
    pub quad_err: Option<f64>,
    pub clip_count: usize,
}

impl Row {
    pub fn new(param_name: impl Into<String>, param_value: f64, value: f64, reference: Option<f64>) -> Self {
        Self {
            param_name: param_name.into(),
            param_value,
            value,
            reference,
            quad_err: None,
            clip_count: 0,
        }
    }

    fn with_pairing(mut self, p: &PairingResult) -> Self {
        self.quad_err = Some(p.quad_error);
        self.clip_count = p.clip_count;
        self
    }

    pub fn abs_err(&self) -> Option<f64> {
        self.reference.map(|r| (self.value - r).abs())
    }

    pub fn rel_err(&self) -> Option<f64> {
        self.reference.filter(|r| *r != 0.0).map(|r| ((self.value - r) / r).abs())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Check {
    /// Acceptance criterion number, when the check is one.
    pub criterion: Option<u8>,
    pub name: String,
    pub value: f64,
    pub comparison: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

fn at_most(criterion: u8, name: impl Into<String>, value: f64, threshold: f64) -> Check {
    Check {
        criterion: Some(criterion),
        name: name.into(),
        value,
        comparison: "<=",
        threshold,
        pass: value <= threshold,
    }
}

fn holds(criterion: u8, name: impl Into<String>, ok: bool) -> Check {
    Check {
        criterion: Some(criterion),
        name: name.into(),
        value: if ok { 1.0 } else { 0.0 },
        comparison: "==",
        threshold: 1.0,
        pass: ok,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn numerical(what: &str) -> impl Fn(grauert_core::Error) -> LabError + '_ {
    move |e| LabError::Numerical(format!("{what}: {e}"))
}

fn too_coarse(msg: String) -> LabError {
    LabError::Config(format!("grid too coarse: {msg}"))
}

fn decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn radii(cfg: &Resolved) -> Vec<f64> {
    let n = cfg.grid.n_radial;
    (0..n)
        .map(|i| cfg.delta + (cfg.epsilon - cfg.delta) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn run(cfg: &Resolved) -> Result<Outcome, LabError> {
    let m = cfg.manifold();
    match cfg.experiment {
        Experiment::GeometryChecks => geometry_checks(cfg, &m),
        Experiment::CircleZeros => circle_zeros(cfg),
        Experiment::NormGrowth => norm_growth(cfg, &m),
        Experiment::Husimi => husimi(cfg, &m),
        Experiment::ZeroCurrent => zero_current(cfg, &m),
        Experiment::RandomOnbSphere => random_onb_sphere(cfg, &m),
        Experiment::TorusCounterexample => torus_counterexample(cfg, &m),
        Experiment::NodalProbe => nodal_probe(cfg, &m),
    }
}

/// A seeded point with `|xi| < radius`.
pub fn random_point<R: Rng>(m: &ModelManifold, radius: f64, rng: &mut R) -> TubePoint {
    let (x, frame): (Vec<f64>, Vec<Vec<f64>>) = match m.kind {
        ManifoldKind::Circle | ManifoldKind::FlatTorus => {
            let x = (0..m.dim).map(|_| rng.random::<f64>()).collect();
            let frame = (0..m.dim)
                .map(|i| (0..m.dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            (x, frame)
        }
        ManifoldKind::RoundSphere => {
            let th: f64 = rng.random_range(0.05..PI - 0.05);
            let ph: f64 = rng.random_range(0.0..2.0 * PI);
            (
                vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()],
                vec![
                    vec![th.cos() * ph.cos(), th.cos() * ph.sin(), -th.sin()],
                    vec![-ph.sin(), ph.cos(), 0.0],
                ],
            )
        }
        ManifoldKind::Hyperboloid => {
            let a: f64 = rng.random_range(0.0..1.5);
            let v: f64 = rng.random_range(0.0..2.0 * PI);
            (
                vec![a.sinh() * v.cos(), a.sinh() * v.sin(), a.cosh()],
                vec![vec![a.cosh() * v.cos(), a.cosh() * v.sin(), a.sinh()], vec![-v.sin(), v.cos(), 0.0]],
            )
        }
    };
    // The frames are orthonormal, so |xi| is the norm of the coefficients.
    let mut c: Vec<f64> = frame.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let target = radius * rng.random::<f64>();
    c.iter_mut().for_each(|v| *v *= target / n);
    let mut xi = vec![0.0; x.len()];
    for (coef, e) in c.iter().zip(&frame) {
        for (k, ek) in e.iter().enumerate() {
            xi[k] += coef * ek;
        }
    }
    TubePoint::new(m, &x, &xi).expect("frame is tangent")
}

/// A point with `|xi| = r` in the first frame direction, for residual checks.
fn probe_point(m: &ModelManifold, r: f64) -> TubePoint {
    let (x, xi): (Vec<f64>, Vec<f64>) = match m.kind {
        ManifoldKind::Circle | ManifoldKind::FlatTorus => {
            let x = (0..m.dim).map(|i| 0.1 + 0.3 * i as f64).collect();
            let dir: Vec<f64> = (0..m.dim).map(|i| 3.0 + i as f64).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            (x, dir.iter().map(|v| r * v / n).collect())
        }
        ManifoldKind::RoundSphere => (vec![0.6, 0.0, 0.8], vec![0.48 * r, 0.8 * r, -0.36 * r]),
        ManifoldKind::Hyperboloid => {
            let a: f64 = 0.4;
            (vec![a.sinh(), 0.0, a.cosh()], vec![0.0, r, 0.0])
        }
    };
    TubePoint::new(m, &x, &xi).expect("tangent by construction")
}

fn geometry_checks(cfg: &Resolved, m: &ModelManifold) -> Result<Outcome, LabError> {
    let mut rng = cluster_stream(cfg.seed, 0);
    let radius = if cfg.epsilon > 0.0 { cfg.epsilon } else { 1.0f64.min(0.5 * m.tube_radius) };
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.samples {
        let p = random_point(m, radius, &mut rng);
        let z = complexify(m, &p).map_err(numerical("complexify"))?;
        let ma = monge_ampere(m, &z).map_err(numerical("monge-ampere"))?;
        worst = worst.max((ma - 2.0 * p.norm).abs() / (1.0 + p.norm));
    }
    let mut rows = vec![Row::new("pullback_points", cfg.samples as f64, worst, Some(0.0))];
    let mut checks = vec![at_most(7, "pullback equals twice the norm", worst, 1e-10)];
    if m.dim >= 2 && cfg.epsilon > 0.0 {
        let p = probe_point(m, cfg.epsilon);
        let h = cfg.fd_step;
        let ma = monge_ampere_equation_residual(m, &p, h).map_err(numerical("equation residual"))?;
        let id = limit_form_identity_residual(m, &p, h).map_err(numerical("identity residual"))?;
        let id2 = limit_form_identity_residual(m, &p, 2.0 * h).map_err(numerical("identity residual"))?;
        rows.push(Row::new("equation_residual_h", h, ma, Some(0.0)));
        rows.push(Row::new("identity_residual_h", h, id, Some(0.0)));
        rows.push(Row::new("identity_residual_h", 2.0 * h, id2, Some(0.0)));
        checks.push(at_most(7, "Monge-Ampere equation residual", ma, 1e-6));
        checks.push(at_most(7, "limit form identity residual", id, 1e-5));
        checks.push(holds(7, "identity residual grows ~4x when h doubles", (3.0..=5.0).contains(&(id2 / id))));
    }
    Ok(Outcome { rows, checks })
}

fn circle_zeros(cfg: &Resolved) -> Result<Outcome, LabError> {
    let rect = Rect::new(0.0, 1.0, -cfg.epsilon, cfg.epsilon).map_err(|e| LabError::Config(e.to_string()))?;
    let rows = cfg
        .modes
        .par_iter()
        .map(|&k| {
            let count = |parity| -> Result<f64, LabError> {
                let f = EigenfunctionSpec::circle(k, parity).map_err(numerical("mode"))?;
                let g = StripFunction::new(&f, Geodesic::Circle).map_err(numerical("strip"))?;
                Ok(argument_principle_count(&g, &rect, 16).map_err(numerical("argument principle"))? as f64)
            };
            Ok(vec![
                Row::new("k_sin", k as f64, count(Parity::Sin)?, Some(2.0 * k as f64)),
                Row::new("k_exp", k as f64, count(Parity::ExpPlus)?, Some(0.0)),
            ])
        })
        .collect::<Result<Vec<_>, LabError>>()?
        .concat();
    let exact = rows.iter().all(|r| r.abs_err() == Some(0.0));
    Ok(Outcome {
        checks: vec![holds(1, "sin counts equal 2k and exp counts equal 0", exact)],
        rows,
    })
}

fn norm_growth(cfg: &Resolved, m: &ModelManifold) -> Result<Outcome, LabError> {
    let sphere = m.kind == ManifoldKind::RoundSphere;
    let (nb, nf) = (cfg.grid.n_base, cfg.grid.n_fiber);
    let top = *cfg.modes.iter().max().expect("modes validated") as usize;
    if sphere && (nb <= top || nf <= 2 * top) {
        return Err(too_coarse(format!("sphere degree {top} needs n_base > {top} and n_fiber > {}", 2 * top)));
    }
    if !sphere && nb <= 4 * top {
        return Err(too_coarse(format!("circle mode {top} needs n_base > {}", 4 * top)));
    }
    if cfg.delta <= 0.0 {
        return Err(LabError::Config("norm-growth needs delta > 0".into()));
    }
    let rs = radii(cfg);
    let rows = cfg
        .modes
        .par_iter()
        .map(|&k| {
            let f = if sphere {
                EigenfunctionSpec::sphere(k, 0)
            } else {
                EigenfunctionSpec::circle(k, Parity::Cos)
            }
            .map_err(numerical("mode"))?;
            let mut sup: f64 = 0.0;
            for &r in &rs {
                let g = sphere_bundle_grid(m, r, nb, nf).map_err(numerical("grid"))?;
                sup = sup.max((log_moving_norm(&f, &g).map_err(numerical("moving norm"))? / f.lambda - r).abs());
            }
            Ok(Row::new(if sphere { "l" } else { "k" }, k as f64, sup, Some(0.0)))
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let errs: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let checks = if sphere {
        vec![
            holds(3, "sphere growth error decreases in l", decreasing(&errs)),
            at_most(3, "sphere growth error at largest l", *errs.last().expect("nonempty"), 0.1),
        ]
    } else {
        // Small k carry a genuine e^{-2 lambda r} offset; the bound is stated at the top mode.
        vec![at_most(3, "circle growth sup error at largest k", *errs.last().expect("nonempty"), 1e-6)]
    };
    Ok(Outcome { rows, checks })
}

fn husimi(cfg: &Resolved, m: &ModelManifold) -> Result<Outcome, LabError> {
    let top = *cfg.modes.iter().max().expect("modes validated") as usize;
    if cfg.grid.n_base <= 4 * top {
        return Err(too_coarse(format!("circle mode {top} needs n_base > {}", 4 * top)));
    }
    let ball = ball_bundle_grid(m, cfg.epsilon, cfg.grid.n_radial, cfg.grid.n_base, cfg.grid.n_fiber, cfg.delta)
        .map_err(|e| LabError::Config(e.to_string()))?;
    let r_mid = 0.5 * (cfg.delta + cfg.epsilon);
    let shell = sphere_bundle_grid(m, r_mid, cfg.grid.n_base, cfg.grid.n_fiber).map_err(numerical("grid"))?;
    let symbol = |p: &TubePoint| 1.0 + 0.5 * (2.0 * PI * p.x[0]).cos() + 0.25 * p.xi[0] / p.norm;
    let liouville = liouville_average(symbol, &shell).map_err(numerical("liouville average"))?;
    let rows = cfg
        .modes
        .par_iter()
        .map(|&k| {
            let f = EigenfunctionSpec::circle(k, Parity::Cos).map_err(numerical("mode"))?;
            let l1 = log_husimi_l1(&f, &ball).map_err(numerical("log husimi"))?;
            let avg = husimi_average(&f, symbol, &shell).map_err(numerical("husimi average"))?;
            Ok(vec![
                Row::new("k_log_l1", k as f64, l1.value, Some(0.0)).with_pairing(&l1),
                Row::new("k_average", k as f64, avg.value, Some(liouville)).with_pairing(&avg),
            ])
        })
        .collect::<Result<Vec<_>, LabError>>()?
        .concat();
    let l1: Vec<f64> = rows.iter().filter(|r| r.param_name == "k_log_l1").map(|r| r.value).collect();
    let last_avg = rows.iter().rev().find(|r| r.param_name == "k_average").expect("nonempty");
    Ok(Outcome {
        checks: vec![
            at_most(4, "husimi average gap at largest k", last_avg.abs_err().unwrap_or(f64::NAN), 1e-3),
            holds(4, "log husimi L1 decreases in k", decreasing(&l1)),
            at_most(4, "log husimi L1 at largest k", *l1.last().expect("nonempty"), 0.02),
        ],
        rows,
    })
}

fn zero_current(cfg: &Resolved, m: &ModelManifold) -> Result<Outcome, LabError> {
    if m.kind != ManifoldKind::Circle {
        return sphere_zero_current(cfg, m, false);
    }
    let top = *cfg.modes.iter().max().expect("modes validated") as usize;
    if cfg.grid.n_base <= 8 * top {
        return Err(too_coarse(format!("circle mode {top} needs n_base > {}", 8 * top)));
    }
    if cfg.delta != 0.0 {
        return Err(LabError::Config("circle zero-current uses delta = 0 (the test touches the real axis)".into()));
    }
    let target = 1.0 / (2.0 * PI);
    let test = TestFunction::new(
        m,
        RadialBump::new(0.0, cfg.epsilon).map_err(|e| LabError::Config(e.to_string()))?,
        BaseFactor::CosSq { axis: 0 },
    )
    .map_err(|e| LabError::Config(e.to_string()))?;
    let grid = ball_bundle_grid(m, cfg.epsilon, cfg.grid.n_radial, cfg.grid.n_base, cfg.grid.n_fiber, 0.0)
        .map_err(|e| LabError::Config(e.to_string()))?;
    let kernel = TraceKernel::build(&grid, &[test.clone()], cfg.fd_step).map_err(numerical("trace kernel"))?;
    let lim = limit_zero_pairing(&kernel).map_err(numerical("limit pairing"))?.remove(0);
    let rect = Rect::new(0.0, 1.0, -cfg.epsilon, cfg.epsilon).map_err(|e| LabError::Config(e.to_string()))?;
    let per_mode = cfg
        .modes
        .par_iter()
        .map(|&k| {
            let f = EigenfunctionSpec::circle(k, Parity::Sin).map_err(numerical("mode"))?;
            let strip = StripFunction::new(&f, Geodesic::Circle).map_err(numerical("strip"))?;
            let zl = locate_zeros(&strip, &rect, 1e-13).map_err(numerical("zeros"))?;
            let riemann = zero_measure_pairing(&zl, &strip, |p| test.eval(p), f.lambda).map_err(numerical("zero sum"))?;
            let emp = empirical_zero_pairing(&f, &kernel, cfg.clip_floor).map_err(numerical("empirical"))?.remove(0);
            let e = EigenfunctionSpec::circle(k, Parity::ExpPlus).map_err(numerical("mode"))?;
            let exp = empirical_zero_pairing(&e, &kernel, cfg.clip_floor).map_err(numerical("empirical"))?.remove(0);
            Ok(vec![
                Row::new("k_zero_sum", k as f64, riemann, Some(target)),
                Row::new("k_empirical", k as f64, emp.value, Some(riemann)).with_pairing(&emp),
                Row::new("k_exp", k as f64, exp.value, Some(0.0)).with_pairing(&exp),
            ])
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let mut rows = vec![Row::new("limit", 0.0, lim.value, Some(target)).with_pairing(&lim)];
    rows.extend(per_mode.concat());
    let worst = |name: &str, pred: &dyn Fn(&Row) -> bool| {
        rows.iter()
            .filter(|r| r.param_name == name && pred(r))
            .map(|r| r.abs_err().unwrap_or(f64::NAN))
            .fold(0.0, f64::max)
    };
    // The log route is held to 1e-3 from k = 20 on (or at the top mode if none reach it).
    let k_min = if top >= 20 { 20.0 } else { top as f64 };
    let exp_ok = rows
        .iter()
        .filter(|r| r.param_name == "k_exp")
        .all(|r| r.value.abs() <= r.quad_err.unwrap_or(0.0).max(1e-12));
    Ok(Outcome {
        checks: vec![
            at_most(2, "zero sum error", worst("k_zero_sum", &|_| true), 1e-12),
            at_most(2, "empirical vs zero sum", worst("k_empirical", &|r| r.param_value >= k_min), 1e-3),
            at_most(2, "limit pairing error", worst("limit", &|_| true), 1e-6),
            holds(6, "exp modes pair to 0 within quadrature error", exp_ok),
        ],
        rows,
    })
}

fn sphere_tests(m: &ModelManifold, cfg: &Resolved) -> Result<Vec<TestFunction>, LabError> {
    let rb = RadialBump::new(0.5 * (cfg.delta + cfg.epsilon), 0.5 * (cfg.epsilon - cfg.delta))
        .map_err(|e| LabError::Config(e.to_string()))?;
    [
        BaseFactor::Const(1.0),
        BaseFactor::Quadratic { c0: 0.5, diag: vec![0.0, 0.0, 1.0] },
        BaseFactor::Quadratic { c0: 1.0, diag: vec![0.5, -0.5, 0.0] },
    ]
    .into_iter()
    .map(|b| TestFunction::new(m, rb, b).map_err(|e| LabError::Config(e.to_string())))
    .collect()
}

/// Zero-current pairings on the sphere. With `random`, each mode uses member 0
/// of `samples` independently rotated clusters and rows report medians;
/// otherwise the zonal harmonic of each degree is used.
fn sphere_zero_current(cfg: &Resolved, m: &ModelManifold, random: bool) -> Result<Outcome, LabError> {
    if cfg.delta <= 0.0 {
        return Err(LabError::Config("sphere pairings need delta > 0".into()));
    }
    let tests = sphere_tests(m, cfg)?;
    let grid = ball_bundle_grid(m, cfg.epsilon, cfg.grid.n_radial, cfg.grid.n_base, cfg.grid.n_fiber, cfg.delta)
        .map_err(|e| LabError::Config(e.to_string()))?;
    let kernel = TraceKernel::build(&grid, &tests, cfg.fd_step).map_err(numerical("trace kernel"))?;
    let lim = limit_zero_pairing(&kernel).map_err(numerical("limit pairing"))?;
    let n_rows = if random { cfg.samples as usize } else { 1 };
    let mut rows = Vec::new();
    let mut rel = vec![Vec::new(); tests.len()];
    for &l in &cfg.modes {
        let plain = enumerate_cluster(m, l).map_err(numerical("cluster"))?;
        let mut coeffs = DMatrix::zeros(n_rows, plain.len());
        if random {
            for i in 0..n_rows {
                let rc = RandomBasisConfig {
                    seed: cfg.seed.wrapping_add(i as u64),
                    cluster_range: (l, l),
                    manifold: *m,
                };
                let onb = random_onb(&rc).map_err(numerical("random basis"))?;
                coeffs.row_mut(i).copy_from(&onb[0].coeffs.row(0));
            }
        } else {
            // Zonal member comes first in each sphere cluster.
            coeffs[(0, 0)] = Complex64::new(1.0, 0.0);
        }
        let res = empirical_zero_pairing_rows(&plain, &coeffs, &kernel, cfg.clip_floor).map_err(numerical("empirical"))?;
        for (t, lim_t) in lim.iter().enumerate() {
            let values: Vec<f64> = res.iter().map(|r| r[t].value).collect();
            let gaps: Vec<f64> = values.iter().map(|v| ((v - lim_t.value) / lim_t.value).abs()).collect();
            let mut row = Row::new(format!("l_test{t}"), l as f64, median(values), Some(lim_t.value));
            row.quad_err = Some(res.iter().map(|r| r[t].quad_error).fold(0.0, f64::max));
            row.clip_count = res.iter().map(|r| r[t].clip_count).sum();
            rel[t].push(median(gaps));
            rows.push(row);
        }
    }
    let checks = if random {
        rel.iter()
            .enumerate()
            .flat_map(|(t, g)| {
                [
                    holds(5, format!("test {t}: median gap at smallest l exceeds largest l"), g[0] > g[g.len() - 1]),
                    at_most(5, format!("test {t}: median relative gap at largest l"), g[g.len() - 1], 0.15),
                ]
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Outcome { rows, checks })
}

fn random_onb_sphere(cfg: &Resolved, m: &ModelManifold) -> Result<Outcome, LabError> {
    sphere_zero_current(cfg, m, true)
}

fn torus_counterexample(cfg: &Resolved, m: &ModelManifold) -> Result<Outcome, LabError> {
    if cfg.delta <= 0.0 {
        return Err(LabError::Config("torus pairings need delta > 0".into()));
    }
    let top = *cfg.modes.iter().max().expect("modes validated") as usize;
    if cfg.grid.n_base < 128 * top {
        return Err(too_coarse(format!("torus mode {top} needs n_base >= {}", 128 * top)));
    }
    let grid = ball_bundle_grid(m, cfg.epsilon, cfg.grid.n_radial, cfg.grid.n_base, cfg.grid.n_fiber, cfg.delta)
        .map_err(|e| LabError::Config(e.to_string()))?;
    let rb = RadialBump::new(0.5 * (cfg.delta + cfg.epsilon), 0.5 * (cfg.epsilon - cfg.delta))
        .map_err(|e| LabError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for &k in &cfg.modes {
        // cos(2 pi k z_1) vanishes on {k x_1 in 1/4 + Z/2, xi_1 = 0}; the test
        // lives on |x_1| < 0.2 / k, clear of those planes.
        let test = TestFunction::new(
            m,
            rb,
            BaseFactor::PeriodicBump {
                axis: 0,
                center: 0.0,
                half_width: 0.2 / k as f64,
            },
        )
        .map_err(|e| LabError::Config(e.to_string()))?;
        let kernel = TraceKernel::build(&grid, &[test], cfg.fd_step).map_err(numerical("trace kernel"))?;
        let mut n = vec![0i64; m.dim];
        n[0] = k as i64;
        let cos = EigenfunctionSpec::torus(n.clone(), Parity::Cos).map_err(numerical("mode"))?;
        let exp = EigenfunctionSpec::torus(n, Parity::ExpPlus).map_err(numerical("mode"))?;
        let c = empirical_zero_pairing(&cos, &kernel, cfg.clip_floor).map_err(numerical("empirical"))?.remove(0);
        let e = empirical_zero_pairing(&exp, &kernel, cfg.clip_floor).map_err(numerical("empirical"))?.remove(0);
        let lim = limit_zero_pairing(&kernel).map_err(numerical("limit"))?.remove(0);
        rows.push(Row::new("k_cos", k as f64, c.value, Some(0.0)).with_pairing(&c));
        rows.push(Row::new("k_exp", k as f64, e.value, Some(0.0)).with_pairing(&e));
        rows.push(Row::new("k_limit", k as f64, lim.value, None).with_pairing(&lim));
    }
    let worst_cos = rows
        .iter()
        .filter(|r| r.param_name == "k_cos")
        .map(|r| r.value.abs())
        .fold(0.0, f64::max);
    let exp_ok = rows
        .iter()
        .filter(|r| r.param_name == "k_exp")
        .all(|r| r.value.abs() <= r.quad_err.unwrap_or(0.0).max(1e-12));
    Ok(Outcome {
        checks: vec![
            at_most(6, "cosine pairing off its zero planes", worst_cos, 1e-4),
            holds(6, "exp modes pair to 0 within quadrature error", exp_ok),
        ],
        rows,
    })
}

fn nodal_probe(cfg: &Resolved, m: &ModelManifold) -> Result<Outcome, LabError> {
    let res = cfg.grid.n_base;
    if m.kind == ManifoldKind::Circle {
        let top = *cfg.modes.iter().max().expect("modes validated") as usize;
        if res < 8 * top {
            return Err(too_coarse(format!("circle mode {top} needs n_base >= {}", 8 * top)));
        }
        let rows = cfg
            .modes
            .par_iter()
            .map(|&k| {
                let f = EigenfunctionSpec::circle(k, Parity::Sin).map_err(numerical("mode"))?;
                let probe = real_nodal_pairing(m, |x| f.eval_real(x).unwrap_or(f64::NAN), |_| 1.0, res)
                    .map_err(numerical("nodal probe"))?;
                Ok(Row::new("k", k as f64, probe.value, Some(2.0 * k as f64)))
            })
            .collect::<Result<Vec<_>, LabError>>()?;
        let exact = rows.iter().all(|r| r.abs_err() == Some(0.0));
        return Ok(Outcome {
            checks: vec![Check {
                criterion: None,
                name: "real zero count equals 2k".into(),
                value: if exact { 1.0 } else { 0.0 },
                comparison: "==",
                threshold: 1.0,
                pass: exact,
            }],
            rows,
        });
    }
    // Sphere: nodal length of the real part of a random member, per unit frequency.
    let mut rows = Vec::new();
    for &l in &cfg.modes {
        let per_sample = (0..cfg.samples)
            .into_par_iter()
            .map(|i| {
                let rc = RandomBasisConfig {
                    seed: cfg.seed.wrapping_add(i as u64),
                    cluster_range: (l, l),
                    manifold: *m,
                };
                let onb = random_onb(&rc).map_err(numerical("random basis"))?;
                let member = onb[0].member(0).map_err(numerical("member"))?;
                let f = |x: &[f64]| {
                    member
                        .eval_scaled(&ComplexPoint::from_real(x))
                        .map(|v| v.to_complex().re)
                        .unwrap_or(f64::NAN)
                };
                let probe = real_nodal_pairing(m, f, |_| 1.0, res).map_err(numerical("nodal probe"))?;
                Ok(probe.value / member.frequency())
            })
            .collect::<Result<Vec<f64>, LabError>>()?;
        let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        rows.push(Row::new("l_length_per_lambda", l as f64, mean, None));
    }
    Ok(Outcome { rows, checks: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn resolve(json: &str) -> Resolved {
        ExperimentConfig::from_json(json).unwrap().resolve().unwrap()
    }

    #[test]
    fn errors_and_helpers() {
        let r = Row::new("k", 1.0, 1.5, Some(2.0));
        assert_eq!(r.abs_err(), Some(0.5));
        assert_eq!(r.rel_err(), Some(0.25));
        assert_eq!(Row::new("k", 1.0, 1e-9, Some(0.0)).rel_err(), None);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(decreasing(&[3.0, 2.0, 1.0]));
        assert!(!decreasing(&[3.0, 3.0]));
        assert!(at_most(1, "x", 1.0, 1.0).pass);
        assert!(!at_most(1, "x", f64::NAN, 1.0).pass);
    }

    #[test]
    fn circle_zeros_counts() {
        let cfg = resolve(r#"{"experiment": "circle-zeros", "manifold": {"kind": "circle", "dim": 1}, "output_dir": "o", "modes": [3, 7]}"#);
        let out = run(&cfg).unwrap();
        assert!(out.passed());
        let sin: Vec<f64> = out.rows.iter().filter(|r| r.param_name == "k_sin").map(|r| r.value).collect();
        assert_eq!(sin, [6.0, 14.0]);
    }

    #[test]
    fn coarse_grids_are_config_errors() {
        let cfg = resolve(
            r#"{"experiment": "norm-growth", "manifold": {"kind": "circle", "dim": 1}, "output_dir": "o", "modes": [40], "grid": {"n_radial": 4, "n_base": 100, "n_fiber": 4}}"#,
        );
        assert!(matches!(run(&cfg), Err(LabError::Config(_))));
    }

    #[test]
    fn probe_points_sit_on_their_shell() {
        for m in [ModelManifold::circle(), ModelManifold::round_sphere(), ModelManifold::flat_torus(2).unwrap()] {
            let p = probe_point(&m, 0.3);
            assert!((p.norm - 0.3).abs() < 1e-12, "{:?}", m.kind);
        }
    }
}
