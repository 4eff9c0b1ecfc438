//! Moving norms, Husimi functions and weak pairings of (1,1)-currents with
//! scalar test data.
//!
//! A current `i ddbar F` is paired with a test function `phi` by moving both
//! derivatives onto `phi`:
//!
//! `<i ddbar F, phi omega^{m-1}/(m-1)!> = int F tr_omega(i ddbar phi) dV`,
//!
//! where `omega = i ddbar |xi|^2` is the adapted Kahler form and `dV` is the
//! Liouville volume `dx dxi`. On flat models the trace is
//! `(Lap_x phi + Lap_xi phi) / 2` and is evaluated analytically; on the sphere
//! it is assembled from finite-difference complex Hessians in a holomorphic
//! chart.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{chart_derivatives, complexify, decomplexify, ManifoldKind, ModelManifold, TubePoint};
use crate::quadrature::{base_grid, ordered_sum, sphere_bundle_grid, QuadratureGrid};
use crate::scaled::{log_sum_exp, scaled_dot};
use crate::spectral::{ClusterBasis, ComplexEigenfunction};

pub use crate::quadrature::PairingResult;

pub const DEFAULT_CLIP_FLOOR: f64 = -700.0;
pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const NORM_CACHE_RADII: usize = 32;

/// `(1 - t^2)^4` and its first two derivatives, zero for `|t| >= 1`.
///
/// A polynomial profile (C^3 across the edge of its support) so that radial
/// Gauss–Legendre rules on the support interval integrate it exactly.
fn bump_profile(t: f64) -> (f64, f64, f64) {
    if t.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - t * t;
    let q2 = q * q;
    (q2 * q2, -8.0 * t * q2 * q, -8.0 * q2 * q + 48.0 * t * t * q2)
}

/// Bump in `|xi|`, equal to 1 at `center` and supported on
/// `(center - half_width, center + half_width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialBump {
    pub center: f64,
    pub half_width: f64,
}

impl RadialBump {
    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) || center < 0.0 || !center.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "radial bump needs center >= 0 and half_width > 0, got ({center}, {half_width})"
            )));
        }
        Ok(Self { center, half_width })
    }

    /// `(b, b', b'')` at radius `r`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        let w = self.half_width;
        let (g, d1, d2) = bump_profile((r - self.center) / w);
        (g, d1 / w, d2 / (w * w))
    }

    pub fn support(&self) -> (f64, f64) {
        ((self.center - self.half_width).max(0.0), self.center + self.half_width)
    }
}

/// Factor of a test function depending on the base point.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseFactor {
    Const(f64),
    /// `cos^2(pi x_axis)`.
    CosSq { axis: usize },
    /// `1 + amp cos(2 pi <freq, x>)`.
    Cosine { freq: Vec<i64>, amp: f64 },
    /// Bump in the periodic distance from `center` along one axis.
    PeriodicBump { axis: usize, center: f64, half_width: f64 },
    /// `c0 + <coeffs, x>` in ambient coordinates (sphere only).
    Affine { c0: f64, coeffs: Vec<f64> },
    /// `c0 + sum diag_i x_i^2` in ambient coordinates (sphere only).
    Quadratic { c0: f64, diag: Vec<f64> },
}

fn wrap_half(d: f64) -> f64 {
    d - d.round()
}

impl BaseFactor {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BaseFactor::Const(c) => *c,
            BaseFactor::CosSq { axis } => (PI * x[*axis]).cos().powi(2),
            BaseFactor::Cosine { freq, amp } => {
                let phase: f64 = freq.iter().zip(x).map(|(n, v)| *n as f64 * v).sum();
                1.0 + amp * (2.0 * PI * phase).cos()
            }
            BaseFactor::PeriodicBump {
                axis,
                center,
                half_width,
            } => bump_profile(wrap_half(x[*axis] - center) / half_width).0,
            BaseFactor::Affine { c0, coeffs } => c0 + coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>(),
            BaseFactor::Quadratic { c0, diag } => c0 + diag.iter().zip(x).map(|(d, v)| d * v * v).sum::<f64>(),
        }
    }

    /// Flat Laplacian in the periodic coordinates.
    fn flat_laplacian(&self, x: &[f64]) -> f64 {
        match self {
            BaseFactor::Const(_) | BaseFactor::Affine { .. } | BaseFactor::Quadratic { .. } => 0.0,
            BaseFactor::CosSq { axis } => -2.0 * PI * PI * (2.0 * PI * x[*axis]).cos(),
            BaseFactor::Cosine { freq, amp } => {
                let phase: f64 = freq.iter().zip(x).map(|(n, v)| *n as f64 * v).sum();
                let k2: f64 = freq.iter().map(|n| (n * n) as f64).sum();
                -amp * 4.0 * PI * PI * k2 * (2.0 * PI * phase).cos()
            }
            BaseFactor::PeriodicBump {
                axis,
                center,
                half_width,
            } => bump_profile(wrap_half(x[*axis] - center) / half_width).2 / (half_width * half_width),
        }
    }

    fn is_periodic(&self) -> bool {
        !matches!(self, BaseFactor::Affine { .. } | BaseFactor::Quadratic { .. })
    }

    fn vanishes_at(&self, x: &[f64]) -> bool {
        match self {
            BaseFactor::PeriodicBump {
                axis,
                center,
                half_width,
            } => wrap_half(x[*axis] - center).abs() >= *half_width,
            _ => false,
        }
    }
}

/// `phi(x, xi) = base(x) * bump(|xi|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub radial: RadialBump,
    pub base: BaseFactor,
}

impl TestFunction {
    pub fn new(manifold: &ModelManifold, radial: RadialBump, base: BaseFactor) -> Result<Self> {
        let (_, hi) = radial.support();
        if manifold.dim >= 2 && radial.center - radial.half_width <= 0.0 {
            return Err(Error::InvalidParameter(
                "test functions must vanish near the zero section in dimension >= 2".into(),
            ));
        }
        if hi >= manifold.tube_radius {
            return Err(Error::InvalidParameter(format!("support reaches |xi| = {hi}")));
        }
        let n = manifold.coord_len();
        let axis_ok = |a: usize| a < n;
        let ok = match &base {
            BaseFactor::Const(_) => true,
            BaseFactor::CosSq { axis } => axis_ok(*axis),
            BaseFactor::Cosine { freq, .. } => freq.len() == n,
            BaseFactor::PeriodicBump { axis, half_width, .. } => axis_ok(*axis) && *half_width > 0.0 && *half_width <= 0.5,
            BaseFactor::Affine { coeffs, .. } => coeffs.len() == n,
            BaseFactor::Quadratic { diag, .. } => diag.len() == n,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("base factor {base:?} does not fit {:?}", manifold.kind)));
        }
        if manifold.is_flat() && !base.is_periodic() {
            return Err(Error::InvalidParameter("ambient polynomial factors need the sphere".into()));
        }
        Ok(Self { radial, base })
    }

    pub fn eval(&self, p: &TubePoint) -> f64 {
        let b = self.radial.eval(p.norm).0;
        if b == 0.0 {
            return 0.0;
        }
        b * self.base.eval(&p.x)
    }

    /// Whether `p` lies where the radial and base factors can both be nonzero,
    /// with the radial support widened by `margin`.
    pub fn may_touch(&self, p: &TubePoint, margin: f64) -> bool {
        let (lo, hi) = self.radial.support();
        p.norm > lo - margin && p.norm < hi + margin && (margin > 0.0 || !self.base.vanishes_at(&p.x))
    }

    /// `(Lap_x phi + Lap_xi phi) / 2` on a flat model of dimension `m`.
    pub fn flat_trace(&self, p: &TubePoint, m: usize) -> f64 {
        let (b, b1, b2) = self.radial.eval(p.norm);
        if b == 0.0 && b1 == 0.0 && b2 == 0.0 {
            return 0.0;
        }
        let radial_lap = if m == 1 { b2 } else { b2 + (m as f64 - 1.0) / p.norm * b1 };
        0.5 * (self.base.flat_laplacian(&p.x) * b + self.base.eval(&p.x) * radial_lap)
    }
}

#[derive(Debug, Clone)]
struct KernelLevel {
    nodes: Vec<TubePoint>,
    /// `weights[t][i]`: quadrature weight times trace of test `t` at node `i`.
    weights: Vec<Vec<f64>>,
}

/// Precomputed `w_i tr_omega(i ddbar phi_t)(node_i)` on the support of a set
/// of test functions, for a grid and its half-resolution companion.
#[derive(Debug, Clone)]
pub struct TraceKernel {
    pub manifold: ModelManifold,
    pub tests: Vec<TestFunction>,
    pub fd_step: f64,
    fine: KernelLevel,
    coarse: KernelLevel,
    n_base: usize,
}

fn fd_traces(manifold: &ModelManifold, p: &TubePoint, tests: &[TestFunction], h: f64) -> Result<Vec<f64>> {
    let zeta = complexify(manifold, p)?;
    let count = 1 + tests.len();
    let d = chart_derivatives(manifold, &zeta, h, count, |z, out| match decomplexify(manifold, z) {
        Ok(q) => {
            out[0] = q.norm * q.norm;
            for (slot, t) in out[1..].iter_mut().zip(tests) {
                *slot = t.eval(&q);
            }
        }
        Err(_) => out.iter_mut().for_each(|v| *v = f64::NAN),
    })?;
    let g = &d[0].hessian;
    let herm: DMatrix<Complex64> = (g + g.adjoint()) * Complex64::new(0.5, 0.0);
    let inv = herm.try_inverse().ok_or(Error::ChartSingularity)?;
    let out: Vec<f64> = d[1..]
        .iter()
        .map(|dt| (&inv * &dt.hessian).trace().re)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::ChartSingularity);
    }
    Ok(out)
}

fn kernel_level(grid: &QuadratureGrid, tests: &[TestFunction], h: f64) -> Result<KernelLevel> {
    let manifold = &grid.manifold;
    let margin = if manifold.is_flat() { 0.0 } else { 10.0 * h };
    let candidates: Vec<usize> = (0..grid.len())
        .filter(|&i| tests.iter().any(|t| t.may_touch(&grid.nodes[i], margin)))
        .collect();
    let traces: Vec<Vec<f64>> = candidates
        .par_iter()
        .map(|&i| {
            let p = &grid.nodes[i];
            if manifold.is_flat() {
                Ok(tests.iter().map(|t| t.flat_trace(p, manifold.dim)).collect())
            } else {
                fd_traces(manifold, p, tests, h)
            }
        })
        .collect::<Result<_>>()?;
    let mut nodes = Vec::new();
    let mut weights = vec![Vec::new(); tests.len()];
    for (&i, tr) in candidates.iter().zip(&traces) {
        if tr.iter().all(|v| *v == 0.0) {
            continue;
        }
        nodes.push(grid.nodes[i].clone());
        for (col, v) in weights.iter_mut().zip(tr) {
            col.push(grid.weights[i] * v);
        }
    }
    Ok(KernelLevel { nodes, weights })
}

impl TraceKernel {
    pub fn build(grid: &QuadratureGrid, tests: &[TestFunction], fd_step: f64) -> Result<Self> {
        if tests.is_empty() {
            return Err(Error::InvalidParameter("no test functions".into()));
        }
        if !(fd_step > 0.0) {
            return Err(Error::InvalidParameter(format!("finite-difference step {fd_step}")));
        }
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if grid.manifold.kind == ManifoldKind::Hyperboloid {
            return Err(Error::NotSpectral(grid.manifold.kind));
        }
        let fine = kernel_level(grid, tests, fd_step)?;
        let coarse = kernel_level(&grid.coarsened()?, tests, fd_step)?;
        Ok(Self {
            manifold: grid.manifold,
            tests: tests.to_vec(),
            fd_step,
            fine,
            coarse,
            n_base: grid.resolution.n_base,
        })
    }

    pub fn support_len(&self) -> usize {
        self.fine.nodes.len()
    }

    pub fn support_nodes(&self) -> &[TubePoint] {
        &self.fine.nodes
    }

    /// Largest `|tr_omega(i ddbar phi_t)| * w` over the support, per test.
    pub fn max_weighted_trace(&self) -> Vec<f64> {
        self.fine
            .weights
            .iter()
            .map(|c| c.iter().map(|v| v.abs()).fold(0.0, f64::max))
            .collect()
    }

    /// `sum_i |w_i tr_i|`, per test.
    pub fn trace_l1(&self) -> Vec<f64> {
        self.fine.weights.iter().map(|c| ordered_sum(c.iter().map(|v| v.abs()))).collect()
    }
}

/// Values of `F` on a kernel level with optional log clipping.
fn level_values<F>(level: &KernelLevel, f: &F, clip_floor: Option<f64>) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&TubePoint) -> Result<f64> + Sync,
{
    let raw: Vec<f64> = level.nodes.par_iter().map(f).collect::<Result<_>>()?;
    let mut clipped = 0usize;
    let mut bad = 0usize;
    let values = raw
        .into_iter()
        .map(|v| match clip_floor {
            Some(floor) if v < floor => {
                clipped += 1;
                floor
            }
            _ => {
                if !v.is_finite() {
                    bad += 1;
                }
                v
            }
        })
        .collect();
    if bad > 0 {
        return Err(Error::NonFinite { count: bad });
    }
    Ok((values, clipped))
}

fn pair_level(level: &KernelLevel, values: &[f64]) -> Vec<f64> {
    level
        .weights
        .iter()
        .map(|col| ordered_sum(col.iter().zip(values).map(|(w, v)| w * v)))
        .collect()
}

fn pair_with<F>(kernel: &TraceKernel, f: F, clip_floor: Option<f64>, scale: f64) -> Result<Vec<PairingResult>>
where
    F: Fn(&TubePoint) -> Result<f64> + Sync,
{
    let (fine_vals, clip_count) = level_values(&kernel.fine, &f, clip_floor)?;
    let (coarse_vals, _) = level_values(&kernel.coarse, &f, clip_floor)?;
    let fine = pair_level(&kernel.fine, &fine_vals);
    let coarse = pair_level(&kernel.coarse, &coarse_vals);
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(a, b)| PairingResult {
            value: scale * a,
            quad_error: (scale * (a - b)).abs(),
            clip_count,
            clip_floor: clip_floor.unwrap_or(f64::NEG_INFINITY),
            total_nodes: kernel.fine.nodes.len(),
        })
        .collect())
}

/// `int F tr_omega(i ddbar phi_t) dV` for every test in the kernel.
pub fn ddbar_trace_pairing<F>(field: F, kernel: &TraceKernel) -> Result<Vec<PairingResult>>
where
    F: Fn(&TubePoint) -> f64 + Sync,
{
    pair_with(kernel, |p| Ok(field(p)), None, 1.0)
}

/// `ln |f^C|^2` at a tube point.
pub fn log_abs_sq(f: &dyn ComplexEigenfunction, p: &TubePoint) -> Result<f64> {
    let zeta = complexify(f.manifold(), p)?;
    Ok(f.eval_scaled(&zeta)?.ln_norm_sqr())
}

/// `(1/(2 pi lambda)) int ln|f^C|^2 tr_omega(i ddbar phi) dV`, the pairing of
/// the normalized zero current with `phi omega^{m-1}/(m-1)!`.
pub fn empirical_zero_pairing(
    f: &dyn ComplexEigenfunction,
    kernel: &TraceKernel,
    clip_floor: f64,
) -> Result<Vec<PairingResult>> {
    check_manifold(f.manifold(), &kernel.manifold)?;
    let lambda = f.frequency();
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("constant eigenfunction has no zero current".into()));
    }
    pair_with(kernel, |p| log_abs_sq(f, p), Some(clip_floor), 1.0 / (2.0 * PI * lambda))
}

/// Empirical zero pairings of several rotated members of one cluster at once.
///
/// `rows` holds one coefficient row per member (as in `ClusterBasis::coeffs`);
/// the standard members are evaluated once per node and shared. The result is
/// indexed `[row][test]`.
pub fn empirical_zero_pairing_rows(
    cluster: &ClusterBasis,
    rows: &DMatrix<Complex64>,
    kernel: &TraceKernel,
    clip_floor: f64,
) -> Result<Vec<Vec<PairingResult>>> {
    check_manifold(&cluster.manifold, &kernel.manifold)?;
    if rows.ncols() != cluster.len() {
        return Err(Error::DimensionMismatch {
            expected: cluster.len(),
            got: rows.ncols(),
        });
    }
    let lambda = cluster.top_frequency();
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("constant eigenfunction has no zero current".into()));
    }
    let row_vecs: Vec<Vec<Complex64>> = (0..rows.nrows())
        .map(|j| rows.row(j).iter().copied().collect())
        .collect();
    let level_logs = |level: &KernelLevel| -> Result<Vec<Vec<f64>>> {
        level
            .nodes
            .par_iter()
            .map(|p| {
                let vals = cluster.eval_members(&complexify(&cluster.manifold, p)?)?;
                Ok(row_vecs.iter().map(|r| scaled_dot(r, &vals).ln_norm_sqr()).collect())
            })
            .collect()
    };
    let fine = level_logs(&kernel.fine)?;
    let coarse = level_logs(&kernel.coarse)?;
    let scale = 1.0 / (2.0 * PI * lambda);
    (0..rows.nrows())
        .map(|j| {
            let mut clip_count = 0;
            let mut clip = |v: f64, count: bool| {
                if v < clip_floor {
                    if count {
                        clip_count += 1;
                    }
                    clip_floor
                } else {
                    v
                }
            };
            let fv: Vec<f64> = fine.iter().map(|v| clip(v[j], true)).collect();
            let cv: Vec<f64> = coarse.iter().map(|v| clip(v[j], false)).collect();
            if fv.iter().chain(&cv).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { count: fv.iter().filter(|v| !v.is_finite()).count() });
            }
            let a = pair_level(&kernel.fine, &fv);
            let b = pair_level(&kernel.coarse, &cv);
            Ok(a.iter()
                .zip(&b)
                .map(|(x, y)| PairingResult {
                    value: scale * x,
                    quad_error: (scale * (x - y)).abs(),
                    clip_count,
                    clip_floor,
                    total_nodes: kernel.fine.nodes.len(),
                })
                .collect())
        })
        .collect()
}

fn check_manifold(a: &ModelManifold, b: &ModelManifold) -> Result<()> {
    if a != b {
        return Err(Error::InvalidParameter(format!("eigenfunction on {:?}, grid on {:?}", a.kind, b.kind)));
    }
    Ok(())
}

/// Pairing of the limit current `(i/pi) ddbar |xi|` with each test.
///
/// In dimension 1 the limit is `(1/pi) delta_0(xi) dx dxi`, evaluated as
/// `(1/pi) int phi(x, 0) dx` on the base rule of the grid.
pub fn limit_zero_pairing(kernel: &TraceKernel) -> Result<Vec<PairingResult>> {
    if kernel.manifold.dim == 1 {
        let fine = base_grid(&kernel.manifold, kernel.n_base)?;
        let coarse = base_grid(&kernel.manifold, (kernel.n_base / 2).max(4))?;
        let on_zero = |pts: &[(crate::geometry::Coords, f64)], t: &TestFunction| {
            let b0 = t.radial.eval(0.0).0;
            ordered_sum(pts.iter().map(|(x, w)| w * t.base.eval(x) * b0)) / PI
        };
        return Ok(kernel
            .tests
            .iter()
            .map(|t| {
                let v = on_zero(&fine, t);
                PairingResult {
                    value: v,
                    quad_error: (v - on_zero(&coarse, t)).abs(),
                    clip_count: 0,
                    clip_floor: f64::NEG_INFINITY,
                    total_nodes: fine.len(),
                }
            })
            .collect());
    }
    pair_with(kernel, |p| Ok(p.norm), None, 1.0 / PI)
}

/// The limit pairing through its density: off the zero section
/// `tr_omega(i ddbar |xi|) = (m - 1) / (2 |xi|)`, so the pairing equals
/// `((m - 1) / (2 pi)) int phi / |xi| dV`.
pub fn limit_zero_density_pairing(grid: &QuadratureGrid, test: &TestFunction) -> Result<PairingResult> {
    let m = grid.manifold.dim;
    if m < 2 {
        return Err(Error::InvalidParameter("the density form needs dimension >= 2".into()));
    }
    let c = (m as f64 - 1.0) / (2.0 * PI);
    crate::quadrature::integrate(grid, |p| c * test.eval(p) / p.norm)
}

fn log_weights_and_values(
    f: &dyn ComplexEigenfunction,
    grid: &QuadratureGrid,
) -> Result<Vec<f64>> {
    check_manifold(f.manifold(), &grid.manifold)?;
    grid.nodes.par_iter().map(|p| log_abs_sq(f, p)).collect()
}

/// `ln rho_lambda(r)` for every shell of the grid, where
/// `rho_lambda(r)^2 = int_{|xi| = r} |f^C|^2 dmu_r`.
pub fn shell_log_norms(f: &dyn ComplexEigenfunction, grid: &QuadratureGrid) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let logs = log_weights_and_values(f, grid)?;
    Ok(grid
        .shells
        .iter()
        .map(|s| {
            let terms: Vec<f64> = grid
                .shell_weights(s)
                .zip(&logs[s.range.clone()])
                .map(|(w, l)| w.ln() + l)
                .collect();
            0.5 * log_sum_exp(terms)
        })
        .collect())
}

/// `ln rho_lambda(r)` on a Liouville grid at radius `r`.
pub fn log_moving_norm(f: &dyn ComplexEigenfunction, grid: &QuadratureGrid) -> Result<f64> {
    if !matches!(grid.measure, crate::quadrature::Measure::Liouville { .. }) {
        return Err(Error::InvalidParameter("moving norm needs a Liouville grid".into()));
    }
    Ok(shell_log_norms(f, grid)?[0])
}

/// `rho_lambda(r)`; infinite when it exceeds the double range.
pub fn moving_norm(f: &dyn ComplexEigenfunction, grid: &QuadratureGrid) -> Result<f64> {
    Ok(log_moving_norm(f, grid)?.exp())
}

/// `sup_r |(1/lambda) ln rho_lambda(r) - r|` over the shells of a ball grid.
pub fn log_growth_error(f: &dyn ComplexEigenfunction, grid: &QuadratureGrid) -> Result<f64> {
    let lambda = f.frequency();
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("growth rate of a constant".into()));
    }
    let logs = shell_log_norms(f, grid)?;
    Ok(grid
        .shells
        .iter()
        .zip(&logs)
        .map(|(s, l)| (l / lambda - s.radius).abs())
        .fold(0.0, f64::max))
}

/// `ln rho_lambda` on a radial grid, interpolated by a monotone cubic.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub radii: Vec<f64>,
    pub log_norms: Vec<f64>,
    slopes: Vec<f64>,
}

impl NormCache {
    pub fn from_samples(radii: Vec<f64>, log_norms: Vec<f64>) -> Result<Self> {
        if radii.len() < 2 || radii.len() != log_norms.len() {
            return Err(Error::InvalidParameter("need at least two radial samples".into()));
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("radii must increase".into()));
        }
        let slopes = pchip_slopes(&radii, &log_norms);
        Ok(Self {
            radii,
            log_norms,
            slopes,
        })
    }

    /// Samples `ln rho_lambda` at `n_radii` evenly spaced radii in `[r_min, r_max]`.
    pub fn build(
        f: &dyn ComplexEigenfunction,
        r_min: f64,
        r_max: f64,
        n_radii: usize,
        n_base: usize,
        n_fiber: usize,
    ) -> Result<Self> {
        if n_radii < 2 || !(r_min > 0.0 && r_max > r_min) {
            return Err(Error::InvalidParameter(format!("radial range [{r_min}, {r_max}] x {n_radii}")));
        }
        let radii: Vec<f64> = (0..n_radii)
            .map(|i| r_min + (r_max - r_min) * i as f64 / (n_radii - 1) as f64)
            .collect();
        let logs = radii
            .iter()
            .map(|&r| log_moving_norm(f, &sphere_bundle_grid(f.manifold(), r, n_base, n_fiber)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(radii, logs)
    }

    /// Shell norms of a ball grid as cache samples.
    pub fn from_ball_grid(f: &dyn ComplexEigenfunction, grid: &QuadratureGrid) -> Result<Self> {
        let logs = shell_log_norms(f, grid)?;
        Self::from_samples(grid.shells.iter().map(|s| s.radius).collect(), logs)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.radii[0], *self.radii.last().expect("non-empty"))
    }

    pub fn log_norm(&self, r: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        let tol = 1e-12 * hi;
        if r < lo - tol || r > hi + tol {
            return Err(Error::OutsideDomain(format!("radius {r} outside cached [{lo}, {hi}]")));
        }
        let r = r.clamp(lo, hi);
        let i = match self.radii.partition_point(|&x| x <= r) {
            0 => 0,
            k => (k - 1).min(self.radii.len() - 2),
        };
        let (x0, x1) = (self.radii[i], self.radii[i + 1]);
        let hgap = x1 - x0;
        let t = (r - x0) / hgap;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t),
            t * (1.0 - t) * (1.0 - t),
            t * t * (3.0 - 2.0 * t),
            t * t * (t - 1.0),
        );
        Ok(h00 * self.log_norms[i]
            + h10 * hgap * self.slopes[i]
            + h01 * self.log_norms[i + 1]
            + h11 * hgap * self.slopes[i + 1])
    }
}

/// Fritsch–Carlson slopes for monotone piecewise cubic Hermite interpolation.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![del[0], del[0]];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        if del[i - 1] * del[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], del[0], del[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

/// `U_lambda = f^C / rho_lambda(|xi|)`.
pub fn husimi(f: &dyn ComplexEigenfunction, p: &TubePoint, cache: &NormCache) -> Result<Complex64> {
    let l = cache.log_norm(p.norm)?;
    let zeta = complexify(f.manifold(), p)?;
    Ok(f.eval_scaled(&zeta)?.ratio_to(l))
}

fn husimi_ratio<A>(logs: &[f64], grid: &QuadratureGrid, a: &A) -> f64
where
    A: Fn(&TubePoint) -> f64 + Sync,
{
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let num = ordered_sum(grid.weights.iter().zip(&grid.nodes).zip(&mass).map(|((w, p), m)| w * a(p) * m));
    let den = ordered_sum(grid.weights.iter().zip(&mass).map(|(w, m)| w * m));
    num / den
}

/// `int a |u_lambda^r|^2 dmu_r` on a Liouville grid, normalized on the same
/// grid so that `a = 1` gives exactly 1.
pub fn husimi_average<A>(f: &dyn ComplexEigenfunction, a: A, grid: &QuadratureGrid) -> Result<PairingResult>
where
    A: Fn(&TubePoint) -> f64 + Sync,
{
    if !matches!(grid.measure, crate::quadrature::Measure::Liouville { .. }) {
        return Err(Error::InvalidParameter("Husimi averages need a Liouville grid".into()));
    }
    let value = husimi_ratio(&log_weights_and_values(f, grid)?, grid, &a);
    let coarse_grid = grid.coarsened()?;
    let coarse = husimi_ratio(&log_weights_and_values(f, &coarse_grid)?, &coarse_grid, &a);
    Ok(PairingResult {
        value,
        quad_error: (value - coarse).abs(),
        clip_count: 0,
        clip_floor: f64::NEG_INFINITY,
        total_nodes: grid.len(),
    })
}

/// `(1 / mu_r) int a dmu_r`.
pub fn liouville_average<A>(a: A, grid: &QuadratureGrid) -> Result<f64>
where
    A: Fn(&TubePoint) -> f64 + Sync,
{
    let v = crate::quadrature::integrate(grid, a)?;
    Ok(v.value / grid.total_weight())
}

fn log_husimi_l1_on(f: &dyn ComplexEigenfunction, grid: &QuadratureGrid) -> Result<f64> {
    let logs = log_weights_and_values(f, grid)?;
    let mut terms = Vec::with_capacity(grid.len());
    for s in &grid.shells {
        let shell_terms: Vec<f64> = grid
            .shell_weights(s)
            .zip(&logs[s.range.clone()])
            .map(|(w, l)| w.ln() + l)
            .collect();
        let two_log_rho = log_sum_exp(shell_terms);
        for i in s.range.clone() {
            terms.push(grid.weights[i] * (logs[i] - two_log_rho).abs());
        }
    }
    if terms.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            count: terms.iter().filter(|v| !v.is_finite()).count(),
        });
    }
    Ok(ordered_sum(terms) / f.frequency())
}

/// `(1/lambda) int |ln |U_lambda|^2| dV` over a ball grid, with `rho_lambda`
/// taken shell by shell on the same grid.
pub fn log_husimi_l1(f: &dyn ComplexEigenfunction, grid: &QuadratureGrid) -> Result<PairingResult> {
    if !(f.frequency() > 0.0) {
        return Err(Error::InvalidParameter("constant eigenfunction".into()));
    }
    let value = log_husimi_l1_on(f, grid)?;
    let coarse = log_husimi_l1_on(f, &grid.coarsened()?)?;
    Ok(PairingResult {
        value,
        quad_error: (value - coarse).abs(),
        clip_count: 0,
        clip_floor: f64::NEG_INFINITY,
        total_nodes: grid.len(),
    })
}

/// `(1/pi) int (1/lambda) ln rho_lambda(|xi|) tr_omega(i ddbar phi) dV`, the
/// part of the empirical pairing carried by the moving norm.
pub fn log_norm_pairing(
    f: &dyn ComplexEigenfunction,
    kernel: &TraceKernel,
    cache: &NormCache,
) -> Result<Vec<PairingResult>> {
    let lambda = f.frequency();
    pair_with(kernel, |p| cache.log_norm(p.norm), None, 1.0 / (PI * lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::ball_bundle_grid;
    use crate::spectral::{EigenfunctionSpec, Parity};
    use approx::assert_relative_eq;

    fn circle_cos_sq_test() -> TestFunction {
        TestFunction::new(
            &ModelManifold::circle(),
            RadialBump::new(0.0, 0.3).unwrap(),
            BaseFactor::CosSq { axis: 0 },
        )
        .unwrap()
    }

    #[test]
    fn bump_derivatives_match_differences() {
        let b = RadialBump::new(0.25, 0.15).unwrap();
        let h = 1e-5;
        for r in [0.12, 0.2, 0.25, 0.33, 0.39] {
            let (v, d1, d2) = b.eval(r);
            let (p, _, _) = b.eval(r + h);
            let (m, _, _) = b.eval(r - h);
            assert!((d1 - (p - m) / (2.0 * h)).abs() < 1e-7 * (1.0 + d1.abs()));
            assert!((d2 - (p - 2.0 * v + m) / (h * h)).abs() < 1e-4 * (1.0 + d2.abs()));
        }
        assert_eq!(b.eval(0.4), (0.0, 0.0, 0.0));
        assert_eq!(b.eval(0.25).0, 1.0);
    }

    #[test]
    fn test_function_validation() {
        let s = ModelManifold::round_sphere();
        assert!(TestFunction::new(&s, RadialBump::new(0.1, 0.2).unwrap(), BaseFactor::Const(1.0)).is_err());
        assert!(TestFunction::new(&s, RadialBump::new(0.3, 0.2).unwrap(), BaseFactor::Const(1.0)).is_ok());
        let t = ModelManifold::flat_torus(2).unwrap();
        assert!(TestFunction::new(
            &t,
            RadialBump::new(0.3, 0.1).unwrap(),
            BaseFactor::Affine { c0: 1.0, coeffs: vec![1.0, 0.0] }
        )
        .is_err());
        assert!(TestFunction::new(&t, RadialBump::new(0.3, 0.1).unwrap(), BaseFactor::CosSq { axis: 2 }).is_err());
    }

    #[test]
    fn circle_moving_norm_closed_form() {
        let c = ModelManifold::circle();
        for k in [1u32, 3, 10] {
            let f = EigenfunctionSpec::circle(k, Parity::Cos).unwrap();
            for r in [0.05, 0.3] {
                let g = sphere_bundle_grid(&c, r, 8 * k as usize + 8, 4).unwrap();
                let exact = (2.0 * (4.0 * PI * k as f64 * r).cosh()).sqrt();
                assert_relative_eq!(moving_norm(&f, &g).unwrap(), exact, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn exp_mode_lives_on_negative_component() {
        let c = ModelManifold::circle();
        let f = EigenfunctionSpec::circle(10, Parity::ExpPlus).unwrap();
        let g = sphere_bundle_grid(&c, 0.3, 64, 4).unwrap();
        let neg = husimi_average(&f, |p| if p.xi[0] < 0.0 { 1.0 } else { 0.0 }, &g).unwrap();
        assert!(neg.value > 1.0 - 1e-12);
        let one = husimi_average(&f, |_| 1.0, &g).unwrap();
        assert_eq!(one.value, 1.0);
    }

    #[test]
    fn circle_husimi_average_matches_liouville() {
        let c = ModelManifold::circle();
        let f = EigenfunctionSpec::circle(40, Parity::Cos).unwrap();
        let g = sphere_bundle_grid(&c, 0.3, 512, 4).unwrap();
        let a = |p: &TubePoint| 1.0 + 0.5 * (2.0 * PI * p.x[0]).cos() + 0.25 * p.xi[0] / p.norm;
        let got = husimi_average(&f, a, &g).unwrap().value;
        let avg = liouville_average(a, &g).unwrap();
        assert!((got - avg).abs() < 1e-3);
    }

    #[test]
    fn norm_cache_reproduces_samples_and_interpolates() {
        let c = ModelManifold::circle();
        let f = EigenfunctionSpec::circle(4, Parity::Cos).unwrap();
        let cache = NormCache::build(&f, 0.05, 0.45, NORM_CACHE_RADII, 64, 4).unwrap();
        let exact = |r: f64| 0.5 * (2.0 * (4.0 * PI * 4.0 * r).cosh()).ln();
        for r in [0.05, 0.123, 0.3, 0.45] {
            assert!((cache.log_norm(r).unwrap() - exact(r)).abs() < 1e-4);
        }
        assert!(cache.log_norm(0.01).is_err());
        let p = TubePoint::new(&c, &[0.1], &[0.2]).unwrap();
        let u = husimi(&f, &p, &cache).unwrap();
        let z = Complex64::new(0.1, 0.2) * 2.0 * PI * 4.0;
        let expect = z.cos() * 2f64.sqrt() / exact(0.2).exp();
        assert!((u - expect).norm() < 1e-4);
    }

    #[test]
    fn pchip_is_monotone_on_monotone_data() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![0.0, 0.0, 1.0, 1.0, 5.0];
        let c = NormCache::from_samples(x, y).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=400 {
            let v = c.log_norm(i as f64 / 100.0).unwrap();
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn circle_zero_current_pairings() {
        let c = ModelManifold::circle();
        let grid = ball_bundle_grid(&c, 0.3, 12, 512, 4, 0.0).unwrap();
        let kernel = TraceKernel::build(&grid, &[circle_cos_sq_test()], DEFAULT_FD_STEP).unwrap();
        let target = 1.0 / (2.0 * PI);
        let lim = limit_zero_pairing(&kernel).unwrap();
        assert!((lim[0].value - target).abs() < 1e-12);
        let f = EigenfunctionSpec::circle(20, Parity::Sin).unwrap();
        let emp = empirical_zero_pairing(&f, &kernel, DEFAULT_CLIP_FLOOR).unwrap();
        assert!((emp[0].value - target).abs() < 1e-3, "{:?}", emp[0]);
        assert_eq!(emp[0].clip_count, 0);
        let e = EigenfunctionSpec::circle(20, Parity::ExpPlus).unwrap();
        let zero = empirical_zero_pairing(&e, &kernel, DEFAULT_CLIP_FLOOR).unwrap();
        assert!(zero[0].value.abs() <= 1e-9, "{:?}", zero[0]);
    }

    #[test]
    fn constant_and_pluriharmonic_fields_pair_to_zero() {
        let t = ModelManifold::flat_torus(2).unwrap();
        let test = TestFunction::new(
            &t,
            RadialBump::new(0.25, 0.15).unwrap(),
            BaseFactor::Cosine { freq: vec![1, 1], amp: 0.5 },
        )
        .unwrap();
        let grid = ball_bundle_grid(&t, 0.4, 8, 24, 24, 0.1).unwrap();
        let kernel = TraceKernel::build(&grid, &[test], DEFAULT_FD_STEP).unwrap();
        let one = ddbar_trace_pairing(|_| 1.0, &kernel).unwrap()[0].value;
        // Im z_1 and Im z_2 are pluriharmonic.
        let im = ddbar_trace_pairing(|p| 2.0 * p.xi[0] - p.xi[1], &kernel).unwrap()[0].value;
        assert!(one.abs() < 1e-8, "{one}");
        assert!(im.abs() < 1e-8, "{im}");
    }

    #[test]
    fn norm_squared_pairs_to_dimension_times_mass() {
        // tr_omega(i ddbar |xi|^2) = m.
        let s = ModelManifold::round_sphere();
        let test = TestFunction::new(
            &s,
            RadialBump::new(0.25, 0.15).unwrap(),
            BaseFactor::Affine { c0: 1.0, coeffs: vec![0.0, 0.0, 0.5] },
        )
        .unwrap();
        let grid = ball_bundle_grid(&s, 0.4, 10, 10, 10, 0.1).unwrap();
        let kernel = TraceKernel::build(&grid, &[test.clone()], DEFAULT_FD_STEP).unwrap();
        let lhs = ddbar_trace_pairing(|p| p.norm * p.norm, &kernel).unwrap()[0].value;
        let mass = crate::quadrature::integrate(&grid, |p| test.eval(p)).unwrap().value;
        assert_relative_eq!(lhs, 2.0 * mass, max_relative = 1e-6);
        let one = ddbar_trace_pairing(|_| 1.0, &kernel).unwrap()[0].value;
        assert!(one.abs() < 1e-6 * mass, "{one}");
    }

    #[test]
    fn sphere_limit_routes_agree() {
        let s = ModelManifold::round_sphere();
        let test = TestFunction::new(&s, RadialBump::new(0.25, 0.15).unwrap(), BaseFactor::Const(1.0)).unwrap();
        let grid = ball_bundle_grid(&s, 0.4, 16, 8, 8, 0.1).unwrap();
        let kernel = TraceKernel::build(&grid, &[test.clone()], DEFAULT_FD_STEP).unwrap();
        let fd = limit_zero_pairing(&kernel).unwrap()[0].value;
        let dens = limit_zero_density_pairing(&grid, &test).unwrap().value;
        assert!(((fd - dens) / dens).abs() < 1e-4, "{fd} vs {dens}");
    }

    #[test]
    fn circle_log_husimi_l1_small_at_high_frequency() {
        let c = ModelManifold::circle();
        let grid = ball_bundle_grid(&c, 0.45, 24, 512, 4, 0.05).unwrap();
        let mut prev = f64::INFINITY;
        for k in [5u32, 10, 20, 40] {
            let f = EigenfunctionSpec::circle(k, Parity::Cos).unwrap();
            let v = log_husimi_l1(&f, &grid).unwrap().value;
            assert!(v < prev);
            prev = v;
        }
        assert!(prev <= 0.02);
    }

    #[test]
    fn difference_identity_on_the_circle() {
        let c = ModelManifold::circle();
        let test = TestFunction::new(&c, RadialBump::new(0.25, 0.15).unwrap(), BaseFactor::CosSq { axis: 0 }).unwrap();
        let grid = ball_bundle_grid(&c, 0.4, 24, 512, 4, 0.1).unwrap();
        let kernel = TraceKernel::build(&grid, &[test], DEFAULT_FD_STEP).unwrap();
        let f = EigenfunctionSpec::circle(10, Parity::Cos).unwrap();
        let cache = NormCache::from_ball_grid(&f, &grid).unwrap();
        let emp = empirical_zero_pairing(&f, &kernel, DEFAULT_CLIP_FLOOR).unwrap()[0].value;
        let via_norm = log_norm_pairing(&f, &kernel, &cache).unwrap()[0].value;
        let l1 = log_husimi_l1(&f, &grid).unwrap().value;
        let vol = grid.total_weight();
        let tr_inf = kernel
            .support_nodes()
            .iter()
            .map(|p| kernel.tests[0].flat_trace(p, 1).abs())
            .fold(0.0, f64::max);
        assert!((emp - via_norm).abs() <= 2.0 * l1 * tr_inf * vol, "{emp} {via_norm} {l1}");
    }

    #[test]
    fn batched_rows_match_single_members() {
        use crate::randombasis::{random_onb, RandomBasisConfig};
        let s = ModelManifold::round_sphere();
        let test = TestFunction::new(&s, RadialBump::new(0.25, 0.15).unwrap(), BaseFactor::Const(1.0)).unwrap();
        let grid = ball_bundle_grid(&s, 0.4, 6, 8, 6, 0.1).unwrap();
        let kernel = TraceKernel::build(&grid, &[test], DEFAULT_FD_STEP).unwrap();
        let onb = random_onb(&RandomBasisConfig { seed: 4, cluster_range: (6, 6), manifold: s }).unwrap();
        let cb = &onb[0];
        let plain = crate::spectral::enumerate_cluster(&s, 6).unwrap();
        let batch = empirical_zero_pairing_rows(&plain, &cb.coeffs.rows(0, 2).into_owned(), &kernel, DEFAULT_CLIP_FLOOR).unwrap();
        for j in 0..2 {
            let single = empirical_zero_pairing(&cb.member(j).unwrap(), &kernel, DEFAULT_CLIP_FLOOR).unwrap();
            assert_eq!(batch[j][0].value, single[0].value);
        }
    }
}
