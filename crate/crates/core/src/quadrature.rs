//! Deterministic quadrature on sphere bundles `dB*_r M` (Liouville measure
//! `dmu_r = omega^m / d|xi|`) and ball bundles `B*_eps M` (symplectic volume).
//!
//! Ball grids are built by the coarea formula: Gauss–Legendre in the radius
//! composed with a sphere-bundle grid at every radial node. Periodic
//! directions use the trapezoid rule; polar angles use Gauss–Legendre in
//! `cos(theta)`.

use rayon::prelude::*;
use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::{Coords, ManifoldKind, ModelManifold, TubePoint};

pub const MIN_RESOLUTION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    /// Symplectic volume on `{delta <= |xi| <= eps}`.
    Symplectic { eps: f64, delta: f64 },
    /// Liouville measure on `{|xi| = r}`.
    Liouville { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub n_radial: usize,
    pub n_base: usize,
    pub n_fiber: usize,
}

/// Nodes of one sphere bundle `{|xi| = radius}` inside a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    pub radius: f64,
    /// Factor by which node weights exceed Liouville weights on this shell.
    pub radial_weight: f64,
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub manifold: ModelManifold,
    pub nodes: Vec<TubePoint>,
    pub weights: Vec<f64>,
    pub measure: Measure,
    pub resolution: Resolution,
    pub shells: Vec<Shell>,
}

/// Value of a weighted sum with its quadrature diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingResult {
    pub value: f64,
    /// `|value - value on the half-resolution grid|`, or 0 when not estimated.
    pub quad_error: f64,
    /// Nodes at which a logarithm was floored at `clip_floor`.
    pub clip_count: usize,
    pub clip_floor: f64,
    pub total_nodes: usize,
}

impl PairingResult {
    pub fn clip_fraction(&self) -> f64 {
        if self.total_nodes == 0 {
            0.0
        } else {
            self.clip_count as f64 / self.total_nodes as f64
        }
    }

    /// At most 1% of the nodes were clipped.
    pub fn is_reliable(&self) -> bool {
        self.clip_fraction() <= 0.01
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

/// `|S^{k}|`, the area of the unit `k`-sphere.
fn unit_sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        2 => 4.0 * PI,
        _ => {
            // |S^k| = 2 pi |S^{k-2}| / (k - 1)
            2.0 * PI * unit_sphere_area(k - 2) / (k as f64 - 1.0)
        }
    }
}

/// `mu_r(dB*_r M) = r^{m-1} mu_1`.
pub fn liouville_total(manifold: &ModelManifold, r: f64) -> f64 {
    let m = manifold.dim;
    let base = match manifold.kind {
        ManifoldKind::RoundSphere => 4.0 * PI,
        _ => 1.0,
    };
    base * unit_sphere_area(m - 1) * r.powi(m as i32 - 1)
}

/// Symplectic volume of `{delta <= |xi| <= eps}`.
pub fn symplectic_volume(manifold: &ModelManifold, eps: f64, delta: f64) -> f64 {
    let m = manifold.dim as i32;
    liouville_total(manifold, 1.0) * (eps.powi(m) - delta.powi(m)) / m as f64
}

/// Base-manifold rule: points with their Riemannian weights.
///
/// Circle and torus: `n` uniform points per axis. Sphere: `n` Gauss–Legendre
/// nodes in `cos(theta)` times `2n` uniform azimuths.
pub fn base_grid(manifold: &ModelManifold, n: usize) -> Result<Vec<(Coords, f64)>> {
    match manifold.kind {
        ManifoldKind::Hyperboloid => Err(Error::NotSpectral(manifold.kind)),
        ManifoldKind::Circle | ManifoldKind::FlatTorus => {
            let m = manifold.dim;
            let total = n.checked_pow(m as u32).ok_or_else(|| {
                Error::InvalidParameter("base grid too large".into())
            })?;
            let w = 1.0 / total as f64;
            Ok((0..total)
                .map(|idx| {
                    let mut rem = idx;
                    let mut x: Coords = smallvec::smallvec![0.0; m];
                    for slot in x.iter_mut().rev() {
                        *slot = (rem % n) as f64 / n as f64;
                        rem /= n;
                    }
                    (x, w)
                })
                .collect())
        }
        ManifoldKind::RoundSphere => {
            let (ct, wt) = gauss_legendre(n);
            let n_phi = 2 * n;
            let dphi = 2.0 * PI / n_phi as f64;
            let mut out = Vec::with_capacity(n * n_phi);
            for (c, w) in ct.iter().zip(&wt) {
                let s = (1.0 - c * c).sqrt();
                for j in 0..n_phi {
                    let phi = j as f64 * dphi;
                    out.push((smallvec::smallvec![s * phi.cos(), s * phi.sin(), *c], w * dphi));
                }
            }
            Ok(out)
        }
    }
}

/// Unit fiber directions at a base point with their weights on the unit sphere.
fn fiber_directions(manifold: &ModelManifold, x: &[f64], n_fiber: usize) -> Result<Vec<(Coords, f64)>> {
    match manifold.kind {
        ManifoldKind::Circle => Ok(vec![(smallvec::smallvec![1.0], 1.0), (smallvec::smallvec![-1.0], 1.0)]),
        ManifoldKind::FlatTorus => match manifold.dim {
            1 => Ok(vec![(smallvec::smallvec![1.0], 1.0), (smallvec::smallvec![-1.0], 1.0)]),
            2 => {
                let w = 2.0 * PI / n_fiber as f64;
                Ok((0..n_fiber)
                    .map(|j| {
                        let a = (j as f64 + 0.5) * w;
                        (smallvec::smallvec![a.cos(), a.sin()], w)
                    })
                    .collect())
            }
            3 => {
                let (ct, wt) = gauss_legendre(n_fiber);
                let n_phi = 2 * n_fiber;
                let dphi = 2.0 * PI / n_phi as f64;
                let mut out = Vec::new();
                for (c, w) in ct.iter().zip(&wt) {
                    let s = (1.0 - c * c).sqrt();
                    for j in 0..n_phi {
                        let phi = (j as f64 + 0.5) * dphi;
                        out.push((smallvec::smallvec![s * phi.cos(), s * phi.sin(), *c], w * dphi));
                    }
                }
                Ok(out)
            }
            m => Err(Error::InvalidParameter(format!(
                "fiber quadrature is implemented for torus dimension <= 3, got {m}"
            ))),
        },
        ManifoldKind::RoundSphere => {
            // Orthonormal tangent frame (e_theta, e_phi); nodes never sit at the poles.
            let s = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let (cp, sp) = (x[0] / s, x[1] / s);
            let e_theta = [x[2] * cp, x[2] * sp, -s];
            let e_phi = [-sp, cp, 0.0];
            let w = 2.0 * PI / n_fiber as f64;
            Ok((0..n_fiber)
                .map(|j| {
                    let a = (j as f64 + 0.5) * w;
                    let (c, d) = (a.cos(), a.sin());
                    (
                        (0..3).map(|k| c * e_theta[k] + d * e_phi[k]).collect(),
                        w,
                    )
                })
                .collect())
        }
        ManifoldKind::Hyperboloid => Err(Error::NotSpectral(manifold.kind)),
    }
}

fn check_resolution(n_base: usize, n_fiber: usize) -> Result<()> {
    if n_base < MIN_RESOLUTION || n_fiber < MIN_RESOLUTION {
        return Err(Error::InvalidParameter(format!(
            "n_base = {n_base}, n_fiber = {n_fiber}; both must be >= {MIN_RESOLUTION}"
        )));
    }
    Ok(())
}

fn push_shell(
    manifold: &ModelManifold,
    r: f64,
    radial_weight: f64,
    base: &[(Coords, f64)],
    n_fiber: usize,
    nodes: &mut Vec<TubePoint>,
    weights: &mut Vec<f64>,
) -> Result<Shell> {
    let start = nodes.len();
    let fiber_scale = r.powi(manifold.dim as i32 - 1) * radial_weight;
    for (x, wb) in base {
        for (dir, wf) in fiber_directions(manifold, x, n_fiber)? {
            let xi: Coords = dir.iter().map(|d| d * r).collect();
            nodes.push(TubePoint::from_parts(x, &xi, r));
            weights.push(wb * wf * fiber_scale);
        }
    }
    Ok(Shell {
        radius: r,
        radial_weight,
        range: start..nodes.len(),
    })
}

/// Liouville-measure grid on `{|xi| = r}`.
pub fn sphere_bundle_grid(manifold: &ModelManifold, r: f64, n_base: usize, n_fiber: usize) -> Result<QuadratureGrid> {
    if !(r > 0.0 && r < manifold.tube_radius) {
        return Err(Error::InvalidParameter(format!("radius {r} outside (0, tube radius)")));
    }
    check_resolution(n_base, n_fiber)?;
    let base = base_grid(manifold, n_base)?;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let shell = push_shell(manifold, r, 1.0, &base, n_fiber, &mut nodes, &mut weights)?;
    Ok(QuadratureGrid {
        manifold: *manifold,
        nodes,
        weights,
        measure: Measure::Liouville { r },
        resolution: Resolution {
            n_radial: 1,
            n_base,
            n_fiber,
        },
        shells: vec![shell],
    })
}

/// Symplectic-volume grid on `{delta <= |xi| <= eps}`.
pub fn ball_bundle_grid(
    manifold: &ModelManifold,
    eps: f64,
    n_radial: usize,
    n_base: usize,
    n_fiber: usize,
    inner_cutoff: f64,
) -> Result<QuadratureGrid> {
    let delta = inner_cutoff;
    if !(delta >= 0.0 && delta < eps && eps < manifold.tube_radius) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= delta < eps < tube radius, got delta = {delta}, eps = {eps}"
        )));
    }
    if n_radial < 2 {
        return Err(Error::InvalidParameter("n_radial must be >= 2".into()));
    }
    check_resolution(n_base, n_fiber)?;
    let base = base_grid(manifold, n_base)?;
    let (radii, rw) = gauss_legendre_interval(n_radial, delta, eps);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut shells = Vec::with_capacity(n_radial);
    for (r, w) in radii.iter().zip(&rw) {
        shells.push(push_shell(manifold, *r, *w, &base, n_fiber, &mut nodes, &mut weights)?);
    }
    Ok(QuadratureGrid {
        manifold: *manifold,
        nodes,
        weights,
        measure: Measure::Symplectic { eps, delta },
        resolution: Resolution {
            n_radial,
            n_base,
            n_fiber,
        },
        shells,
    })
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        ordered_sum(self.weights.iter().copied())
    }

    /// The same grid at half resolution in every direction.
    pub fn coarsened(&self) -> Result<QuadratureGrid> {
        let half = |n: usize, min: usize| (n / 2).max(min);
        let Resolution {
            n_radial,
            n_base,
            n_fiber,
        } = self.resolution;
        match self.measure {
            Measure::Liouville { r } => sphere_bundle_grid(
                &self.manifold,
                r,
                half(n_base, MIN_RESOLUTION),
                half(n_fiber, MIN_RESOLUTION),
            ),
            Measure::Symplectic { eps, delta } => ball_bundle_grid(
                &self.manifold,
                eps,
                half(n_radial, 2),
                half(n_base, MIN_RESOLUTION),
                half(n_fiber, MIN_RESOLUTION),
                delta,
            ),
        }
    }

    /// Liouville weights of one shell.
    pub fn shell_weights<'a>(&'a self, shell: &'a Shell) -> impl Iterator<Item = f64> + 'a {
        self.weights[shell.range.clone()]
            .iter()
            .map(move |w| w / shell.radial_weight)
    }
}

/// Neumaier-compensated sum in iteration order.
pub fn ordered_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Evaluates `f` at every node (in parallel) and returns the values in node order.
pub fn eval_nodes<F>(grid: &QuadratureGrid, f: F) -> Vec<f64>
where
    F: Fn(&TubePoint) -> f64 + Sync,
{
    grid.nodes.par_iter().map(&f).collect()
}

fn weighted_sum(grid: &QuadratureGrid, f: &(dyn Fn(&TubePoint) -> f64 + Sync)) -> Result<f64> {
    let values = eval_nodes(grid, f);
    let bad = values.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFinite { count: bad });
    }
    Ok(ordered_sum(grid.weights.iter().zip(&values).map(|(w, v)| w * v)))
}

/// `sum w_i f(node_i)` with an error estimate from the half-resolution grid.
pub fn integrate<F>(grid: &QuadratureGrid, f: F) -> Result<PairingResult>
where
    F: Fn(&TubePoint) -> f64 + Sync,
{
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let value = weighted_sum(grid, &f)?;
    let coarse = weighted_sum(&grid.coarsened()?, &f)?;
    Ok(PairingResult {
        value,
        quad_error: (value - coarse).abs(),
        clip_count: 0,
        clip_floor: f64::NEG_INFINITY,
        total_nodes: grid.len(),
    })
}
