//! Grauert-tube geometry of the model manifolds.
//!
//! Each model is identified with a ball bundle `B*_eps M` through the
//! complexified exponential map `(x, xi) -> exp_x(i xi)`:
//!
//! * circle and flat torus `R^m / Z^m`: `z = x + i xi` in `C^m / Z^m`;
//! * round unit sphere: `z = cosh|xi| x + i sinh|xi| xi/|xi|` on the quadric
//!   `z1^2 + z2^2 + z3^2 = 1`;
//! * hyperboloid `H^n`: `z = cos(|xi|/sqrt2) x + i sin(|xi|/sqrt2) xi/|xi|`
//!   on `z1^2 + ... + zn^2 - z_{n+1}^2 = -1` (geometry only).
//!
//! Second derivatives in the adapted complex structure are taken by central
//! differences in a local holomorphic chart: the ambient coordinates for the
//! flat models and a graph chart over the quadric otherwise.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use smallvec::SmallVec;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{Error, Result};

pub type Coords = SmallVec<[f64; 4]>;
pub type ComplexCoords = SmallVec<[Complex64; 4]>;
pub type ComplexMatrix = DMatrix<Complex64>;

const CONSTRAINT_TOL: f64 = 1e-12;
/// Points further than this from the quadric are rejected by `monge_ampere`.
const DOMAIN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Circle,
    FlatTorus,
    RoundSphere,
    Hyperboloid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelManifold {
    pub kind: ManifoldKind,
    pub dim: usize,
    pub tube_radius: f64,
}

impl ModelManifold {
    pub fn circle() -> Self {
        Self {
            kind: ManifoldKind::Circle,
            dim: 1,
            tube_radius: f64::INFINITY,
        }
    }

    pub fn flat_torus(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("torus dimension must be >= 1".into()));
        }
        Ok(Self {
            kind: ManifoldKind::FlatTorus,
            dim: m,
            tube_radius: f64::INFINITY,
        })
    }

    pub fn round_sphere() -> Self {
        Self {
            kind: ManifoldKind::RoundSphere,
            dim: 2,
            tube_radius: f64::INFINITY,
        }
    }

    pub fn hyperboloid(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("hyperboloid dimension must be >= 1".into()));
        }
        Ok(Self {
            kind: ManifoldKind::Hyperboloid,
            dim: n,
            tube_radius: PI / SQRT_2,
        })
    }

    pub fn new(kind: ManifoldKind, dim: usize) -> Result<Self> {
        match kind {
            ManifoldKind::Circle if dim == 1 => Ok(Self::circle()),
            ManifoldKind::RoundSphere if dim == 2 => Ok(Self::round_sphere()),
            ManifoldKind::FlatTorus => Self::flat_torus(dim),
            ManifoldKind::Hyperboloid => Self::hyperboloid(dim),
            _ => Err(Error::InvalidParameter(format!("{kind:?} does not come in dimension {dim}"))),
        }
    }

    pub fn is_spectral(&self) -> bool {
        self.kind != ManifoldKind::Hyperboloid
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, ManifoldKind::Circle | ManifoldKind::FlatTorus)
    }

    /// Number of chart (or ambient) coordinates carried by a point.
    pub fn coord_len(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle | ManifoldKind::FlatTorus => self.dim,
            ManifoldKind::RoundSphere | ManifoldKind::Hyperboloid => self.dim + 1,
        }
    }

    /// Signature and right-hand side of the defining quadric, if any.
    fn quadric(&self) -> Option<(Coords, f64)> {
        match self.kind {
            ManifoldKind::RoundSphere => Some((SmallVec::from_elem(1.0, self.dim + 1), 1.0)),
            ManifoldKind::Hyperboloid => {
                let mut s: Coords = SmallVec::from_elem(1.0, self.dim + 1);
                s[self.dim] = -1.0;
                Some((s, -1.0))
            }
            _ => None,
        }
    }
}

/// Lorentz product of signature `(n, 1)`; the last coordinate is timelike.
pub fn lorentz(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() - 1;
    a[..n].iter().zip(&b[..n]).map(|(p, q)| p * q).sum::<f64>() - a[n] * b[n]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// A point `(x, xi)` of the cotangent ball bundle, `xi` identified with a
/// tangent vector through the metric.
#[derive(Debug, Clone, PartialEq)]
pub struct TubePoint {
    pub x: Coords,
    pub xi: Coords,
    pub norm: f64,
}

impl TubePoint {
    pub fn new(manifold: &ModelManifold, x: &[f64], xi: &[f64]) -> Result<Self> {
        let n = manifold.coord_len();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        match manifold.kind {
            ManifoldKind::RoundSphere => {
                if (dot(x, x) - 1.0).abs() > CONSTRAINT_TOL || dot(x, xi).abs() > CONSTRAINT_TOL {
                    return Err(Error::OutsideDomain(
                        "sphere point needs |x| = 1 and <x, xi> = 0".into(),
                    ));
                }
            }
            ManifoldKind::Hyperboloid => {
                if (lorentz(x, x) + 1.0).abs() > CONSTRAINT_TOL
                    || lorentz(x, xi).abs() > CONSTRAINT_TOL
                {
                    return Err(Error::OutsideDomain(
                        "hyperboloid point needs <x,x>_L = -1 and <x, xi>_L = 0".into(),
                    ));
                }
            }
            _ => {}
        }
        let norm = metric_norm(manifold, x, xi)?;
        Ok(Self::from_parts(x, xi, norm))
    }

    pub(crate) fn from_parts(x: &[f64], xi: &[f64], norm: f64) -> Self {
        Self {
            x: SmallVec::from_slice(x),
            xi: SmallVec::from_slice(xi),
            norm,
        }
    }

    pub fn zero_section(manifold: &ModelManifold, x: &[f64]) -> Result<Self> {
        let zeros: Coords = SmallVec::from_elem(0.0, x.len());
        Self::new(manifold, x, &zeros)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPoint {
    pub z: ComplexCoords,
}

impl ComplexPoint {
    pub fn new(z: &[Complex64]) -> Self {
        Self { z: SmallVec::from_slice(z) }
    }

    pub fn from_real(x: &[f64]) -> Self {
        Self {
            z: x.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn real(&self) -> Coords {
        self.z.iter().map(|c| c.re).collect()
    }

    pub fn imag(&self) -> Coords {
        self.z.iter().map(|c| c.im).collect()
    }
}

/// `|xi|_g`: Euclidean for the flat charts and the embedded sphere, Lorentz
/// for tangent vectors of the hyperboloid.
pub fn metric_norm(manifold: &ModelManifold, x: &[f64], xi: &[f64]) -> Result<f64> {
    let n = manifold.coord_len();
    if x.len() != n || xi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if x.len() != n { x.len() } else { xi.len() },
        });
    }
    Ok(match manifold.kind {
        ManifoldKind::Hyperboloid => lorentz(xi, xi).max(0.0).sqrt(),
        _ => dot(xi, xi).sqrt(),
    })
}

/// `sinh(r)/r`, continuous at 0.
fn sinhc(r: f64) -> f64 {
    if r < 1e-8 {
        1.0 + r * r / 6.0
    } else {
        r.sinh() / r
    }
}

/// `sin(r)/r`, continuous at 0.
fn sinc(r: f64) -> f64 {
    if r < 1e-8 {
        1.0 - r * r / 6.0
    } else {
        r.sin() / r
    }
}

/// The complexified exponential map `exp_x(i xi)`.
pub fn complexify(manifold: &ModelManifold, p: &TubePoint) -> Result<ComplexPoint> {
    if p.norm >= manifold.tube_radius {
        return Err(Error::OutsideTube {
            norm: p.norm,
            radius: manifold.tube_radius,
        });
    }
    let r = p.norm;
    let z = match manifold.kind {
        ManifoldKind::Circle | ManifoldKind::FlatTorus => p
            .x
            .iter()
            .zip(&p.xi)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect(),
        ManifoldKind::RoundSphere => {
            let (c, s) = (r.cosh(), sinhc(r));
            p.x.iter()
                .zip(&p.xi)
                .map(|(&a, &b)| Complex64::new(c * a, s * b))
                .collect()
        }
        ManifoldKind::Hyperboloid => {
            let theta = r * FRAC_1_SQRT_2;
            let (c, s) = (theta.cos(), FRAC_1_SQRT_2 * sinc(theta));
            p.x.iter()
                .zip(&p.xi)
                .map(|(&a, &b)| Complex64::new(c * a, s * b))
                .collect()
        }
    };
    Ok(ComplexPoint { z })
}

/// Inverse of [`complexify`] on the tube.
pub fn decomplexify(manifold: &ModelManifold, zeta: &ComplexPoint) -> Result<TubePoint> {
    let n = manifold.coord_len();
    if zeta.z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: zeta.z.len() });
    }
    let re = zeta.real();
    let im = zeta.imag();
    match manifold.kind {
        ManifoldKind::Circle | ManifoldKind::FlatTorus => {
            let norm = dot(&im, &im).sqrt();
            Ok(TubePoint::from_parts(&re, &im, norm))
        }
        ManifoldKind::RoundSphere => {
            let s = dot(&im, &im).sqrt();
            let r = s.asinh();
            let c = r.cosh();
            let x: Coords = re.iter().map(|v| v / c).collect();
            let k = 1.0 / sinhc(r);
            let xi: Coords = im.iter().map(|v| v * k).collect();
            Ok(TubePoint::from_parts(&x, &xi, r))
        }
        ManifoldKind::Hyperboloid => {
            let s2 = lorentz(&im, &im);
            if !(-DOMAIN_TOL..1.0).contains(&s2) {
                return Err(Error::OutsideDomain(format!(
                    "imaginary part has Lorentz square {s2} outside [0, 1)"
                )));
            }
            let theta = s2.clamp(0.0, 1.0).sqrt().asin();
            let r = SQRT_2 * theta;
            let c = theta.cos();
            let x: Coords = re.iter().map(|v| v / c).collect();
            let k = 1.0 / (FRAC_1_SQRT_2 * sinc(theta));
            let xi: Coords = im.iter().map(|v| v * k).collect();
            Ok(TubePoint::from_parts(&x, &xi, r))
        }
    }
}

/// `|sum s_i z_i^2 - c|` for the quadric models, 0 for the flat ones.
pub fn quadric_residual(manifold: &ModelManifold, zeta: &ComplexPoint) -> f64 {
    match manifold.quadric() {
        None => 0.0,
        Some((signs, c)) => {
            let q: Complex64 = signs.iter().zip(&zeta.z).map(|(s, z)| z * z * *s).sum();
            (q - c).norm()
        }
    }
}

/// `arccosh(1 + t)` for `t >= 0` without cancellation near `t = 0`.
fn acosh1p(t: f64) -> f64 {
    (t + (t * (t + 2.0)).sqrt()).ln_1p()
}

/// The Monge–Ampère exhaustion `sqrt(rho)` on the complexification, on its
/// nonnegative branch. Its pullback under [`complexify`] is `2 |xi|_g`.
///
/// On the sphere `arccosh(|z|^2)` is evaluated as `arccosh(1 + 2|Im z|^2)`,
/// which agrees with it on the quadric and stays accurate near the real
/// locus. On the hyperboloid the `arccos` form is evaluated through
/// `2 sqrt2 asin(sqrt <Im z, Im z>_L)`.
pub fn monge_ampere(manifold: &ModelManifold, zeta: &ComplexPoint) -> Result<f64> {
    let n = manifold.coord_len();
    if zeta.z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: zeta.z.len() });
    }
    let residual = quadric_residual(manifold, zeta);
    if residual > DOMAIN_TOL {
        return Err(Error::OutsideDomain(format!("quadric residual {residual:e}")));
    }
    let im = zeta.imag();
    match manifold.kind {
        ManifoldKind::Circle | ManifoldKind::FlatTorus => Ok(2.0 * dot(&im, &im).sqrt()),
        ManifoldKind::RoundSphere => Ok(acosh1p(2.0 * dot(&im, &im))),
        ManifoldKind::Hyperboloid => {
            let s2 = lorentz(&im, &im);
            if !(-CONSTRAINT_TOL..=1.0 + CONSTRAINT_TOL).contains(&s2) {
                return Err(Error::OutsideDomain(format!(
                    "Lorentz square of Im z is {s2}, outside the maximal tube"
                )));
            }
            Ok(2.0 * SQRT_2 * s2.clamp(0.0, 1.0).sqrt().asin())
        }
    }
}

/// `|xi|_g` read off a point of the complexification (half the Monge–Ampère
/// exhaustion).
pub fn tube_norm(manifold: &ModelManifold, zeta: &ComplexPoint) -> Result<f64> {
    Ok(0.5 * monge_ampere(manifold, zeta)?)
}

/// Local holomorphic coordinates around a point of the complexification.
#[derive(Debug, Clone)]
pub struct HolomorphicChart {
    kind: ChartKind,
    dim: usize,
}

#[derive(Debug, Clone)]
enum ChartKind {
    Flat,
    /// Graph over all ambient coordinates but `solved`, which is recovered
    /// from the quadric on the branch nearest `branch`.
    Graph {
        solved: usize,
        signs: Coords,
        constant: f64,
        branch: Complex64,
    },
}

impl HolomorphicChart {
    /// Flat charts are global; on a quadric the coordinate of largest modulus
    /// is solved for.
    pub fn at(manifold: &ModelManifold, zeta: &ComplexPoint) -> Self {
        match manifold.quadric() {
            None => Self {
                kind: ChartKind::Flat,
                dim: manifold.dim,
            },
            Some((signs, constant)) => {
                let solved = zeta
                    .z
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                Self {
                    kind: ChartKind::Graph {
                        solved,
                        signs,
                        constant,
                        branch: zeta.z[solved],
                    },
                    dim: manifold.dim,
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self, zeta: &ComplexPoint) -> ComplexCoords {
        match &self.kind {
            ChartKind::Flat => zeta.z.clone(),
            ChartKind::Graph { solved, .. } => zeta
                .z
                .iter()
                .enumerate()
                .filter(|(i, _)| i != solved)
                .map(|(_, z)| *z)
                .collect(),
        }
    }

    pub fn point(&self, w: &[Complex64]) -> ComplexPoint {
        match &self.kind {
            ChartKind::Flat => ComplexPoint::new(w),
            ChartKind::Graph {
                solved,
                signs,
                constant,
                branch,
            } => {
                let mut rest = Complex64::new(*constant, 0.0);
                let mut it = w.iter();
                let mut z: ComplexCoords = SmallVec::with_capacity(w.len() + 1);
                for (i, s) in signs.iter().enumerate() {
                    if i == *solved {
                        z.push(Complex64::new(0.0, 0.0));
                    } else {
                        let v = *it.next().expect("chart coordinate count");
                        rest -= v * v * *s;
                        z.push(v);
                    }
                }
                let root = (rest / signs[*solved]).sqrt();
                z[*solved] = if (root - branch).norm() <= (-root - branch).norm() {
                    root
                } else {
                    -root
                };
                ComplexPoint { z }
            }
        }
    }

    /// Modulus of the solved coordinate; the graph chart degenerates where it vanishes.
    fn singularity_distance(&self) -> f64 {
        match &self.kind {
            ChartKind::Flat => f64::INFINITY,
            ChartKind::Graph { branch, .. } => branch.norm(),
        }
    }
}

/// First and second complex derivatives of a real field in a holomorphic chart.
#[derive(Debug, Clone)]
pub struct ChartDerivatives {
    pub value: f64,
    /// `dF/dw_i`.
    pub gradient: Vec<Complex64>,
    /// `d^2 F / dw_i dconj(w_j)`.
    pub hessian: ComplexMatrix,
}

/// Central-difference complex derivatives of several real fields at once.
///
/// `field` writes the `count` field values at a chart point into its output
/// slice. The step is taken along the real and imaginary directions of each
/// chart coordinate; the result is Hermitian up to `O(h^2)`.
pub fn chart_derivatives<F>(
    manifold: &ModelManifold,
    zeta: &ComplexPoint,
    h: f64,
    count: usize,
    mut field: F,
) -> Result<Vec<ChartDerivatives>>
where
    F: FnMut(&ComplexPoint, &mut [f64]),
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step {h}")));
    }
    let chart = HolomorphicChart::at(manifold, zeta);
    if chart.singularity_distance() <= 4.0 * h {
        return Err(Error::ChartSingularity);
    }
    let w0 = chart.coords(zeta);
    let m = chart.dim();
    let n = 2 * m;

    let mut eval = |offsets: &[(usize, f64)], out: &mut [f64]| {
        let mut w = w0.clone();
        for &(dir, step) in offsets {
            if dir < m {
                w[dir].re += step;
            } else {
                w[dir - m].im += step;
            }
        }
        field(&chart.point(&w), out);
    };

    let mut center = vec![0.0; count];
    eval(&[], &mut center);
    let mut plus = vec![vec![0.0; count]; n];
    let mut minus = vec![vec![0.0; count]; n];
    for p in 0..n {
        eval(&[(p, h)], &mut plus[p]);
        eval(&[(p, -h)], &mut minus[p]);
    }
    // second[c][p][q]: d^2 F_c / du_p du_q in real chart directions u.
    let mut second = vec![vec![vec![0.0; n]; n]; count];
    let mut buf = [vec![0.0; count], vec![0.0; count], vec![0.0; count], vec![0.0; count]];
    for p in 0..n {
        for c in 0..count {
            second[c][p][p] = (plus[p][c] - 2.0 * center[c] + minus[p][c]) / (h * h);
        }
        for q in (p + 1)..n {
            eval(&[(p, h), (q, h)], &mut buf[0]);
            eval(&[(p, h), (q, -h)], &mut buf[1]);
            eval(&[(p, -h), (q, h)], &mut buf[2]);
            eval(&[(p, -h), (q, -h)], &mut buf[3]);
            for c in 0..count {
                let d = (buf[0][c] - buf[1][c] - buf[2][c] + buf[3][c]) / (4.0 * h * h);
                second[c][p][q] = d;
                second[c][q][p] = d;
            }
        }
    }

    let out = (0..count)
        .map(|c| {
            let gradient = (0..m)
                .map(|i| {
                    let da = (plus[i][c] - minus[i][c]) / (2.0 * h);
                    let db = (plus[i + m][c] - minus[i + m][c]) / (2.0 * h);
                    Complex64::new(0.5 * da, -0.5 * db)
                })
                .collect();
            let d = &second[c];
            let hessian = ComplexMatrix::from_fn(m, m, |i, j| {
                Complex64::new(
                    0.25 * (d[i][j] + d[i + m][j + m]),
                    0.25 * (d[i][j + m] - d[i + m][j]),
                )
            });
            ChartDerivatives {
                value: center[c],
                gradient,
                hessian,
            }
        })
        .collect();
    Ok(out)
}

/// `(d^2 F / dzeta_i dconj(zeta_j))` in the local holomorphic chart at `zeta`.
pub fn fd_complex_hessian<F>(
    manifold: &ModelManifold,
    field: F,
    zeta: &ComplexPoint,
    h: f64,
) -> Result<ComplexMatrix>
where
    F: Fn(&ComplexPoint) -> f64,
{
    let mut d = chart_derivatives(manifold, zeta, h, 1, |z, out| out[0] = field(z))?;
    Ok(d.pop().expect("one field").hessian)
}

/// Largest entry modulus of `(H - H*)/2`.
pub fn anti_hermitian_part(h: &ComplexMatrix) -> f64 {
    let a = (h - h.adjoint()) * Complex64::new(0.5, 0.0);
    a.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn max_entry(h: &ComplexMatrix) -> f64 {
    h.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn tube_fields(manifold: &ModelManifold, p: &TubePoint, h: f64) -> Result<Vec<ChartDerivatives>> {
    if manifold.dim < 2 {
        return Err(Error::InvalidParameter("needs a manifold of dimension >= 2".into()));
    }
    if p.norm < 10.0 * h {
        return Err(Error::NearZeroSection {
            norm: p.norm,
            min: 10.0 * h,
        });
    }
    let zeta = complexify(manifold, p)?;
    chart_derivatives(manifold, &zeta, h, 2, |z, out| {
        let r = tube_norm(manifold, z).unwrap_or(f64::NAN);
        out[0] = r;
        out[1] = r * r;
    })
}

/// Max-entry relative mismatch between `(i/pi) ddbar sqrt(rho)` and
/// `omega_g / (2 pi sqrt(rho)) + d rho ^ alpha / (4 pi rho^{3/2})` with
/// `rho = |xi|_g^2`.
///
/// In chart coefficients `omega_g = i ddbar rho` and
/// `d rho ^ alpha = -i d rho ^ dbar rho`, so the right side is assembled from
/// the Hessian and gradient of `rho` alone while the left side differentiates
/// `|xi|_g` directly.
pub fn limit_form_identity_residual(manifold: &ModelManifold, p: &TubePoint, h: f64) -> Result<f64> {
    let d = tube_fields(manifold, p, h)?;
    let (sqrt_rho, rho) = (&d[0], &d[1]);
    let i = Complex64::new(0.0, 1.0);
    let rho_v = rho.value;
    let lhs = &sqrt_rho.hessian * (i / PI);
    let m = lhs.nrows();
    let rhs = ComplexMatrix::from_fn(m, m, |a, b| {
        let omega = i * rho.hessian[(a, b)];
        let drho_alpha = -i * rho.gradient[a] * rho.gradient[b].conj();
        omega / (2.0 * PI * rho_v.sqrt()) + drho_alpha / (4.0 * PI * rho_v.powf(1.5))
    });
    Ok(max_entry(&(&lhs - &rhs)) / max_entry(&lhs))
}

/// `|det ddbar |xi|_g| / lambda_max^m`, which vanishes off the zero section
/// because the complex Hessian of `|xi|_g` has rank `m - 1` there.
pub fn monge_ampere_equation_residual(manifold: &ModelManifold, p: &TubePoint, h: f64) -> Result<f64> {
    let d = tube_fields(manifold, p, h)?;
    Ok(normalized_determinant(&d[0].hessian))
}

/// `|det H| / lambda_max^m` of the Hermitian part of `H`.
pub fn normalized_determinant(h: &ComplexMatrix) -> f64 {
    let herm = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm).eigenvalues;
    let top = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    eig.iter().map(|v| v.abs() / top).product::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sphere_point(r: f64) -> TubePoint {
        TubePoint::new(&ModelManifold::round_sphere(), &[1.0, 0.0, 0.0], &[0.0, r, 0.0]).unwrap()
    }

    #[test]
    fn metric_norm_examples() {
        let c = ModelManifold::circle();
        assert_eq!(metric_norm(&c, &[0.2], &[0.3]).unwrap(), 0.3);
        let t = ModelManifold::flat_torus(2).unwrap();
        assert_relative_eq!(metric_norm(&t, &[0.0, 0.0], &[0.3, 0.4]).unwrap(), 0.5);
        let s = ModelManifold::round_sphere();
        assert_relative_eq!(metric_norm(&s, &[1.0, 0.0, 0.0], &[0.0, 0.3, 0.0]).unwrap(), 0.3);
        assert!(matches!(
            metric_norm(&t, &[0.0, 0.0], &[0.3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn complexify_examples() {
        let c = ModelManifold::circle();
        let p = TubePoint::new(&c, &[0.2], &[0.3]).unwrap();
        assert_eq!(complexify(&c, &p).unwrap().z[0], Complex64::new(0.2, 0.3));

        let s = ModelManifold::round_sphere();
        let z = complexify(&s, &sphere_point(0.3)).unwrap();
        assert_relative_eq!(z.z[0].re, 0.3f64.cosh(), epsilon = 1e-15);
        assert_relative_eq!(z.z[1].im, 0.3f64.sinh(), epsilon = 1e-15);
        assert_eq!(z.z[2], Complex64::new(0.0, 0.0));
        assert!(quadric_residual(&s, &z) < 1e-15);

        let zero = TubePoint::zero_section(&s, &[0.0, 0.6, 0.8]).unwrap();
        assert_eq!(complexify(&s, &zero).unwrap(), ComplexPoint::from_real(&[0.0, 0.6, 0.8]));
    }

    #[test]
    fn complexify_rejects_points_outside_tube() {
        let h = ModelManifold::hyperboloid(2).unwrap();
        let r = 2.3; // > pi / sqrt 2
        let p = TubePoint::new(&h, &[0.0, 0.0, 1.0], &[r, 0.0, 0.0]).unwrap();
        assert!(matches!(complexify(&h, &p), Err(Error::OutsideTube { .. })));
    }

    #[test]
    fn monge_ampere_examples() {
        let s = ModelManifold::round_sphere();
        let z = complexify(&s, &sphere_point(0.3)).unwrap();
        assert_relative_eq!(monge_ampere(&s, &z).unwrap(), 0.6, epsilon = 1e-14);

        let t = ModelManifold::flat_torus(1).unwrap();
        let z = ComplexPoint::new(&[Complex64::new(0.2, 0.3)]);
        assert_relative_eq!(monge_ampere(&t, &z).unwrap(), 0.6);

        for m in [s, t, ModelManifold::hyperboloid(2).unwrap()] {
            let x: Vec<f64> = match m.kind {
                ManifoldKind::RoundSphere => vec![0.0, 0.0, 1.0],
                ManifoldKind::Hyperboloid => vec![0.0, 0.0, 1.0],
                _ => vec![0.4],
            };
            assert_eq!(monge_ampere(&m, &ComplexPoint::from_real(&x)).unwrap(), 0.0);
        }
    }

    #[test]
    fn monge_ampere_rejects_off_quadric_points() {
        let s = ModelManifold::round_sphere();
        let z = ComplexPoint::from_real(&[0.5, 0.0, 0.0]);
        assert!(matches!(monge_ampere(&s, &z), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn hyperboloid_pullback_is_twice_the_norm() {
        let h = ModelManifold::hyperboloid(2).unwrap();
        let (a, b) = (0.3f64, 0.7f64);
        // x = (sinh a, 0, cosh a), tangent xi along the boost direction and e2.
        let x = [a.sinh(), 0.0, a.cosh()];
        let xi = [b * a.cosh(), 0.5, b * a.sinh()];
        let p = TubePoint::new(&h, &x, &xi).unwrap();
        let z = complexify(&h, &p).unwrap();
        assert!(quadric_residual(&h, &z) < 1e-12);
        assert_relative_eq!(monge_ampere(&h, &z).unwrap(), 2.0 * p.norm, max_relative = 1e-12);
        let back = decomplexify(&h, &z).unwrap();
        for (u, v) in back.xi.iter().zip(&p.xi) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn hessian_of_flat_fields() {
        let t = ModelManifold::flat_torus(1).unwrap();
        let z = ComplexPoint::new(&[Complex64::new(0.3, -0.2)]);
        let h = fd_complex_hessian(&t, |p| p.z[0].norm_sqr(), &z, 1e-4).unwrap();
        assert_relative_eq!(h[(0, 0)].re, 1.0, epsilon = 1e-8);
        assert!(h[(0, 0)].im.abs() < 1e-8);
        let h = fd_complex_hessian(&t, |p| p.z[0].re, &z, 1e-4).unwrap();
        assert!(h[(0, 0)].norm() < 1e-8);
    }

    /// Exact complex Hessian of `|xi|^2 = asinh(|Im z|)^2` in the graph chart
    /// `w = (z2, z3)`, `z1 = sqrt(1 - w1^2 - w2^2)`, by the chain rule.
    fn sphere_norm_sq_hessian_exact(z: &[Complex64; 3]) -> [[Complex64; 2]; 2] {
        let s: f64 = z.iter().map(|c| c.im * c.im).sum();
        let u = s.sqrt();
        let a = u.asinh();
        let q = (1.0 + u * u).sqrt();
        let f1 = a / (u * q);
        let dg = (u - a * (1.0 + 2.0 * u * u) / q) / (u * u * (1.0 + u * u));
        let f2 = dg / (2.0 * u);
        // Holomorphic Jacobian dz_j / dw_i.
        let jac = |j: usize, i: usize| -> Complex64 {
            match j {
                0 => -z[i + 1] / z[0],
                _ if j == i + 1 => Complex64::new(1.0, 0.0),
                _ => Complex64::new(0.0, 0.0),
            }
        };
        let ds = |i: usize| -> Complex64 {
            (0..3).map(|j| Complex64::new(0.0, -z[j].im) * jac(j, i)).sum()
        };
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for k in 0..2 {
                let hs: Complex64 = (0..3).map(|j| jac(j, i) * jac(j, k).conj() * 0.5).sum();
                out[i][k] = hs * f1 + ds(i) * ds(k).conj() * f2;
            }
        }
        out
    }

    #[test]
    fn sphere_norm_hessian_matches_exact_chain_rule() {
        let s = ModelManifold::round_sphere();
        let z = complexify(&s, &sphere_point(0.3)).unwrap();
        let fd = fd_complex_hessian(&s, |p| tube_norm(&s, p).unwrap().powi(2), &z, 1e-4).unwrap();
        let exact = sphere_norm_sq_hessian_exact(&[z.z[0], z.z[1], z.z[2]]);
        for i in 0..2 {
            for k in 0..2 {
                assert!((fd[(i, k)] - exact[i][k]).norm() < 1e-6, "{i}{k}: {} vs {}", fd[(i, k)], exact[i][k]);
            }
        }
        assert!(anti_hermitian_part(&fd) < 1e-7);
    }

    #[test]
    fn limit_form_identity_examples() {
        let s = ModelManifold::round_sphere();
        assert!(limit_form_identity_residual(&s, &sphere_point(0.3), 1e-4).unwrap() <= 1e-5);
        let t = ModelManifold::flat_torus(2).unwrap();
        let p = TubePoint::new(&t, &[0.1, 0.7], &[0.24, 0.32]).unwrap();
        assert!(limit_form_identity_residual(&t, &p, 1e-4).unwrap() <= 1e-5);
        let c = ModelManifold::circle();
        let p = TubePoint::new(&c, &[0.1], &[0.3]).unwrap();
        assert!(matches!(limit_form_identity_residual(&c, &p, 1e-4), Err(Error::InvalidParameter(_))));
        let p = sphere_point(5e-4);
        assert!(matches!(limit_form_identity_residual(&s, &p, 1e-4), Err(Error::NearZeroSection { .. })));
    }

    #[test]
    fn monge_ampere_equation_examples() {
        let s = ModelManifold::round_sphere();
        assert!(monge_ampere_equation_residual(&s, &sphere_point(0.3), 1e-4).unwrap() <= 1e-6);
        let t = ModelManifold::flat_torus(2).unwrap();
        let p = TubePoint::new(&t, &[0.5, 0.5], &[0.15, 0.2]).unwrap();
        assert!(monge_ampere_equation_residual(&t, &p, 1e-4).unwrap() <= 1e-6);
        // The Kaehler potential |xi|^2 itself is nondegenerate.
        let z = complexify(&t, &p).unwrap();
        let h = fd_complex_hessian(&t, |q| tube_norm(&t, q).unwrap().powi(2), &z, 1e-4).unwrap();
        assert!(normalized_determinant(&h) > 0.5);
    }
}
