//! Complex zeros along complexified closed geodesics, and a probe of real
//! nodal sets.
//!
//! Along a unit-speed geodesic `gamma`, `w = t + i s` maps to the complexified
//! point `exp_{gamma(t)}(i s gamma'(t))`, and the pulled-back eigenfunction is
//! an entire function of `w`. Zeros are counted with the argument principle
//! (adaptive Gauss–Legendre panels on each edge, `g'/g` by finite
//! differences) and located by quadrisection and Newton's method.

use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{decomplexify, ComplexPoint, ManifoldKind, ModelManifold, TubePoint};
use crate::quadrature::{gauss_legendre, ordered_sum};
use crate::scaled::ScaledComplex;
use crate::spectral::ComplexEigenfunction;

const MAX_SUBDIVISION: usize = 8;
const MAX_PANEL_DEPTH: usize = 40;
const INTEGRALITY_TOL: f64 = 0.01;
const NUDGE: f64 = 1e-3;
const PANEL_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub t0: f64,
    pub t1: f64,
    pub s0: f64,
    pub s1: f64,
}

impl Rect {
    pub fn new(t0: f64, t1: f64, s0: f64, s1: f64) -> Result<Self> {
        if !(t0 < t1 && s0 < s1) || ![t0, t1, s0, s1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!("degenerate rectangle [{t0}, {t1}] x [{s0}, {s1}]")));
        }
        Ok(Self { t0, t1, s0, s1 })
    }

    pub fn width(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn height(&self) -> f64 {
        self.s1 - self.s0
    }

    pub fn size(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.t0 + self.t1), 0.5 * (self.s0 + self.s1))
    }

    pub fn contains(&self, w: Complex64, slack: f64) -> bool {
        w.re >= self.t0 - slack && w.re <= self.t1 + slack && w.im >= self.s0 - slack && w.im <= self.s1 + slack
    }

    /// Corners counterclockwise from `(t0, s0)`.
    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.t0, self.s0),
            Complex64::new(self.t1, self.s0),
            Complex64::new(self.t1, self.s1),
            Complex64::new(self.t0, self.s1),
        ]
    }
}

/// A unit-speed closed geodesic.
#[derive(Debug, Clone, PartialEq)]
pub enum Geodesic {
    /// The circle itself, `t` in `[0, 1)`.
    Circle,
    /// `x0 + t n/|n|` on a flat torus; closes after `|n|`.
    Line { origin: Vec<f64>, direction: Vec<i64> },
    /// `cos(t) e1 + sin(t) e2` for orthonormal `e1, e2`.
    GreatCircle { e1: [f64; 3], e2: [f64; 3] },
}

impl Geodesic {
    pub fn equator() -> Self {
        Geodesic::GreatCircle {
            e1: [1.0, 0.0, 0.0],
            e2: [0.0, 1.0, 0.0],
        }
    }

    /// Through the north pole at `t = 0`, reaching the south pole at `t = pi`.
    pub fn meridian() -> Self {
        Geodesic::GreatCircle {
            e1: [0.0, 0.0, 1.0],
            e2: [1.0, 0.0, 0.0],
        }
    }

    pub fn length(&self) -> f64 {
        match self {
            Geodesic::Circle => 1.0,
            Geodesic::Line { direction, .. } => direction.iter().map(|n| (n * n) as f64).sum::<f64>().sqrt(),
            Geodesic::GreatCircle { .. } => 2.0 * PI,
        }
    }

    fn check(&self, manifold: &ModelManifold) -> Result<()> {
        let ok = match (self, manifold.kind) {
            (Geodesic::Circle, ManifoldKind::Circle) => true,
            (Geodesic::Line { origin, direction }, ManifoldKind::FlatTorus | ManifoldKind::Circle) => {
                origin.len() == manifold.dim
                    && direction.len() == manifold.dim
                    && direction.iter().any(|&n| n != 0)
            }
            (Geodesic::GreatCircle { e1, e2 }, ManifoldKind::RoundSphere) => {
                let d = |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                (d(e1, e1) - 1.0).abs() < 1e-12 && (d(e2, e2) - 1.0).abs() < 1e-12 && d(e1, e2).abs() < 1e-12
            }
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("{self:?} is not a unit geodesic of {:?}", manifold.kind)));
        }
        Ok(())
    }

    /// `exp_{gamma(t)}(i s gamma'(t))` in the complexification.
    pub fn complex_point(&self, w: Complex64) -> ComplexPoint {
        match self {
            Geodesic::Circle => ComplexPoint::new(&[w]),
            Geodesic::Line { origin, direction } => {
                let len = self.length();
                let z: Vec<Complex64> = origin
                    .iter()
                    .zip(direction)
                    .map(|(o, n)| Complex64::new(*o, 0.0) + w * (*n as f64 / len))
                    .collect();
                ComplexPoint::new(&z)
            }
            Geodesic::GreatCircle { e1, e2 } => {
                let (c, s) = (w.cos(), w.sin());
                let z: Vec<Complex64> = (0..3).map(|k| c * e1[k] + s * e2[k]).collect();
                ComplexPoint::new(&z)
            }
        }
    }
}

/// `f^C` pulled back along a complexified geodesic.
pub struct StripFunction<'a> {
    pub f: &'a dyn ComplexEigenfunction,
    pub geodesic: Geodesic,
    /// Step of the finite-difference derivative.
    pub fd_step: f64,
}

impl<'a> StripFunction<'a> {
    pub fn new(f: &'a dyn ComplexEigenfunction, geodesic: Geodesic) -> Result<Self> {
        geodesic.check(f.manifold())?;
        // Fourth-order differences resolve e^{i lambda w} to ~(lambda h)^4.
        let fd_step = 1e-2 / f.frequency().max(1.0);
        Ok(Self { f, geodesic, fd_step })
    }

    pub fn manifold(&self) -> &ModelManifold {
        self.f.manifold()
    }

    pub fn eval(&self, w: Complex64) -> Result<ScaledComplex> {
        let radius = self.manifold().tube_radius;
        if w.im.abs() >= radius {
            return Err(Error::OutsideTube {
                norm: w.im.abs(),
                radius,
            });
        }
        self.f.eval_scaled(&self.geodesic.complex_point(w))
    }

    /// `g'(w) / g(w)` by fourth-order central differences on ratios.
    pub fn log_derivative(&self, w: Complex64) -> Result<Complex64> {
        let h = self.fd_step;
        let g0 = self.eval(w)?;
        if g0.is_zero() {
            return Err(Error::OutsideDomain("exact zero on the evaluation path".into()));
        }
        let ratio = |d: f64| -> Result<Complex64> {
            let g = self.eval(w + Complex64::new(d, 0.0))?;
            Ok(g.ratio_to(g0.log_scale) / g0.mantissa)
        };
        let d = (-ratio(2.0 * h)? + ratio(h)? * 8.0 - ratio(-h)? * 8.0 + ratio(-2.0 * h)?) / (12.0 * h);
        Ok(d)
    }

    /// Relative mismatch of `dg/dt` and `-i dg/ds` at `w`.
    pub fn cauchy_riemann_residual(&self, w: Complex64) -> Result<f64> {
        let h = self.fd_step;
        let g0 = self.eval(w)?;
        let rel = |d: Complex64| -> Result<Complex64> { Ok(self.eval(w + d)?.ratio_to(g0.log_scale)) };
        let diff = |dir: Complex64| -> Result<Complex64> {
            Ok((-rel(dir * (2.0 * h))? + rel(dir * h)? * 8.0 - rel(-dir * h)? * 8.0 + rel(-dir * (2.0 * h))?)
                / (12.0 * h))
        };
        let dt = diff(Complex64::new(1.0, 0.0))?;
        let ds = diff(Complex64::new(0.0, 1.0))?;
        let scale = dt.norm().max(ds.norm()).max(f64::MIN_POSITIVE);
        Ok((dt + Complex64::new(0.0, 1.0) * ds).norm() / scale)
    }

    /// The tube point over `w`.
    pub fn tube_point(&self, w: Complex64) -> Result<TubePoint> {
        decomplexify(self.manifold(), &self.geodesic.complex_point(w))
    }
}

/// `f^C(exp_{gamma(t)}(i s gamma'(t)))` at `w = t + i s`.
pub fn pullback_geodesic(f: &dyn ComplexEigenfunction, geodesic: &Geodesic, w: Complex64) -> Result<Complex64> {
    Ok(StripFunction::new(f, geodesic.clone())?.eval(w)?.to_complex())
}

struct Contour<'a, 'b> {
    g: &'b StripFunction<'a>,
    tol: f64,
    panels: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug)]
enum EdgeFailure {
    /// A zero sits on or within quadrature reach of the segment.
    NearZero,
    Other(Error),
}

impl From<Error> for EdgeFailure {
    fn from(e: Error) -> Self {
        EdgeFailure::Other(e)
    }
}

impl<'a, 'b> Contour<'a, 'b> {
    fn new(g: &'b StripFunction<'a>, n_contour: usize, tol: f64) -> Self {
        let (nodes, weights) = gauss_legendre(PANEL_ORDER);
        Self {
            g,
            tol,
            panels: n_contour.max(1),
            nodes,
            weights,
        }
    }

    fn panel(&self, a: Complex64, b: Complex64) -> std::result::Result<Complex64, EdgeFailure> {
        let half = (b - a) * 0.5;
        let mid = (a + b) * 0.5;
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let d = match self.g.log_derivative(mid + half * *x) {
                Ok(d) => d,
                Err(Error::OutsideDomain(_)) => return Err(EdgeFailure::NearZero),
                Err(e) => return Err(e.into()),
            };
            if !(d.re.is_finite() && d.im.is_finite()) {
                return Err(EdgeFailure::NearZero);
            }
            acc += d * *w;
        }
        Ok(acc * half)
    }

    fn adaptive(
        &self,
        a: Complex64,
        b: Complex64,
        whole: Complex64,
        tol: f64,
        depth: usize,
    ) -> std::result::Result<Complex64, EdgeFailure> {
        let m = (a + b) * 0.5;
        let left = self.panel(a, m)?;
        let right = self.panel(m, b)?;
        let both = left + right;
        // Floor for rounding in the difference quotients.
        let floor = 1e-9 * (b - a).norm() / self.panels as f64;
        if (both - whole).norm() <= tol.max(floor) {
            return Ok(both);
        }
        if depth >= MAX_PANEL_DEPTH {
            return Err(EdgeFailure::NearZero);
        }
        Ok(self.adaptive(a, m, left, 0.5 * tol, depth + 1)? + self.adaptive(m, b, right, 0.5 * tol, depth + 1)?)
    }

    /// `int_a^b g'/g dw`.
    fn segment(&self, a: Complex64, b: Complex64) -> std::result::Result<Complex64, EdgeFailure> {
        let n = self.panels;
        let tol = self.tol * 2.0 * PI / n as f64;
        let mut parts = Vec::with_capacity(n);
        for j in 0..n {
            let pa = a + (b - a) * (j as f64 / n as f64);
            let pb = a + (b - a) * ((j + 1) as f64 / n as f64);
            let whole = self.panel(pa, pb)?;
            parts.push(self.adaptive(pa, pb, whole, tol, 0)?);
        }
        Ok(Complex64::new(
            ordered_sum(parts.iter().map(|c| c.re)),
            ordered_sum(parts.iter().map(|c| c.im)),
        ))
    }

    /// Winding number before rounding; `Err((edge, NearZero))` names the failing edge
    /// (bottom, right, top, left).
    fn winding(&self, rect: &Rect) -> std::result::Result<Complex64, (usize, EdgeFailure)> {
        let c = rect.corners();
        let mut total = Complex64::new(0.0, 0.0);
        for e in 0..4 {
            total += self.segment(c[e], c[(e + 1) % 4]).map_err(|f| (e, f))?;
        }
        Ok(total / Complex64::new(0.0, 2.0 * PI))
    }

    fn integral_count(&self, rect: &Rect) -> std::result::Result<(u32, f64), (usize, EdgeFailure)> {
        let w = self.winding(rect)?;
        let n = w.re.round();
        if (w.re - n).abs() <= INTEGRALITY_TOL && w.im.abs() <= INTEGRALITY_TOL && n >= 0.0 {
            Ok((n as u32, w.re))
        } else {
            Err((usize::MAX, EdgeFailure::Other(Error::NonIntegerWinding { value: w.re })))
        }
    }

    /// Splits `rect` along its longer side at a line that keeps clear of zeros.
    fn split(&self, rect: &Rect) -> Result<(Rect, Rect)> {
        let vertical = rect.width() >= rect.height();
        let extent = if vertical { rect.width() } else { rect.height() };
        // Irregular fractions keep split lines off symmetry axes, where real
        // functions put their zeros.
        const FRACTIONS: [f64; 8] = [0.0371, -0.0629, 0.0853, -0.1117, 0.1391, -0.1573, 0.1829, -0.2087];
        for j in 0..FRACTIONS.len() {
            let offset = FRACTIONS[j] * extent;
            let (a, b, r1, r2) = if vertical {
                let t = 0.5 * (rect.t0 + rect.t1) + offset;
                (
                    Complex64::new(t, rect.s0),
                    Complex64::new(t, rect.s1),
                    Rect { t1: t, ..*rect },
                    Rect { t0: t, ..*rect },
                )
            } else {
                let s = 0.5 * (rect.s0 + rect.s1) + offset;
                (
                    Complex64::new(rect.t0, s),
                    Complex64::new(rect.t1, s),
                    Rect { s1: s, ..*rect },
                    Rect { s0: s, ..*rect },
                )
            };
            match self.segment(a, b) {
                Ok(_) => return Ok((r1, r2)),
                Err(EdgeFailure::NearZero) => continue,
                Err(EdgeFailure::Other(e)) => return Err(e),
            }
        }
        Err(Error::ResolutionTooCoarse("no zero-free split line found".into()))
    }

    fn count(&self, rect: &Rect, depth: usize) -> Result<(u32, f64)> {
        match self.integral_count(rect) {
            Ok(v) => Ok(v),
            Err((_, EdgeFailure::Other(Error::NonIntegerWinding { value }))) => {
                if depth >= MAX_SUBDIVISION {
                    return Err(Error::NonIntegerWinding { value });
                }
                let (a, b) = self.split(rect)?;
                let (ca, ra) = self.count(&a, depth + 1)?;
                let (cb, rb) = self.count(&b, depth + 1)?;
                Ok((ca + cb, ra + rb))
            }
            Err((_, EdgeFailure::Other(e))) => Err(e),
            Err((_, EdgeFailure::NearZero)) => Err(Error::ResolutionTooCoarse(
                "zero within quadrature reach of an interior edge".into(),
            )),
        }
    }
}

/// Winding count of a rectangle after nudging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindingCount {
    pub count: u32,
    /// Sum of the unrounded windings of the accepted rectangles.
    pub raw: f64,
    /// The rectangle actually integrated over.
    pub rect: Rect,
}

/// Moves edges with zeros on them: the left and right edges move toward
/// smaller `t` (half-open `[t0, t1)`), the bottom edge down and the top up.
fn nudge_edge(rect: &Rect, edge: usize, step: f64) -> Rect {
    let mut r = *rect;
    match edge {
        0 => r.s0 -= step,
        1 => r.t1 -= step,
        2 => r.s1 += step,
        _ => r.t0 -= step,
    }
    r
}

/// Argument-principle count with the nudged rectangle and the raw winding.
pub fn winding_count(g: &StripFunction<'_>, rect: &Rect, n_contour: usize) -> Result<WindingCount> {
    let contour = Contour::new(g, n_contour, 1e-8);
    let nudge = 1.0371 * (NUDGE * rect.size()).max(10.0 * g.fd_step);
    // Zeros of real functions sit on the real axis and often on t-edges; shift
    // every edge up front so that such zeros land on the half-open side.
    let mut current = (0..4).fold(*rect, |r, e| nudge_edge(&r, e, nudge));
    for _ in 0..12 {
        match contour.integral_count(&current) {
            Ok((count, raw)) => {
                return Ok(WindingCount {
                    count,
                    raw,
                    rect: current,
                })
            }
            Err((edge, EdgeFailure::NearZero)) => current = nudge_edge(&current, edge, nudge),
            Err((_, EdgeFailure::Other(Error::NonIntegerWinding { .. }))) => {
                let (count, raw) = contour.count(&current, 0)?;
                return Ok(WindingCount {
                    count,
                    raw,
                    rect: current,
                });
            }
            Err((_, EdgeFailure::Other(e))) => return Err(e),
        }
    }
    Err(Error::ResolutionTooCoarse("contour keeps meeting zeros after nudging".into()))
}

/// `(1 / 2 pi i) oint g'/g dw` rounded to the nearest integer.
pub fn argument_principle_count(g: &StripFunction<'_>, rect: &Rect, n_contour: usize) -> Result<u32> {
    Ok(winding_count(g, rect, n_contour)?.count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroList {
    /// `(location, multiplicity)`, sorted by real then imaginary part.
    pub zeros: Vec<(Complex64, u32)>,
    pub rect: Rect,
    pub total_count: u32,
    /// Cells whose zeros could not be isolated or refined, with their counts.
    pub unresolved: Vec<(Rect, u32)>,
}

impl ZeroList {
    pub fn located_count(&self) -> u32 {
        self.zeros.iter().map(|z| z.1).sum()
    }
}

fn newton(g: &StripFunction<'_>, start: Complex64, multiplicity: u32, tol: f64) -> Option<Complex64> {
    let mut w = start;
    for _ in 0..60 {
        let d = g.log_derivative(w).ok()?;
        if d.norm() == 0.0 || !d.re.is_finite() || !d.im.is_finite() {
            return None;
        }
        let step = Complex64::new(multiplicity as f64, 0.0) / d;
        w -= step;
        if step.norm() <= tol {
            return Some(w);
        }
    }
    None
}

/// Whether `|g(w)|` is at most `1e-8` of the largest corner value of `cell`.
fn is_small(g: &StripFunction<'_>, w: Complex64, cell: &Rect) -> bool {
    let Ok(v) = g.eval(w) else { return false };
    if v.is_zero() {
        return true;
    }
    let scale = cell
        .corners()
        .iter()
        .filter_map(|c| g.eval(*c).ok())
        .map(|s| s.ln_abs())
        .fold(f64::NEG_INFINITY, f64::max);
    v.ln_abs() - scale <= (1e-8f64).ln()
}

fn locate_in(
    contour: &Contour<'_, '_>,
    cell: Rect,
    count: u32,
    depth: usize,
    min_size: f64,
    tol: f64,
) -> Result<(Vec<(Complex64, u32)>, Vec<(Rect, u32)>)> {
    if count == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let g = contour.g;
    if count == 1 || cell.size() <= min_size {
        if let Some(w) = newton(g, cell.center(), count, tol) {
            if cell.contains(w, tol) && is_small(g, w, &cell) {
                return Ok((vec![(w, count)], Vec::new()));
            }
        }
        if cell.size() <= min_size || depth >= 4 * MAX_SUBDIVISION {
            return Ok((Vec::new(), vec![(cell, count)]));
        }
    }
    let (a, b) = contour.split(&cell)?;
    let mut quads = Vec::with_capacity(4);
    for half in [a, b] {
        let (p, q) = contour.split(&half)?;
        quads.push(p);
        quads.push(q);
    }
    let counts: Vec<u32> = quads
        .par_iter()
        .map(|q| contour.count(q, 0).map(|c| c.0))
        .collect::<Result<_>>()?;
    if counts.iter().sum::<u32>() != count {
        return Err(Error::NonIntegerWinding {
            value: counts.iter().sum::<u32>() as f64,
        });
    }
    let parts: Vec<(Vec<(Complex64, u32)>, Vec<(Rect, u32)>)> = quads
        .par_iter()
        .zip(&counts)
        .map(|(q, c)| locate_in(contour, *q, *c, depth + 1, min_size, tol))
        .collect::<Result<_>>()?;
    let mut zeros = Vec::new();
    let mut unresolved = Vec::new();
    for (z, u) in parts {
        zeros.extend(z);
        unresolved.extend(u);
    }
    Ok((zeros, unresolved))
}

/// All zeros in `rect` by recursive quadrisection and Newton refinement to
/// `target_tol`.
pub fn locate_zeros(g: &StripFunction<'_>, rect: &Rect, target_tol: f64) -> Result<ZeroList> {
    if !(target_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("target tolerance {target_tol}")));
    }
    let n_contour = (g.f.frequency() * rect.size() / 4.0).ceil().max(4.0) as usize;
    let wc = winding_count(g, rect, n_contour)?;
    let contour = Contour::new(g, 4, 1e-8);
    let min_size = 1e-6 * wc.rect.size();
    let (mut zeros, unresolved) = locate_in(&contour, wc.rect, wc.count, 0, min_size, target_tol)?;
    zeros.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    Ok(ZeroList {
        zeros,
        rect: wc.rect,
        total_count: wc.count,
        unresolved,
    })
}

/// `(1/lambda) sum multiplicity * phi(zero)` with `phi` evaluated at the tube
/// point over each zero.
pub fn zero_measure_pairing<F>(zl: &ZeroList, g: &StripFunction<'_>, phi: F, lambda: f64) -> Result<f64>
where
    F: Fn(&TubePoint) -> f64,
{
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda}")));
    }
    let terms = zl
        .zeros
        .iter()
        .map(|(w, m)| Ok(*m as f64 * phi(&g.tube_point(*w)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ordered_sum(terms) / lambda)
}

/// Real part of `f^C` on the real locus.
pub fn real_values(f: &dyn ComplexEigenfunction, x: &[f64]) -> Result<f64> {
    Ok(f.eval_scaled(&ComplexPoint::from_real(x))?.to_complex().re)
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
        if b - a < 1e-15 {
            break;
        }
    }
    0.5 * (a + b)
}

fn circle_roots<F: Fn(f64) -> f64>(f: &F, n: usize) -> Vec<f64> {
    // Offset keeps sample points off symmetric zeros such as x = 0.
    let offset = 0.318_309_886 / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| offset + i as f64 / n as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut roots = Vec::new();
    for i in 0..n {
        if vals[i] == 0.0 {
            roots.push(xs[i]);
        } else if vals[i] * vals[i + 1] < 0.0 {
            roots.push(bisect(f, xs[i], xs[i + 1]));
        }
    }
    roots
}

/// Marching-squares nodal length `int_{f = 0} test ds` on a colatitude–azimuth grid.
fn sphere_nodal_integral<F, T>(f: &F, test: &T, n_theta: usize) -> (f64, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
    T: Fn(&[f64]) -> f64 + Sync,
{
    let n_phi = 2 * n_theta;
    let point = |i: usize, j: usize| -> [f64; 3] {
        let th = PI * i as f64 / n_theta as f64;
        let ph = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
        [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]
    };
    let vals: Vec<Vec<f64>> = (0..=n_theta)
        .into_par_iter()
        .map(|i| (0..n_phi).map(|j| f(&point(i, j))).collect())
        .collect();
    let rows: Vec<(f64, usize)> = (0..n_theta)
        .into_par_iter()
        .map(|i| {
            let mut acc = Vec::new();
            let mut segs = 0;
            for j in 0..n_phi {
                let jn = (j + 1) % n_phi;
                let c = [(i, j), (i, jn), (i + 1, jn), (i + 1, j)];
                let v: Vec<f64> = c.iter().map(|&(a, b)| vals[a][b]).collect();
                let p: Vec<[f64; 3]> = c.iter().map(|&(a, b)| point(a, b)).collect();
                let mut cross = Vec::with_capacity(4);
                for e in 0..4 {
                    let (va, vb) = (v[e], v[(e + 1) % 4]);
                    if (va > 0.0) != (vb > 0.0) {
                        let t = va / (va - vb);
                        let (pa, pb) = (p[e], p[(e + 1) % 4]);
                        cross.push([
                            pa[0] + t * (pb[0] - pa[0]),
                            pa[1] + t * (pb[1] - pa[1]),
                            pa[2] + t * (pb[2] - pa[2]),
                        ]);
                    }
                }
                let pairs: Vec<(usize, usize)> = match cross.len() {
                    2 => vec![(0, 1)],
                    4 => {
                        let centre = v.iter().sum::<f64>() / 4.0;
                        // Saddle: join crossings so that the centre's sign region stays connected.
                        if (centre > 0.0) == (v[0] > 0.0) {
                            vec![(0, 3), (1, 2)]
                        } else {
                            vec![(0, 1), (2, 3)]
                        }
                    }
                    _ => Vec::new(),
                };
                for (a, b) in pairs {
                    let (pa, pb) = (cross[a], cross[b]);
                    let mid: Vec<f64> = (0..3).map(|k| 0.5 * (pa[k] + pb[k])).collect();
                    let n = mid.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let mid: Vec<f64> = mid.iter().map(|v| v / n).collect();
                    let chord = (0..3).map(|k| (pa[k] - pb[k]).powi(2)).sum::<f64>().sqrt();
                    acc.push(chord * test(&mid));
                    segs += 1;
                }
            }
            (ordered_sum(acc), segs)
        })
        .collect();
    (ordered_sum(rows.iter().map(|r| r.0)), rows.iter().map(|r| r.1).sum())
}

/// Result of a real nodal probe.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalProbe {
    /// Circle: sum of the test over roots. Sphere: `int test ds` over the nodal curves.
    pub value: f64,
    /// Value at half resolution.
    pub coarse_value: f64,
    /// Roots (circle) or curve segments (sphere).
    pub pieces: usize,
}

/// Real nodal pairing of a real function `f` on the circle or the sphere.
///
/// `resolution` is the number of samples per unit length on the circle and
/// the number of colatitude cells on the sphere. Results that change by more
/// than 5% at half resolution are rejected.
pub fn real_nodal_pairing<F, T>(manifold: &ModelManifold, f: F, test: T, resolution: usize) -> Result<NodalProbe>
where
    F: Fn(&[f64]) -> f64 + Sync,
    T: Fn(&[f64]) -> f64 + Sync,
{
    if resolution < 8 {
        return Err(Error::ResolutionTooCoarse(format!("resolution {resolution}")));
    }
    let (value, coarse_value, pieces, coarse_pieces) = match manifold.kind {
        ManifoldKind::Circle => {
            let g = |x: f64| f(&[x]);
            let fine = circle_roots(&g, resolution);
            let coarse = circle_roots(&g, resolution / 2);
            let sum = |r: &[f64]| ordered_sum(r.iter().map(|&x| test(&[x.rem_euclid(1.0)])));
            (sum(&fine), sum(&coarse), fine.len(), coarse.len())
        }
        ManifoldKind::RoundSphere => {
            let (v, n) = sphere_nodal_integral(&f, &test, resolution);
            let (cv, cn) = sphere_nodal_integral(&f, &test, resolution / 2);
            (v, cv, n, cn)
        }
        kind => {
            return Err(Error::InvalidParameter(format!("nodal probe is implemented for the circle and sphere, not {kind:?}")))
        }
    };
    let unstable = match manifold.kind {
        ManifoldKind::Circle => pieces != coarse_pieces,
        _ => (value - coarse_value).abs() > 0.05 * value.abs().max(f64::MIN_POSITIVE) || coarse_pieces == 0 && pieces > 0,
    };
    if unstable {
        return Err(Error::ResolutionTooCoarse(format!(
            "nodal probe changes under refinement: {value} vs {coarse_value}"
        )));
    }
    Ok(NodalProbe {
        value,
        coarse_value,
        pieces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{enumerate_cluster, EigenfunctionSpec, Parity};
    use approx::assert_relative_eq;

    fn circle_strip(f: &EigenfunctionSpec) -> StripFunction<'_> {
        StripFunction::new(f, Geodesic::Circle).unwrap()
    }

    #[test]
    fn circle_pullback_is_the_continuation() {
        let f = EigenfunctionSpec::circle(3, Parity::Sin).unwrap();
        let w = Complex64::new(0.17, 0.05);
        let got = pullback_geodesic(&f, &Geodesic::Circle, w).unwrap();
        let expect = (w * 2.0 * PI * 3.0).sin() * 2f64.sqrt();
        assert!((got - expect).norm() < 1e-12);
    }

    #[test]
    fn equator_pullback_of_sectoral_harmonic() {
        let f = EigenfunctionSpec::sphere(5, 5).unwrap();
        let g = StripFunction::new(&f, Geodesic::equator()).unwrap();
        let w0 = Complex64::new(0.3, 0.2);
        let v0 = g.eval(w0).unwrap().to_complex();
        // A sectoral harmonic restricted to the equator is c cos(l t) (cosine member),
        // so the continuation is c cos(l w).
        let c = v0 / (w0 * 5.0).cos();
        for w in [Complex64::new(1.1, -0.1), Complex64::new(2.0, 0.25)] {
            let v = g.eval(w).unwrap().to_complex();
            assert!((v - c * (w * 5.0).cos()).norm() < 1e-10 * v.norm().max(1.0));
        }
        assert!(g.cauchy_riemann_residual(Complex64::new(0.4, 0.1)).unwrap() < 1e-6);
    }

    #[test]
    fn real_restriction_at_zero_imaginary_part() {
        let f = EigenfunctionSpec::sphere(4, -2).unwrap();
        let g = StripFunction::new(&f, Geodesic::meridian()).unwrap();
        let t: f64 = 0.7;
        let x = [t.sin(), 0.0, t.cos()];
        let v = g.eval(Complex64::new(t, 0.0)).unwrap().to_complex();
        assert!((v.re - f.eval_real(&x).unwrap()).abs() < 1e-12 && v.im.abs() < 1e-12);
    }

    #[test]
    fn circle_counts() {
        let rect = Rect::new(0.0, 1.0, -0.2, 0.2).unwrap();
        for k in [1u32, 7] {
            let f = EigenfunctionSpec::circle(k, Parity::Sin).unwrap();
            let wc = winding_count(&circle_strip(&f), &rect, 16).unwrap();
            assert_eq!(wc.count, 2 * k);
            assert!((wc.raw - wc.count as f64).abs() < 0.01);
            let e = EigenfunctionSpec::circle(k, Parity::ExpPlus).unwrap();
            assert_eq!(argument_principle_count(&circle_strip(&e), &rect, 16).unwrap(), 0);
        }
    }

    #[test]
    fn count_additivity() {
        let f = EigenfunctionSpec::circle(5, Parity::Cos).unwrap();
        let g = circle_strip(&f);
        let whole = argument_principle_count(&g, &Rect::new(0.013, 1.013, -0.2, 0.2).unwrap(), 16).unwrap();
        let a = argument_principle_count(&g, &Rect::new(0.013, 0.411, -0.2, 0.2).unwrap(), 16).unwrap();
        let b = argument_principle_count(&g, &Rect::new(0.411, 1.013, -0.2, 0.2).unwrap(), 16).unwrap();
        assert_eq!(whole, 10);
        assert_eq!(a + b, whole);
    }

    #[test]
    fn meridian_count_matches_legendre_roots() {
        let f = EigenfunctionSpec::sphere(12, 0).unwrap();
        let g = StripFunction::new(&f, Geodesic::meridian()).unwrap();
        let rect = Rect::new(0.0, PI, -0.2, 0.2).unwrap();
        assert_eq!(argument_principle_count(&g, &rect, 16).unwrap(), 12);
    }

    #[test]
    fn located_circle_zeros() {
        let rect = Rect::new(0.0, 1.0, -0.2, 0.2).unwrap();
        let f = EigenfunctionSpec::circle(3, Parity::Sin).unwrap();
        let zl = locate_zeros(&circle_strip(&f), &rect, 1e-12).unwrap();
        assert_eq!(zl.total_count, 6);
        assert!(zl.unresolved.is_empty());
        for (n, (w, m)) in zl.zeros.iter().enumerate() {
            assert_eq!(*m, 1);
            assert!((w.re - n as f64 / 6.0).abs() < 1e-10 && w.im.abs() < 1e-10, "{w}");
        }
        let f = EigenfunctionSpec::circle(3, Parity::Cos).unwrap();
        let zl = locate_zeros(&circle_strip(&f), &rect, 1e-12).unwrap();
        for (n, (w, _)) in zl.zeros.iter().enumerate() {
            assert!((w.re - (2 * n + 1) as f64 / 12.0).abs() < 1e-10 && w.im.abs() < 1e-10);
        }
    }

    #[test]
    fn real_combination_zeros_are_conjugate_symmetric() {
        let c = ModelManifold::circle();
        let mut cb = enumerate_cluster(&c, 12).unwrap();
        // k = 12 holds cos/sin 4 pi x; a real rotation keeps the member real.
        cb.coeffs = nalgebra::DMatrix::from_row_slice(2, 2, &[
            Complex64::new(0.6, 0.0),
            Complex64::new(0.8, 0.0),
            Complex64::new(-0.8, 0.0),
            Complex64::new(0.6, 0.0),
        ]);
        let m = cb.member(0).unwrap();
        let g = StripFunction::new(&m, Geodesic::Circle).unwrap();
        let rect = Rect::new(0.0, 1.0, -0.3, 0.3).unwrap();
        let zl = locate_zeros(&g, &rect, 1e-12).unwrap();
        assert_eq!(zl.located_count(), zl.total_count);
        for (w, _) in &zl.zeros {
            assert!(zl.zeros.iter().any(|(v, _)| (v - w.conj()).norm() < 1e-9));
        }
    }

    #[test]
    fn zero_measure_pairing_riemann_sum() {
        let rect = Rect::new(0.0, 1.0, -0.2, 0.2).unwrap();
        let k = 20u32;
        let f = EigenfunctionSpec::circle(k, Parity::Sin).unwrap();
        let g = circle_strip(&f);
        let zl = locate_zeros(&g, &rect, 1e-13).unwrap();
        let phi = |p: &TubePoint| (PI * p.x[0]).cos().powi(2) * (1.0 - (p.xi[0] / 0.2).powi(2)).max(0.0).powi(4);
        let v = zero_measure_pairing(&zl, &g, phi, f.lambda).unwrap();
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-12);
        let off = |p: &TubePoint| if p.xi[0].abs() > 0.1 { 1.0 } else { 0.0 };
        assert_eq!(zero_measure_pairing(&zl, &g, off, f.lambda).unwrap(), 0.0);
    }

    #[test]
    fn circle_real_nodal_count() {
        let c = ModelManifold::circle();
        let f = EigenfunctionSpec::circle(9, Parity::Sin).unwrap();
        let probe = real_nodal_pairing(&c, |x| f.eval_real(x).unwrap(), |_| 1.0, 256).unwrap();
        assert_eq!(probe.pieces, 18);
        assert_eq!(probe.value, 18.0);
    }

    #[test]
    fn zonal_nodal_length() {
        let s = ModelManifold::round_sphere();
        let f = EigenfunctionSpec::sphere(6, 0).unwrap();
        let probe = real_nodal_pairing(&s, |x| f.eval_real(x).unwrap(), |_| 1.0, 240).unwrap();
        // Roots of P_6 (cos theta) from its closed form.
        let p6 = |x: f64| (231.0 * x.powi(6) - 315.0 * x.powi(4) + 105.0 * x * x - 5.0) / 16.0;
        let roots = circle_roots(&|u: f64| p6(2.0 * u - 1.0), 4000);
        let exact: f64 = roots.iter().map(|u| 2.0 * PI * (1.0 - (2.0 * u - 1.0).powi(2)).sqrt()).sum();
        assert_eq!(roots.len(), 6);
        assert_relative_eq!(probe.value, exact, max_relative = 1e-3);
    }
}
