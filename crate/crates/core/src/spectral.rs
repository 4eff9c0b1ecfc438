//! Laplace eigenfunctions of the circle, flat tori and the round sphere, and
//! their holomorphic continuations.
//!
//! Frequencies follow `Delta phi = lambda^2 phi`: `lambda = 2 pi |n|` on
//! `R^m / Z^m` and `lambda = sqrt(l (l + 1))` on the sphere. The spectrum is
//! cut into unit clusters `[k, k + 1)`.
//!
//! Sphere harmonics are continued as harmonic polynomials restricted to the
//! quadric: `Y_l^m(z) = Pbar_l^m(z3) * ((z1 + i z2)^m +/- (z1 - i z2)^m) / 2`
//! where `Pbar_l^m` is the orthonormalized associated Legendre function with
//! the `(1 - t^2)^{m/2}` factor removed, generated by the usual three-term
//! recurrence at complex argument.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::geometry::{ComplexPoint, ManifoldKind, ModelManifold};
use crate::scaled::{scaled_dot, ScaledComplex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    Cos,
    Sin,
    /// `exp(2 pi i <n, x>)`, the non-real circle/torus modes.
    ExpPlus,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Modes {
    Circle(u32),
    Torus(Vec<i64>),
    /// `m < 0` selects the sine-type harmonic of order `|m|`.
    Sphere { l: u32, m: i32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenfunctionSpec {
    pub manifold: ModelManifold,
    pub modes: Modes,
    pub parity: Parity,
    pub lambda: f64,
}

fn lex_positive(n: &[i64]) -> bool {
    n.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
}

impl EigenfunctionSpec {
    pub fn circle(k: u32, parity: Parity) -> Result<Self> {
        if k == 0 && parity != Parity::Cos {
            return Err(Error::InvalidParameter("the constant mode is cos-type".into()));
        }
        Ok(Self {
            manifold: ModelManifold::circle(),
            modes: Modes::Circle(k),
            parity,
            lambda: 2.0 * PI * k as f64,
        })
    }

    /// Torus mode `n`; real modes must use the lexicographically positive
    /// representative of `{n, -n}`.
    pub fn torus(n: Vec<i64>, parity: Parity) -> Result<Self> {
        let manifold = ModelManifold::flat_torus(n.len())?;
        let zero = n.iter().all(|&v| v == 0);
        if zero && parity != Parity::Cos {
            return Err(Error::InvalidParameter("the constant mode is cos-type".into()));
        }
        if !zero && parity != Parity::ExpPlus && !lex_positive(&n) {
            return Err(Error::InvalidParameter(format!(
                "real torus mode {n:?} is not the lexicographically positive representative"
            )));
        }
        let len = n.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
        Ok(Self {
            manifold,
            modes: Modes::Torus(n),
            parity,
            lambda: 2.0 * PI * len,
        })
    }

    pub fn sphere(l: u32, m: i32) -> Result<Self> {
        if m.unsigned_abs() > l {
            return Err(Error::InvalidParameter(format!("|m| = {} exceeds l = {l}", m.abs())));
        }
        Ok(Self {
            manifold: ModelManifold::round_sphere(),
            modes: Modes::Sphere { l, m },
            parity: if m < 0 { Parity::Sin } else { Parity::Cos },
            lambda: ((l * (l + 1)) as f64).sqrt(),
        })
    }

    fn lattice(&self) -> Vec<f64> {
        match &self.modes {
            Modes::Circle(k) => vec![*k as f64],
            Modes::Torus(n) => n.iter().map(|&v| v as f64).collect(),
            Modes::Sphere { .. } => Vec::new(),
        }
    }

    fn flat_normalization(&self) -> f64 {
        let zero = self.lattice().iter().all(|&v| v == 0.0);
        if zero || self.parity == Parity::ExpPlus {
            1.0
        } else {
            SQRT_2
        }
    }

    /// Value on the real manifold (chart angles for circle/torus, a unit
    /// vector for the sphere).
    pub fn eval_real(&self, x: &[f64]) -> Result<f64> {
        let n = self.manifold.coord_len();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        match (&self.modes, self.parity) {
            (_, Parity::ExpPlus) => Err(Error::InvalidParameter(
                "exp modes are complex valued on the real locus".into(),
            )),
            (Modes::Sphere { .. }, _) => Ok(self.eval_complex_scaled(&ComplexPoint::from_real(x))?
                .to_complex()
                .re),
            (_, parity) => {
                let phase: f64 = 2.0 * PI * self.lattice().iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                let c = self.flat_normalization();
                Ok(match parity {
                    Parity::Cos => c * phase.cos(),
                    _ => c * phase.sin(),
                })
            }
        }
    }

    pub fn eval_complex(&self, zeta: &ComplexPoint) -> Result<Complex64> {
        Ok(self.eval_complex_scaled(zeta)?.to_complex())
    }

    /// Holomorphic continuation, carried in scaled form so that large
    /// imaginary parts do not overflow.
    pub fn eval_complex_scaled(&self, zeta: &ComplexPoint) -> Result<ScaledComplex> {
        let n = self.manifold.coord_len();
        if zeta.z.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: zeta.z.len() });
        }
        match &self.modes {
            Modes::Sphere { l, m } => Ok(sphere_harmonic(*l, *m, &zeta.z)),
            _ => {
                let w: Complex64 = self
                    .lattice()
                    .iter()
                    .zip(&zeta.z)
                    .map(|(a, z)| z * (2.0 * PI * a))
                    .sum();
                Ok(flat_mode(w, self.parity).scale(Complex64::new(self.flat_normalization(), 0.0)))
            }
        }
    }
}

/// `cos w`, `sin w` or `exp(i w)` in scaled form.
fn flat_mode(w: Complex64, parity: Parity) -> ScaledComplex {
    let i = Complex64::new(0.0, 1.0);
    if parity == Parity::ExpPlus {
        return ScaledComplex::exp(i * w);
    }
    if w.im.abs() < 300.0 {
        return ScaledComplex::from_complex(match parity {
            Parity::Cos => w.cos(),
            _ => w.sin(),
        });
    }
    let a = ScaledComplex::exp(i * w);
    let b = ScaledComplex::exp(-i * w);
    match parity {
        Parity::Cos => a.add(&b).scale(Complex64::new(0.5, 0.0)),
        _ => a.add(&b.scale(Complex64::new(-1.0, 0.0))).scale(Complex64::new(0.0, -0.5)),
    }
}

const RESCALE_AT: f64 = 1e150;

/// Orthonormalized associated Legendre function `Pbar_l^m(t)` with the
/// `(1 - t^2)^{m/2}` factor removed (no Condon–Shortley phase).
fn legendre_reduced(l: u32, m: u32, t: Complex64) -> ScaledComplex {
    reduced_from_start(l, m, diagonal_start(m), t)
}

/// `Pbar_m^m / (1 - t^2)^{m/2}`.
fn diagonal_start(m: u32) -> f64 {
    let mut start = 1.0 / (4.0 * PI).sqrt();
    for k in 1..=m {
        let k = k as f64;
        start *= ((2.0 * k + 1.0) / (2.0 * k)).sqrt();
    }
    start
}

/// `((z1 + i z2)^m + (z1 - i z2)^m) / 2` and `((z1 + i z2)^m - (z1 - i z2)^m) / (2i)`.
fn azimuthal(m: u32, z: &[Complex64]) -> (ScaledComplex, ScaledComplex) {
    let i = Complex64::new(0.0, 1.0);
    let u = z[0] + i * z[1];
    let v = z[0] - i * z[1];
    let up = scaled_pow(u, m);
    let vp = scaled_pow(v, m);
    let minus_v = vp.scale(Complex64::new(-1.0, 0.0));
    (
        up.add(&vp).scale(Complex64::new(0.5, 0.0)),
        up.add(&minus_v).scale(Complex64::new(0.0, -0.5)),
    )
}

fn scaled_pow(u: Complex64, m: u32) -> ScaledComplex {
    if m == 0 {
        return ScaledComplex::from_complex(Complex64::new(1.0, 0.0));
    }
    let r = u.norm();
    if r == 0.0 {
        return ScaledComplex::ZERO;
    }
    ScaledComplex::exp(Complex64::new(m as f64 * r.ln(), m as f64 * u.arg()))
}

fn sphere_harmonic(l: u32, m: i32, z: &[Complex64]) -> ScaledComplex {
    let am = m.unsigned_abs();
    let p = legendre_reduced(l, am, z[2]);
    if am == 0 {
        return p;
    }
    let (c, s) = azimuthal(am, z);
    let ang = if m > 0 { c } else { s };
    p.mul(&ang).scale(Complex64::new(SQRT_2, 0.0))
}

/// All degree-`l` real harmonics at `z`, in cluster order
/// `m = 0, (1 cos, 1 sin), (2 cos, 2 sin), ...`.
///
/// Shares one recurrence start and one power sweep across orders.
pub fn sphere_degree_values(l: u32, z: &[Complex64]) -> Vec<ScaledComplex> {
    let i = Complex64::new(0.0, 1.0);
    let t = z[2];
    let u = z[0] + i * z[1];
    let v = z[0] - i * z[1];
    let mut out = Vec::with_capacity(2 * l as usize + 1);
    let mut start = 1.0 / (4.0 * PI).sqrt();
    let mut up = ScaledComplex::from_complex(Complex64::new(1.0, 0.0));
    let mut vp = up;
    let (us, vs) = (ScaledComplex::from_complex(u), ScaledComplex::from_complex(v));
    for m in 0..=l {
        if m > 0 {
            let k = m as f64;
            start *= ((2.0 * k + 1.0) / (2.0 * k)).sqrt();
            up = up.mul(&us);
            vp = vp.mul(&vs);
        }
        let p = reduced_from_start(l, m, start, t);
        if m == 0 {
            out.push(p);
        } else {
            let minus_v = vp.scale(Complex64::new(-1.0, 0.0));
            let c = up.add(&vp).scale(Complex64::new(0.5 * SQRT_2, 0.0));
            let s = up.add(&minus_v).scale(Complex64::new(0.0, -0.5 * SQRT_2));
            out.push(p.mul(&c));
            out.push(p.mul(&s));
        }
    }
    out
}

fn reduced_from_start(l: u32, m: u32, start: f64, t: Complex64) -> ScaledComplex {
    let mut prev2 = Complex64::new(start, 0.0);
    if l == m {
        return ScaledComplex::from_complex(prev2);
    }
    let mf = m as f64;
    let mut prev = t * (2.0 * mf + 3.0).sqrt() * start;
    let mut log_scale = 0.0;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
        let next = (t * prev - prev2 * b) * a;
        prev2 = prev;
        prev = next;
        let size = prev.norm();
        if size > RESCALE_AT {
            prev /= size;
            prev2 /= size;
            log_scale += size.ln();
        }
    }
    ScaledComplex::new(prev, log_scale)
}

/// Standard eigenfunctions with `lambda` in `[k, k + 1)` together with a
/// unitary change of basis (`coeffs[(j, i)]` is the weight of member `i` in
/// rotated function `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBasis {
    pub manifold: ModelManifold,
    pub cluster_index: u32,
    pub members: Vec<EigenfunctionSpec>,
    pub coeffs: DMatrix<Complex64>,
}

impl ClusterBasis {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Largest frequency in the cluster; rotated members are assigned it.
    pub fn top_frequency(&self) -> f64 {
        self.members.iter().map(|f| f.lambda).fold(0.0, f64::max)
    }

    /// Standard members at `zeta`, in member order.
    pub fn eval_members(&self, zeta: &ComplexPoint) -> Result<Vec<ScaledComplex>> {
        let single_degree = match self.members.first().map(|f| &f.modes) {
            Some(Modes::Sphere { l, .. }) => {
                let l = *l;
                let full = self.members.len() == 2 * l as usize + 1
                    && self
                        .members
                        .iter()
                        .all(|f| matches!(f.modes, Modes::Sphere { l: ll, .. } if ll == l));
                full.then_some(l)
            }
            _ => None,
        };
        match single_degree {
            Some(l) => {
                if zeta.z.len() != 3 {
                    return Err(Error::DimensionMismatch { expected: 3, got: zeta.z.len() });
                }
                Ok(sphere_degree_values(l, &zeta.z))
            }
            None => self.members.iter().map(|f| f.eval_complex_scaled(zeta)).collect(),
        }
    }

    /// Rotated member `j` at `zeta`.
    pub fn member_eval(&self, j: usize, zeta: &ComplexPoint) -> Result<ScaledComplex> {
        if j >= self.len() {
            return Err(Error::IndexOutOfRange { index: j, len: self.len() });
        }
        let vals = self.eval_members(zeta)?;
        let row: Vec<Complex64> = self.coeffs.row(j).iter().copied().collect();
        Ok(scaled_dot(&row, &vals))
    }

    pub fn member(&self, j: usize) -> Result<ClusterMember<'_>> {
        if j >= self.len() {
            return Err(Error::IndexOutOfRange { index: j, len: self.len() });
        }
        Ok(ClusterMember { basis: self, index: j })
    }

    /// `max |C* C - I|`.
    pub fn unitarity_residual(&self) -> f64 {
        unitarity_residual(&self.coeffs)
    }
}

pub fn unitarity_residual(u: &DMatrix<Complex64>) -> f64 {
    let n = u.nrows();
    let g = u.adjoint() * u - DMatrix::<Complex64>::identity(n, n);
    g.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Rotated member `j` of a cluster as a stand-alone eigenfunction.
#[derive(Debug, Clone, Copy)]
pub struct ClusterMember<'a> {
    pub basis: &'a ClusterBasis,
    pub index: usize,
}

/// Something that can be continued into the tube and has a frequency.
pub trait ComplexEigenfunction: Sync {
    fn manifold(&self) -> &ModelManifold;
    fn frequency(&self) -> f64;
    fn eval_scaled(&self, zeta: &ComplexPoint) -> Result<ScaledComplex>;
}

impl ComplexEigenfunction for EigenfunctionSpec {
    fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }
    fn frequency(&self) -> f64 {
        self.lambda
    }
    fn eval_scaled(&self, zeta: &ComplexPoint) -> Result<ScaledComplex> {
        self.eval_complex_scaled(zeta)
    }
}

impl ComplexEigenfunction for ClusterMember<'_> {
    fn manifold(&self) -> &ModelManifold {
        &self.basis.manifold
    }
    fn frequency(&self) -> f64 {
        self.basis.top_frequency()
    }
    fn eval_scaled(&self, zeta: &ComplexPoint) -> Result<ScaledComplex> {
        self.basis.member_eval(self.index, zeta)
    }
}

/// `sum_i coeffs[(j, i)] phi_i(zeta)`.
pub fn cluster_member_eval(cb: &ClusterBasis, j: usize, zeta: &ComplexPoint) -> Result<ScaledComplex> {
    cb.member_eval(j, zeta)
}

/// All standard eigenfunctions with `lambda` in `[k, k + 1)`, ordered
/// lexicographically in their mode indices with cos before sin.
pub fn enumerate_cluster(manifold: &ModelManifold, k: u32) -> Result<ClusterBasis> {
    let (lo, hi) = (k as f64, k as f64 + 1.0);
    let in_cluster = |lambda: f64| lambda >= lo && lambda < hi;
    let mut members = Vec::new();
    match manifold.kind {
        ManifoldKind::Hyperboloid => return Err(Error::NotSpectral(manifold.kind)),
        ManifoldKind::Circle => {
            let top = (hi / (2.0 * PI)).ceil() as u32;
            for j in 0..=top {
                if in_cluster(2.0 * PI * j as f64) {
                    members.push(EigenfunctionSpec::circle(j, Parity::Cos)?);
                    if j > 0 {
                        members.push(EigenfunctionSpec::circle(j, Parity::Sin)?);
                    }
                }
            }
        }
        ManifoldKind::FlatTorus => {
            let m = manifold.dim;
            let bound = (hi / (2.0 * PI)).floor() as i64;
            let side = (2 * bound + 1) as usize;
            let total = side.checked_pow(m as u32).ok_or_else(|| {
                Error::InvalidParameter("lattice scan too large".into())
            })?;
            // Odometer order over [-bound, bound]^m is already lexicographic.
            for idx in 0..total {
                let mut rem = idx;
                let mut n = vec![0i64; m];
                for slot in n.iter_mut().rev() {
                    *slot = (rem % side) as i64 - bound;
                    rem /= side;
                }
                let zero = n.iter().all(|&v| v == 0);
                if !zero && !lex_positive(&n) {
                    continue;
                }
                let lambda = 2.0 * PI * n.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
                if in_cluster(lambda) {
                    members.push(EigenfunctionSpec::torus(n.clone(), Parity::Cos)?);
                    if !zero {
                        members.push(EigenfunctionSpec::torus(n, Parity::Sin)?);
                    }
                }
            }
        }
        ManifoldKind::RoundSphere => {
            for l in 0..=(hi.ceil() as u32) {
                let lambda = ((l * (l + 1)) as f64).sqrt();
                if in_cluster(lambda) {
                    members.push(EigenfunctionSpec::sphere(l, 0)?);
                    for m in 1..=(l as i32) {
                        members.push(EigenfunctionSpec::sphere(l, m)?);
                        members.push(EigenfunctionSpec::sphere(l, -m)?);
                    }
                }
            }
        }
    }
    let n = members.len();
    Ok(ClusterBasis {
        manifold: *manifold,
        cluster_index: k,
        members,
        coeffs: DMatrix::identity(n, n),
    })
}
