//! Exact and closed-form oracles checked against the numerical routines.

use grauert_core::randombasis::{cluster_stream, haar_unitary, random_onb, RandomBasisConfig};
use grauert_core::spectral::{ComplexEigenfunction, EigenfunctionSpec, Parity};
use grauert_core::zeros::{Geodesic, StripFunction};
use grauert_core::{ComplexPoint, ModelManifold};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

type Q = BigRational;

fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// `P_l(a + i b)` in exact rational arithmetic, by Bonnet's recurrence on
/// (real, imaginary) pairs.
fn exact_legendre(l: u32, a: &Q, b: &Q) -> (f64, f64) {
    let mut prev = (Q::one(), Q::zero());
    if l == 0 {
        return (1.0, 0.0);
    }
    let mut cur = (a.clone(), b.clone());
    for n in 1..l {
        let n_q = Q::from_integer(BigInt::from(n));
        let two_n1 = Q::from_integer(BigInt::from(2 * n + 1));
        let n1 = Q::from_integer(BigInt::from(n + 1));
        // (a + ib) * cur
        let zr = a * &cur.0 - b * &cur.1;
        let zi = a * &cur.1 + b * &cur.0;
        let next = (
            (&two_n1 * zr - &n_q * &prev.0) / &n1,
            (&two_n1 * zi - &n_q * &prev.1) / &n1,
        );
        prev = cur;
        cur = next;
    }
    (cur.0.to_f64().unwrap(), cur.1.to_f64().unwrap())
}

fn zonal_at(f: &EigenfunctionSpec, z3: Complex64) -> Complex64 {
    let z1 = (Complex64::new(1.0, 0.0) - z3 * z3).sqrt();
    let zeta = ComplexPoint::new(&[z1, Complex64::new(0.0, 0.0), z3]);
    f.eval_scaled(&zeta).unwrap().to_complex()
}

#[test]
fn zonal_harmonics_match_exact_legendre_polynomials() {
    let args = [
        (q(0, 1), q(0, 1)),
        (q(1, 3), q(0, 1)),
        (q(-7, 10), q(0, 1)),
        (q(19, 20), q(0, 1)),
        (q(1, 2), q(1, 10)),
        (q(-1, 5), q(-3, 20)),
    ];
    for l in (0..=80u32).step_by(4).chain([1, 79]) {
        let f = EigenfunctionSpec::sphere(l, 0).unwrap();
        let c = zonal_at(&f, Complex64::new(1.0, 0.0));
        // Unit L^2 norm for surface measure.
        let c_sq = (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI);
        assert!((c.re * c.re - c_sq).abs() < 1e-12 * c_sq, "l = {l}: c = {c}");
        for (a, b) in &args {
            let (er, ei) = exact_legendre(l, a, b);
            let z3 = Complex64::new(a.to_f64().unwrap(), b.to_f64().unwrap());
            let got = zonal_at(&f, z3) / c.re;
            let scale = 1.0f64.max(er.hypot(ei));
            assert!(
                (got - Complex64::new(er, ei)).norm() <= 1e-12 * scale * (l as f64 + 1.0),
                "l = {l}, z3 = {z3}: {got} vs {er} + {ei}i"
            );
        }
    }
}

#[test]
fn strip_functions_satisfy_cauchy_riemann() {
    let sphere = EigenfunctionSpec::sphere(9, 3).unwrap();
    let circle = EigenfunctionSpec::circle(11, Parity::Cos).unwrap();
    let torus = EigenfunctionSpec::torus(vec![2, -1], Parity::Sin).unwrap();
    let cases: [(&dyn ComplexEigenfunction, Geodesic); 4] = [
        (&sphere, Geodesic::equator()),
        (&sphere, Geodesic::meridian()),
        (&circle, Geodesic::Circle),
        (
            &torus,
            Geodesic::Line {
                origin: vec![0.1, 0.2],
                direction: vec![1, 1],
            },
        ),
    ];
    for (f, g) in cases {
        let strip = StripFunction::new(f, g.clone()).unwrap();
        for w in [Complex64::new(0.3, 0.1), Complex64::new(1.7, -0.25), Complex64::new(0.05, 0.0)] {
            let r = strip.cauchy_riemann_residual(w).unwrap();
            assert!(r <= 1e-6, "{g:?} at {w}: {r}");
        }
    }
}

#[test]
fn haar_two_by_two_corner_is_uniform() {
    // |U_11|^2 of a Haar unitary in U(2) is uniform on [0, 1].
    let n = 100_000;
    let mut rng = cluster_stream(2024, 0);
    let mut samples: Vec<f64> = (0..n)
        .map(|_| haar_unitary(2, &mut rng).unwrap()[(0, 0)].norm_sqr())
        .collect();
    samples.sort_by(f64::total_cmp);
    let ks = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - x).abs()))
        .fold(0.0, f64::max);
    assert!(ks <= 0.01, "KS statistic {ks}");
}

#[test]
fn random_bases_do_not_depend_on_thread_count() {
    let cfg = RandomBasisConfig {
        seed: 77,
        cluster_range: (3, 25),
        manifold: ModelManifold::round_sphere(),
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| random_onb(&cfg).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.len(), three.len());
    for (a, b) in one.iter().zip(&three) {
        let bits = |m: &nalgebra::DMatrix<Complex64>| m.iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]).collect::<Vec<_>>();
        assert_eq!(bits(&a.coeffs), bits(&b.coeffs));
    }
}
