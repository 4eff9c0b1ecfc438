//! Haar-random unitary rotations of spectral clusters.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ModelManifold;
use crate::spectral::{enumerate_cluster, ClusterBasis};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomBasisConfig {
    pub seed: u64,
    /// Inclusive `[k_min, k_max]`.
    pub cluster_range: (u32, u32),
    pub manifold: ModelManifold,
}

/// The generator for cluster `k`: ChaCha20 keyed by `seed`, stream `k`.
pub fn cluster_stream(seed: u64, k: u32) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Haar-distributed `n x n` unitary: complex Ginibre matrix, QR, then the
/// columns of Q rotated so that diag(R) is real positive.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DMatrix<Complex64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("unitary dimension must be >= 1".into()));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let g = DMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    Ok(q)
}

/// `coeffs <- u * coeffs`.
pub fn rotate_cluster(cb: &ClusterBasis, u: &DMatrix<Complex64>) -> Result<ClusterBasis> {
    let n = cb.len();
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: u.nrows().max(u.ncols()),
        });
    }
    Ok(ClusterBasis {
        coeffs: u * &cb.coeffs,
        ..cb.clone()
    })
}

/// One independently rotated cluster per non-empty `k` in the range, in
/// increasing `k`.
pub fn random_onb(cfg: &RandomBasisConfig) -> Result<Vec<ClusterBasis>> {
    let (lo, hi) = cfg.cluster_range;
    if lo > hi {
        return Err(Error::InvalidParameter(format!("cluster range [{lo}, {hi}] is empty")));
    }
    if !cfg.manifold.is_spectral() {
        return Err(Error::NotSpectral(cfg.manifold.kind));
    }
    let sampled: Vec<Option<ClusterBasis>> = (lo..=hi)
        .into_par_iter()
        .map(|k| {
            let cb = enumerate_cluster(&cfg.manifold, k)?;
            if cb.is_empty() {
                return Ok(None);
            }
            let u = haar_unitary(cb.len(), &mut cluster_stream(cfg.seed, k))?;
            rotate_cluster(&cb, &u).map(Some)
        })
        .collect::<Result<_>>()?;
    Ok(sampled.into_iter().flatten().collect())
}
