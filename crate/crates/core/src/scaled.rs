//! Complex numbers carried as `mantissa * exp(log_scale)`.
//!
//! Continued eigenfunctions grow like `exp(lambda |xi|)`, which leaves the
//! double range once `lambda |xi|` passes roughly 700. Everything downstream
//! only needs ratios and logarithms, so values are kept in this split form and
//! combined with log-sum-exp style rescaling.

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledComplex {
    pub mantissa: Complex64,
    pub log_scale: f64,
}

impl ScaledComplex {
    pub const ZERO: ScaledComplex = ScaledComplex {
        mantissa: Complex64::new(0.0, 0.0),
        log_scale: 0.0,
    };

    pub fn new(mantissa: Complex64, log_scale: f64) -> Self {
        Self {
            mantissa,
            log_scale,
        }
        .normalized()
    }

    pub fn from_complex(z: Complex64) -> Self {
        Self::new(z, 0.0)
    }

    /// `exp(w)` without ever forming the exponential of the real part.
    pub fn exp(w: Complex64) -> Self {
        Self {
            mantissa: Complex64::from_polar(1.0, w.im),
            log_scale: w.re,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.re == 0.0 && self.mantissa.im == 0.0
    }

    /// Moves the magnitude of the mantissa into the exponent so that
    /// `|mantissa|` is 1 (or the value is an exact zero).
    pub fn normalized(self) -> Self {
        let m = self.mantissa.norm();
        if m == 0.0 || !m.is_finite() {
            if m == 0.0 {
                return Self::ZERO;
            }
            return self;
        }
        Self {
            mantissa: self.mantissa / m,
            log_scale: self.log_scale + m.ln(),
        }
    }

    /// Plain complex value; overflows to infinity when the scale is too large.
    pub fn to_complex(&self) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        self.mantissa * self.log_scale.exp()
    }

    /// `ln |z|`, `-inf` for zero.
    pub fn ln_abs(&self) -> f64 {
        let m = self.mantissa.norm();
        if m == 0.0 {
            f64::NEG_INFINITY
        } else {
            m.ln() + self.log_scale
        }
    }

    pub fn ln_norm_sqr(&self) -> f64 {
        2.0 * self.ln_abs()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self::new(self.mantissa * c, self.log_scale)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(self.mantissa * other.mantissa, self.log_scale + other.log_scale)
    }

    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return *other;
        }
        if other.is_zero() {
            return *self;
        }
        let top = self.log_scale.max(other.log_scale);
        let m = self.mantissa * (self.log_scale - top).exp()
            + other.mantissa * (other.log_scale - top).exp();
        Self::new(m, top)
    }

    /// `self / exp(log_divisor)` as a plain complex number.
    pub fn ratio_to(&self, log_divisor: f64) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        self.mantissa * (self.log_scale - log_divisor).exp()
    }
}

/// `sum_i coeffs[i] * values[i]` with a common rescaling.
pub fn scaled_dot(coeffs: &[Complex64], values: &[ScaledComplex]) -> ScaledComplex {
    let top = values
        .iter()
        .filter(|v| !v.is_zero())
        .map(|v| v.log_scale)
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return ScaledComplex::ZERO;
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (c, v) in coeffs.iter().zip(values) {
        if !v.is_zero() {
            acc += c * v.mantissa * (v.log_scale - top).exp();
        }
    }
    ScaledComplex::new(acc, top)
}

/// Numerically stable `ln(sum exp(terms))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(terms: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let top = terms.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let s: f64 = terms.into_iter().map(|t| (t - top).exp()).sum();
    top + s.ln()
}
