//! Field abstraction over real and complex double precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;

/// Scalar field `K` of a matrix: `f64` (Laplace) or `Complex64` (Helmholtz).
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + Display
    + PartialEq
    + Default
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    const IS_COMPLEX: bool;
    /// Short name used in CSV output and diagnostics.
    const NAME: &'static str;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_real(re: f64) -> Self;
    fn conj(self) -> Self;
    fn re(self) -> f64;
    fn im(self) -> f64;
    /// `|a|^2 = a * conj(a)`.
    fn abs2(self) -> f64;
    fn scale(self, factor: f64) -> Self;

    fn abs(self) -> f64 {
        self.abs2().sqrt()
    }

    fn is_finite(self) -> bool {
        self.re().is_finite() && self.im().is_finite()
    }

    /// Raw little-endian bytes, used for reproducibility hashes.
    fn to_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re().to_le_bytes());
        if Self::IS_COMPLEX {
            out.extend_from_slice(&self.im().to_le_bytes());
        }
    }
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;
    const NAME: &'static str = "f64";

    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn from_real(re: f64) -> Self {
        re
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn im(self) -> f64 {
        0.0
    }
    #[inline]
    fn abs2(self) -> f64 {
        self * self
    }
    #[inline]
    fn scale(self, factor: f64) -> Self {
        self * factor
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
}

impl Scalar for Complex64 {
    const IS_COMPLEX: bool = true;
    const NAME: &'static str = "c64";

    #[inline]
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    #[inline]
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    #[inline]
    fn from_real(re: f64) -> Self {
        Complex64::new(re, 0.0)
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn im(self) -> f64 {
        self.im
    }
    #[inline]
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    #[inline]
    fn scale(self, factor: f64) -> Self {
        Complex64::new(self.re * factor, self.im * factor)
    }
    #[inline]
    fn abs(self) -> f64 {
        self.norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugation_is_an_involution() {
        let a = Complex64::new(1.5, -2.25);
        assert_eq!(Scalar::conj(Scalar::conj(a)), a);
        assert_eq!(Scalar::conj(3.0_f64), 3.0);
    }

    #[test]
    fn abs2_is_real_and_nonnegative() {
        let a = Complex64::new(3.0, -4.0);
        let prod = a * Scalar::conj(a);
        assert_eq!(prod.im, 0.0);
        assert_eq!(a.abs2(), prod.re);
        assert_eq!(Scalar::abs(a), 5.0);
        assert_eq!((-2.0_f64).abs2(), 4.0);
    }
}
