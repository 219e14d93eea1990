//! Boundary-integral kernel functions evaluated at collocation points.

use num_complex::Complex64;

use crate::error::{H2Error, Result};
use crate::geometry::{distance, Point3};
use crate::scalar::Scalar;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// A kernel `g(x, y)` producing values in the field `T`.
///
/// `evaluate` is only defined for `x != y`; see [`kernel_eval`] for the checked form.
pub trait Kernel<T: Scalar>: Sync + Send {
    fn evaluate(&self, x: &Point3, y: &Point3) -> T;
    fn name(&self) -> &'static str;
}

/// `1 / (4 pi |x - y|)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Laplace3d;

/// `exp(i kappa |x - y|) / (4 pi |x - y|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Helmholtz3d {
    pub kappa: f64,
}

impl Default for Helmholtz3d {
    fn default() -> Self {
        Self { kappa: 1.0 }
    }
}

impl Kernel<f64> for Laplace3d {
    #[inline]
    fn evaluate(&self, x: &Point3, y: &Point3) -> f64 {
        1.0 / (FOUR_PI * distance(x, y))
    }
    fn name(&self) -> &'static str {
        "laplace"
    }
}

impl Kernel<Complex64> for Laplace3d {
    #[inline]
    fn evaluate(&self, x: &Point3, y: &Point3) -> Complex64 {
        Complex64::new(Kernel::<f64>::evaluate(self, x, y), 0.0)
    }
    fn name(&self) -> &'static str {
        "laplace"
    }
}

impl Kernel<Complex64> for Helmholtz3d {
    #[inline]
    fn evaluate(&self, x: &Point3, y: &Point3) -> Complex64 {
        let r = distance(x, y);
        let (s, c) = (self.kappa * r).sin_cos();
        Complex64::new(c, s) / (FOUR_PI * r)
    }
    fn name(&self) -> &'static str {
        "helmholtz"
    }
}

/// Checked kernel evaluation; coincident points are a singular evaluation.
pub fn kernel_eval<T: Scalar, K: Kernel<T> + ?Sized>(k: &K, x: &Point3, y: &Point3) -> Result<T> {
    if x == y {
        return Err(H2Error::SingularKernel);
    }
    Ok(k.evaluate(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_at_unit_distance() {
        let v: f64 = kernel_eval(&Laplace3d, &[0.0; 3], &[0.0, 1.0, 0.0]).unwrap();
        assert!((v - 0.0795774715459476).abs() < 1e-15);
    }

    #[test]
    fn helmholtz_at_unit_distance() {
        let v: Complex64 = kernel_eval(&Helmholtz3d { kappa: 1.0 }, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert!((v.re - 1.0_f64.cos() / FOUR_PI).abs() < 1e-16);
        assert!((v.im - 1.0_f64.sin() / FOUR_PI).abs() < 1e-16);
        assert!((v.re - 0.0429959).abs() < 1e-7);
        assert!((v.im - 0.0669621).abs() < 1e-7);
    }

    #[test]
    fn helmholtz_modulus_and_zero_wavenumber() {
        let x = [0.3, -0.2, 0.9];
        let y = [-1.0, 0.5, 0.1];
        let h: Complex64 = Helmholtz3d { kappa: 2.5 }.evaluate(&x, &y);
        let l: f64 = Laplace3d.evaluate(&x, &y);
        assert!((h.norm() - l).abs() < 1e-16);
        let h0: Complex64 = Helmholtz3d { kappa: 0.0 }.evaluate(&x, &y);
        assert_eq!(h0, Complex64::new(l, 0.0));
    }

    #[test]
    fn coincident_points_are_singular() {
        let r: Result<f64> = kernel_eval(&Laplace3d, &[1.0; 3], &[1.0; 3]);
        assert!(matches!(r, Err(H2Error::SingularKernel)));
    }
}
