//! Floating point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst};

/// Real scalar the toolkit computes in. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FloatConst + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal or parameter into this type.
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Default relative tolerance for the symmetric scaling iteration.
    ///
    /// `1e-12` for `f64`; a few hundred ulps for narrower types.
    fn scaling_tol() -> Self {
        Self::lit(1e-12).max(Self::epsilon() * Self::lit(256.0))
    }

    fn from_usize(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// `max` that ignores NaN on either side.
#[inline]
pub(crate) fn fmax<T: Scalar>(a: T, b: T) -> T {
    if b > a || a.is_nan() {
        b
    } else {
        a
    }
}

#[inline]
#[allow(dead_code)]
pub(crate) fn fmin<T: Scalar>(a: T, b: T) -> T {
    if b < a || a.is_nan() {
        b
    } else {
        a
    }
}

/// Least-squares slope and intercept of `ys` against `xs`.
pub(crate) fn ls_fit<T: Scalar>(xs: &[T], ys: &[T]) -> Option<(T, T)> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nn = T::from_usize(n);
    let mx = xs.iter().copied().sum::<T>() / nn;
    let my = ys.iter().copied().sum::<T>() / nn;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx = sxx + (x - mx) * (x - mx);
        sxy = sxy + (x - mx) * (y - my);
    }
    if sxx <= T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let (m, b) = ls_fit(&xs, &ys).unwrap();
        assert!((m - 2.5).abs() < 1e-14);
        assert!((b + 1.0).abs() < 1e-14);
    }

    #[test]
    fn fit_degenerate() {
        assert!(ls_fit(&[1.0f64], &[2.0]).is_none());
        assert!(ls_fit(&[1.0f64, 1.0], &[2.0, 3.0]).is_none());
    }

    #[test]
    fn f32_tolerance_is_wider() {
        assert!(f32::scaling_tol() > 1e-6);
        assert_eq!(f64::scaling_tol(), 1e-12);
    }
}
