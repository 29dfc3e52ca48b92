//! Floating point scalar abstraction shared by every geometric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the geometry is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Absolute tolerance used to stop root solves in the angle parameter.
    const SOLVE_TOL: f64;

    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite literals and `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn two_pi() -> Self {
        Self::TAU()
    }

    /// Euclidean remainder in `[0, m)` for `m > 0`.
    #[inline]
    fn modulo(self, m: Self) -> Self {
        let r = self % m;
        let r = if r < Self::zero() { r + m } else { r };
        if r >= m {
            Self::zero()
        } else {
            r
        }
    }

    /// Reduces an angle into `[0, 2π)`.
    #[inline]
    fn wrap_angle(self) -> Self {
        // `r + tau` can round up to exactly `tau` for tiny negative inputs;
        // `modulo` folds that case back to zero.
        self.modulo(Self::TAU())
    }
}

impl Scalar for f32 {
    const SOLVE_TOL: f64 = 1e-6;
}

impl Scalar for f64 {
    const SOLVE_TOL: f64 = 1e-13;
}

/// Signed angular difference `b - a` reduced into `(-π, π]`.
pub fn angle_diff<T: Scalar>(a: T, b: T) -> T {
    let d = (b - a).wrap_angle();
    if d > T::PI() {
        d - T::TAU()
    } else {
        d
    }
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        for &a in &[-7.0f64, -1e-18, 0.0, 3.0, 6.283185307179586, 100.0] {
            let w = a.wrap_angle();
            assert!((0.0..std::f64::consts::TAU).contains(&w), "{a} -> {w}");
        }
    }

    #[test]
    fn angle_diff_is_short_way() {
        let d = angle_diff(0.1f64, std::f64::consts::TAU - 0.1);
        assert!((d + 0.2).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }
}
