use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::scalar::Scalar;

/// A 2-vector in momentum space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Vec2::new(T::zero(), T::zero())
    }

    /// Unit vector at angle `a`.
    #[inline]
    pub fn from_angle(a: T) -> Self {
        let (s, c) = a.sin_cos();
        Vec2::new(c, s)
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn angle(self) -> T {
        self.y.atan2(self.x)
    }

    /// Rotation by +90°.
    #[inline]
    pub fn perp(self) -> Self {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    #[inline]
    pub fn rotated(self, a: T) -> Self {
        let (s, c) = a.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    #[inline]
    pub fn cast<U: Scalar>(self) -> Vec2<U> {
        Vec2::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()))
    }

    #[inline]
    pub fn to_f64(self) -> Vec2<f64> {
        Vec2::new(self.x.as_f64(), self.y.as_f64())
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> AddAssign for Vec2<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x = self.x + o.x;
        self.y = self.y + o.y;
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> SubAssign for Vec2<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.x = self.x - o.x;
        self.y = self.y - o.y;
    }
}

impl<T: Scalar> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec2::new(-self.x, -self.y)
    }
}

impl<T: Scalar> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl<T: Scalar> std::iter::Sum for Vec2<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Vec2::zero(), |a, b| a + b)
    }
}
