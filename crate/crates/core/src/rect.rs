//! Oriented rectangles: sector footprints, target regions and zonotope generators.

use crate::scalar::Scalar;
use crate::vec2::Vec2;

/// Rectangle centered at `center` with orthonormal axes `axes[0]`, `axes[1]`
/// and half extents `half[0]`, `half[1]` along them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect<T> {
    pub center: Vec2<T>,
    pub axes: [Vec2<T>; 2],
    pub half: [T; 2],
}

impl<T: Scalar> OrientedRect<T> {
    /// `axis` is normalized; the second axis is its +90° rotation.
    pub fn new(center: Vec2<T>, axis: Vec2<T>, half_along: T, half_across: T) -> Self {
        let u = axis.normalized();
        OrientedRect {
            center,
            axes: [u, u.perp()],
            half: [half_along, half_across],
        }
    }

    pub fn axis_aligned(center: Vec2<T>, half_x: T, half_y: T) -> Self {
        OrientedRect {
            center,
            axes: [
                Vec2::new(T::one(), T::zero()),
                Vec2::new(T::zero(), T::one()),
            ],
            half: [half_x, half_y],
        }
    }

    /// Half-extent side vectors.
    pub fn generators(&self) -> [Vec2<T>; 2] {
        [self.axes[0] * self.half[0], self.axes[1] * self.half[1]]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vec2<T>; 4] {
        let [g0, g1] = self.generators();
        let c = self.center;
        [c - g0 - g1, c + g0 - g1, c + g0 + g1, c - g0 + g1]
    }

    pub fn area(&self) -> T {
        T::lit(4.0) * self.half[0] * self.half[1]
    }

    /// Local coordinates of `p` along the two axes.
    pub fn local(&self, p: Vec2<T>) -> (T, T) {
        let d = p - self.center;
        (d.dot(self.axes[0]), d.dot(self.axes[1]))
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        let (u, v) = self.local(p);
        u.abs() <= self.half[0] && v.abs() <= self.half[1]
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance(&self, p: Vec2<T>) -> T {
        let (u, v) = self.local(p);
        let du = (u.abs() - self.half[0]).max(T::zero());
        let dv = (v.abs() - self.half[1]).max(T::zero());
        du.hypot(dv)
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn bbox_half(&self) -> Vec2<T> {
        let [g0, g1] = self.generators();
        Vec2::new(g0.x.abs() + g1.x.abs(), g0.y.abs() + g1.y.abs())
    }

    pub fn translated(&self, d: Vec2<T>) -> Self {
        OrientedRect {
            center: self.center + d,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_and_containment() {
        let r = OrientedRect::<f64>::new(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0), 1.0, 0.5);
        for c in r.corners() {
            assert!(r.distance(c) < 1e-12);
        }
        assert!(r.contains(Vec2::new(1.0, 1.0)));
        assert!(!r.contains(Vec2::new(3.0, 1.0)));
        assert!((r.area() - 2.0).abs() < 1e-12);
        let d = r.distance(Vec2::new(1.0 + 2f64.sqrt(), 1.0 + 2f64.sqrt()));
        assert!((d - 1.0).abs() < 1e-12);
    }
}
