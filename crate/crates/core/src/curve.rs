//! Strictly convex closed planar curves given by a radial profile about the origin.
//!
//! A curve is `φ ↦ r(φ)(cos φ, sin φ)` with `r > 0`. It is oriented
//! counter-clockwise, so the inward normal is the tangent rotated by +90°.
//! Everything except construction is a pure read of immutable data; a
//! [`FermiCurve`] is cheap to clone and safe to share between threads.

use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::vec2::Vec2;

/// Default number of grid samples for the cached tables.
pub const DEFAULT_SAMPLES: usize = 4096;

const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("invalid curve spec: {0}")]
    InvalidSpec(String),
    #[error("radius {radius} is not positive at phi = {phi}")]
    NonPositiveRadius { phi: f64, radius: f64 },
    #[error("curve is not strictly convex: curvature {kappa} at phi = {phi}")]
    NonConvex { phi: f64, kappa: f64 },
    #[error("root solve did not converge at phi = {phi}")]
    ConvergenceFailure { phi: f64 },
    #[error("|s| = {s} is outside the local chart of half-width {limit}")]
    OutOfChart { s: f64, limit: f64 },
    #[error("dispersion is singular at the origin")]
    OriginSingular,
}

/// One term `a cos(mφ) + b sin(mφ)` of a radial series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic<T> {
    pub order: u32,
    pub cos: T,
    pub sin: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurveFamily<T> {
    Circle {
        radius: T,
    },
    /// Centered ellipse with semi-axis `a` along x and `b` along y.
    Ellipse {
        a: T,
        b: T,
    },
    RadialSeries {
        r0: T,
        terms: Vec<Harmonic<T>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSpec<T> {
    pub family: CurveFamily<T>,
    pub sample_count: usize,
}

impl<T: Scalar> CurveSpec<T> {
    pub fn circle(radius: f64) -> Self {
        Self::from_family(CurveFamily::Circle {
            radius: T::lit(radius),
        })
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        Self::from_family(CurveFamily::Ellipse {
            a: T::lit(a),
            b: T::lit(b),
        })
    }

    /// `terms` are `(m, aₘ, bₘ)` triples.
    pub fn radial_series(r0: f64, terms: &[(u32, f64, f64)]) -> Self {
        let mut terms: Vec<_> = terms
            .iter()
            .map(|&(order, a, b)| Harmonic {
                order,
                cos: T::lit(a),
                sin: T::lit(b),
            })
            .collect();
        terms.sort_by_key(|h| h.order);
        Self::from_family(CurveFamily::RadialSeries {
            r0: T::lit(r0),
            terms,
        })
    }

    pub fn from_family(family: CurveFamily<T>) -> Self {
        CurveSpec {
            family,
            sample_count: DEFAULT_SAMPLES,
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.sample_count = n;
        self
    }

    fn check(&self) -> Result<(), CurveError> {
        if self.sample_count < DEFAULT_SAMPLES {
            return Err(CurveError::InvalidSpec(format!(
                "sample_count {} is below {DEFAULT_SAMPLES}",
                self.sample_count
            )));
        }
        let finite = |v: T| v.is_finite();
        match &self.family {
            CurveFamily::Circle { radius } if !finite(*radius) || *radius <= T::zero() => Err(
                CurveError::InvalidSpec(format!("circle radius {radius} must be positive")),
            ),
            CurveFamily::Ellipse { a, b }
                if !finite(*a) || !finite(*b) || *a <= T::zero() || *b <= T::zero() =>
            {
                Err(CurveError::InvalidSpec(format!(
                    "ellipse semi-axes ({a}, {b}) must be positive"
                )))
            }
            CurveFamily::RadialSeries { r0, terms } => {
                if !finite(*r0) || terms.iter().any(|h| !finite(h.cos) || !finite(h.sin)) {
                    return Err(CurveError::InvalidSpec("non-finite coefficient".into()));
                }
                if terms.iter().any(|h| h.order == 0) {
                    return Err(CurveError::InvalidSpec(
                        "harmonic order 0 belongs in r0".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `(r, r′, r″)` at `phi`.
    pub fn radial(&self, phi: T) -> (T, T, T) {
        match &self.family {
            CurveFamily::Circle { radius } => (*radius, T::zero(), T::zero()),
            CurveFamily::Ellipse { a, b } => {
                let (s, c) = phi.sin_cos();
                let (s2, c2) = (phi + phi).sin_cos();
                let (a2, b2) = (*a * *a, *b * *b);
                let g = b2 * c * c + a2 * s * s;
                let g1 = (a2 - b2) * s2;
                let g2 = T::lit(2.0) * (a2 - b2) * c2;
                let ab = *a * *b;
                let gm12 = T::one() / g.sqrt();
                let gm32 = gm12 / g;
                let gm52 = gm32 / g;
                let r = ab * gm12;
                let r1 = -T::lit(0.5) * ab * gm32 * g1;
                let r2 = ab * (T::lit(0.75) * gm52 * g1 * g1 - T::lit(0.5) * gm32 * g2);
                (r, r1, r2)
            }
            CurveFamily::RadialSeries { r0, terms } => {
                let (mut r, mut r1, mut r2) = (*r0, T::zero(), T::zero());
                for h in terms {
                    let m = T::lit(h.order as f64);
                    let (s, c) = (m * phi).sin_cos();
                    let even = h.cos * c + h.sin * s;
                    r = r + even;
                    r1 = r1 + m * (h.sin * c - h.cos * s);
                    r2 = r2 - m * m * even;
                }
                (r, r1, r2)
            }
        }
    }

    /// `r` in the direction of the unit vector `u`, without trigonometric calls.
    pub fn radius_toward(&self, u: Vec2<T>) -> T {
        match &self.family {
            CurveFamily::Circle { radius } => *radius,
            CurveFamily::Ellipse { a, b } => {
                let g = *b * *b * u.x * u.x + *a * *a * u.y * u.y;
                *a * *b / g.sqrt()
            }
            CurveFamily::RadialSeries { r0, terms } => {
                // (cos mφ, sin mφ) is the m-th complex power of (cos φ, sin φ).
                let mut r = *r0;
                let (mut pc, mut ps) = (T::one(), T::zero());
                let mut power = 0;
                for h in terms {
                    while power < h.order {
                        let nc = pc * u.x - ps * u.y;
                        ps = pc * u.y + ps * u.x;
                        pc = nc;
                        power += 1;
                    }
                    r = r + h.cos * pc + h.sin * ps;
                }
                r
            }
        }
    }

    pub fn is_circle(&self) -> bool {
        match &self.family {
            CurveFamily::Circle { .. } => true,
            CurveFamily::Ellipse { a, b } => a == b,
            CurveFamily::RadialSeries { terms, .. } => terms
                .iter()
                .all(|h| h.cos == T::zero() && h.sin == T::zero()),
        }
    }
}

/// Curvature of a polar curve from `(r, r′, r″)`.
#[inline]
pub fn polar_curvature<T: Scalar>(r: T, r1: T, r2: T) -> T {
    let q = r * r + r1 * r1;
    (q + r1 * r1 - r * r2) / (q * q.sqrt())
}

/// Local frame and differential data at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint<T> {
    pub phi: T,
    pub position: Vec2<T>,
    pub tangent: Vec2<T>,
    /// Inward unit normal.
    pub normal: Vec2<T>,
    pub curvature: T,
    /// Arc length from `φ = 0`.
    pub arclen: T,
    /// Tangent angle, continuous and strictly increasing on `[0, 2π)`.
    pub tangent_angle: T,
}

#[derive(Debug)]
struct CurveData<T> {
    spec: CurveSpec<T>,
    step: T,
    cum_arclen: Vec<T>,
    psi_nodes: Vec<T>,
    length: T,
    kappa_min: T,
    kappa_min_phi: T,
    kappa_max: T,
    r_min: T,
    r_max: T,
}

/// A validated strictly convex curve with cached arc-length and tangent-angle tables.
#[derive(Debug, Clone)]
pub struct FermiCurve<T> {
    data: Arc<CurveData<T>>,
}

/// Validates `spec` and builds the cached tables.
pub fn make_curve<T: Scalar>(spec: CurveSpec<T>) -> Result<FermiCurve<T>, CurveError> {
    FermiCurve::new(spec)
}

impl<T: Scalar> FermiCurve<T> {
    pub fn new(spec: CurveSpec<T>) -> Result<Self, CurveError> {
        spec.check()?;
        let n = spec.sample_count;
        let step = T::two_pi() / T::lit(n as f64);

        let mut kappas = Vec::with_capacity(n);
        let (mut r_min, mut r_max) = (T::infinity(), T::zero());
        for i in 0..n {
            let phi = step * T::lit(i as f64);
            let (r, r1, r2) = spec.radial(phi);
            if !(r > T::zero()) {
                return Err(CurveError::NonPositiveRadius {
                    phi: phi.as_f64(),
                    radius: r.as_f64(),
                });
            }
            let k = polar_curvature(r, r1, r2);
            if !(k > T::zero()) {
                return Err(CurveError::NonConvex {
                    phi: phi.as_f64(),
                    kappa: k.as_f64(),
                });
            }
            r_min = r_min.min(r);
            r_max = r_max.max(r);
            kappas.push(k);
        }

        let mut data = CurveData {
            spec,
            step,
            cum_arclen: Vec::with_capacity(n + 1),
            psi_nodes: Vec::with_capacity(n + 1),
            length: T::zero(),
            kappa_min: T::zero(),
            kappa_min_phi: T::zero(),
            kappa_max: T::zero(),
            r_min,
            r_max,
        };

        let mut acc = T::zero();
        data.cum_arclen.push(acc);
        for i in 0..n {
            let a = step * T::lit(i as f64);
            acc = acc + gauss_speed(&data.spec, a, a + step);
            data.cum_arclen.push(acc);
        }
        data.length = acc;
        for i in 0..=n {
            let phi = step * T::lit(i as f64);
            data.psi_nodes.push(lifted_psi(&data.spec, phi));
        }

        let (kmin, kmin_phi) = refine_extremum(&data.spec, &kappas, step, true);
        let (kmax, _) = refine_extremum(&data.spec, &kappas, step, false);
        data.kappa_min = kmin;
        data.kappa_min_phi = kmin_phi;
        data.kappa_max = kmax;
        if !(kmin > T::zero()) {
            return Err(CurveError::NonConvex {
                phi: kmin_phi.as_f64(),
                kappa: kmin.as_f64(),
            });
        }

        Ok(FermiCurve {
            data: Arc::new(data),
        })
    }

    pub fn spec(&self) -> &CurveSpec<T> {
        &self.data.spec
    }

    /// Total length ℓ.
    pub fn length(&self) -> T {
        self.data.length
    }

    pub fn kappa_min(&self) -> T {
        self.data.kappa_min
    }

    pub fn kappa_min_phi(&self) -> T {
        self.data.kappa_min_phi
    }

    pub fn kappa_max(&self) -> T {
        self.data.kappa_max
    }

    pub fn r_min(&self) -> T {
        self.data.r_min
    }

    pub fn r_max(&self) -> T {
        self.data.r_max
    }

    pub fn sample_count(&self) -> usize {
        self.data.spec.sample_count
    }

    /// Grid angle of sample `i`.
    pub fn grid_phi(&self, i: usize) -> T {
        self.data.step * T::lit(i as f64)
    }

    #[inline]
    pub fn radial(&self, phi: T) -> (T, T, T) {
        self.data.spec.radial(phi)
    }

    #[inline]
    pub fn position(&self, phi: T) -> Vec2<T> {
        let r = self.data.spec.radial(phi).0;
        Vec2::from_angle(phi) * r
    }

    /// `dP/dφ`.
    #[inline]
    pub fn velocity(&self, phi: T) -> Vec2<T> {
        let (r, r1, _) = self.data.spec.radial(phi);
        let (s, c) = phi.sin_cos();
        Vec2::new(r1 * c - r * s, r1 * s + r * c)
    }

    /// `ds/dφ`.
    #[inline]
    pub fn speed(&self, phi: T) -> T {
        let (r, r1, _) = self.data.spec.radial(phi);
        r.hypot(r1)
    }

    #[inline]
    pub fn tangent(&self, phi: T) -> Vec2<T> {
        self.velocity(phi).normalized()
    }

    #[inline]
    pub fn normal(&self, phi: T) -> Vec2<T> {
        self.tangent(phi).perp()
    }

    #[inline]
    pub fn curvature(&self, phi: T) -> T {
        let (r, r1, r2) = self.data.spec.radial(phi);
        polar_curvature(r, r1, r2)
    }

    /// Lifted tangent angle ψ(φ) for φ reduced into `[0, 2π)`.
    #[inline]
    pub fn tangent_angle(&self, phi: T) -> T {
        lifted_psi(&self.data.spec, phi.wrap_angle())
    }

    pub fn point_at(&self, phi: T) -> CurvePoint<T> {
        let phi = phi.wrap_angle();
        let (r, r1, r2) = self.data.spec.radial(phi);
        let (s, c) = phi.sin_cos();
        let vel = Vec2::new(r1 * c - r * s, r1 * s + r * c);
        let tangent = vel.normalized();
        CurvePoint {
            phi,
            position: Vec2::new(c, s) * r,
            tangent,
            normal: tangent.perp(),
            curvature: polar_curvature(r, r1, r2),
            arclen: self.arclen_at(phi),
            tangent_angle: phi + r.atan2(r1),
        }
    }

    /// Arc length from `φ = 0` to `phi` (counter-clockwise), in `[0, ℓ)`.
    pub fn arclen_at(&self, phi: T) -> T {
        let d = &self.data;
        let phi = phi.wrap_angle();
        let n = d.cum_arclen.len() - 1;
        let i = ((phi / d.step).floor().to_usize().unwrap_or(0)).min(n - 1);
        let a = d.step * T::lit(i as f64);
        d.cum_arclen[i] + gauss_speed(&d.spec, a, phi)
    }

    /// Counter-clockwise arc length from `phi1` to `phi2`, in `[0, ℓ)`.
    pub fn arclen_between(&self, phi1: T, phi2: T) -> T {
        let l = self.data.length;
        let mut d = self.arclen_at(phi2) - self.arclen_at(phi1);
        if d < T::zero() {
            d = d + l;
        }
        if d >= l {
            d = d - l;
        }
        d
    }

    /// Intrinsic (shorter-arc) distance between two points of the curve.
    pub fn arc_distance(&self, phi1: T, phi2: T) -> T {
        let f = self.arclen_between(phi1, phi2);
        f.min(self.data.length - f)
    }

    /// Reduces an arc-length coordinate into `[0, ℓ)`.
    pub fn wrap_arclen(&self, s: T) -> T {
        let l = self.data.length;
        let r = s % l;
        let r = if r < T::zero() { r + l } else { r };
        if r >= l {
            T::zero()
        } else {
            r
        }
    }

    /// Inverse of [`arclen_at`](Self::arclen_at).
    pub fn phi_at_arclen(&self, s: T) -> T {
        let d = &self.data;
        let s = self.wrap_arclen(s);
        let n = d.cum_arclen.len() - 1;
        // largest i with cum[i] <= s
        let i = match d
            .cum_arclen
            .binary_search_by(|v| v.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 1),
            Err(i) => (i - 1).min(n - 1),
        };
        let lo = d.step * T::lit(i as f64);
        let hi = lo + d.step;
        let base = d.cum_arclen[i];
        let cell = d.cum_arclen[i + 1] - base;
        let mut phi = lo + (s - base) / cell * d.step;
        let tol = T::lit(T::SOLVE_TOL) * d.length.max(T::one()) * T::lit(1e-2);
        for _ in 0..8 {
            let f = base + gauss_speed(&d.spec, lo, phi) - s;
            if f.abs() <= tol {
                break;
            }
            phi = (phi - f / self.speed(phi)).max(lo).min(hi);
        }
        phi.wrap_angle()
    }

    /// Unique antipodal parameter: the point whose tangent is anti-parallel to the tangent at `phi`.
    pub fn antipodal(&self, phi: T) -> Result<T, CurveError> {
        let d = &self.data;
        let tau = T::two_pi();
        let psi0 = d.psi_nodes[0];
        let mut target = self.tangent_angle(phi) + T::PI();
        while target >= psi0 + tau {
            target = target - tau;
        }
        while target < psi0 {
            target = target + tau;
        }
        let n = d.psi_nodes.len() - 1;
        let i = match d
            .psi_nodes
            .binary_search_by(|v| v.partial_cmp(&target).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 1),
            Err(i) => (i.max(1) - 1).min(n - 1),
        };
        let lo = d.step * T::lit(i as f64);
        let hi = lo + d.step;
        let frac = (target - d.psi_nodes[i]) / (d.psi_nodes[i + 1] - d.psi_nodes[i]);
        let guess = lo + frac * d.step;
        let x = bracketed_newton(
            |x| {
                let (r, r1, r2) = d.spec.radial(x);
                let q = r * r + r1 * r1;
                (x + r.atan2(r1) - target, (q + r1 * r1 - r * r2) / q)
            },
            lo,
            hi,
            guess,
            T::lit(T::SOLVE_TOL),
        )
        .ok_or(CurveError::ConvergenceFailure { phi: phi.as_f64() })?;
        Ok(x.wrap_angle())
    }

    /// Half-width of the local chart used by [`local_graph`](Self::local_graph).
    pub fn chart_radius(&self) -> T {
        T::lit(0.1) / self.data.kappa_max
    }

    /// Offset `x = φ_k(s)` along the inward normal such that `k + s t_k + x n_k`
    /// lies on the curve, where `k` is the point at `phi`.
    pub fn local_graph(&self, phi: T, s: T) -> Result<T, CurveError> {
        let limit = self.chart_radius();
        if s.abs() > limit {
            return Err(CurveError::OutOfChart {
                s: s.as_f64(),
                limit: limit.as_f64(),
            });
        }
        if s == T::zero() {
            return Ok(T::zero());
        }
        let phi = phi.wrap_angle();
        let k = self.position(phi);
        let t = self.tangent(phi);
        let n = t.perp();
        let step = s / self.speed(phi);
        // Tangential coordinate increases along the chart; find a bracket on the side of `s`.
        let f = |x: T| ((self.position(x) - k).dot(t) - s, self.velocity(x).dot(t));
        let mut far = phi + step * T::lit(1.5);
        for _ in 0..30 {
            if (f(far).0 > T::zero()) == (s > T::zero()) {
                break;
            }
            far = phi + (far - phi) * T::lit(2.0);
        }
        let (lo, hi) = if s > T::zero() {
            (phi, far)
        } else {
            (far, phi)
        };
        let x = bracketed_newton(f, lo, hi, phi + step, T::lit(T::SOLVE_TOL) * limit)
            .ok_or(CurveError::ConvergenceFailure { phi: phi.as_f64() })?;
        Ok((self.position(x) - k).dot(n))
    }

    /// `|k| − r(arg k)`: negative inside, zero on, positive outside the curve.
    pub fn dispersion(&self, k: Vec2<T>) -> Result<T, CurveError> {
        let norm = k.norm();
        if norm == T::zero() {
            return Err(CurveError::OriginSingular);
        }
        Ok(norm - self.data.spec.radius_toward(k * (T::one() / norm)))
    }

    /// Parameter of the nearest point of the curve to `k` (orthogonal projection).
    ///
    /// Intended for points within a fraction of the minimal curvature radius of the curve.
    pub fn nearest_phi(&self, k: Vec2<T>) -> T {
        let guess = if k.norm() > T::zero() {
            k.angle()
        } else {
            T::zero()
        };
        let dist2 = |x: T| (self.position(x) - k).norm_sq();
        // coarse search around the radial guess
        let span = T::lit(0.5);
        let m = 32;
        let mut best = guess;
        let mut best_d = dist2(guess);
        for i in 0..=m {
            let x = guess - span + span * T::lit(2.0 * i as f64 / m as f64);
            let dd = dist2(x);
            if dd < best_d {
                best_d = dd;
                best = x;
            }
        }
        let h = span * T::lit(2.0 / m as f64);
        let (lo, hi) = (best - h, best + h);
        let mut x = best;
        for _ in 0..40 {
            let (r, r1, r2) = self.data.spec.radial(x);
            let (s, c) = x.sin_cos();
            let p = Vec2::new(c, s) * r;
            let v = Vec2::new(r1 * c - r * s, r1 * s + r * c);
            let a = Vec2::new(
                (r2 - r) * c - T::lit(2.0) * r1 * s,
                (r2 - r) * s + T::lit(2.0) * r1 * c,
            );
            let g = (p - k).dot(v);
            let dg = v.norm_sq() + (p - k).dot(a);
            if dg <= T::zero() {
                break;
            }
            let nx = (x - g / dg).max(lo).min(hi);
            if (nx - x).abs() <= T::lit(T::SOLVE_TOL) {
                x = nx;
                break;
            }
            x = nx;
        }
        x.wrap_angle()
    }

    /// `sup_φ |r(φ + π) − r(φ)|` over the sample grid.
    pub fn central_residual(&self) -> T {
        let n = self.sample_count();
        (0..n)
            .map(|i| {
                let phi = self.grid_phi(i);
                (self.radial(phi + T::PI()).0 - self.radial(phi).0).abs()
            })
            .fold(T::zero(), T::max)
    }

    /// Radial residual tolerance used for symmetry detection.
    pub fn symmetry_tol(&self) -> T {
        T::lit(1e-9).max(T::epsilon() * T::lit(64.0) * self.data.r_max)
    }

    pub fn is_centrally_symmetric(&self) -> bool {
        self.central_residual() < self.symmetry_tol()
    }
}

fn lifted_psi<T: Scalar>(spec: &CurveSpec<T>, phi: T) -> T {
    let (r, r1, _) = spec.radial(phi);
    phi + r.atan2(r1)
}

fn gauss_speed<T: Scalar>(spec: &CurveSpec<T>, a: T, b: T) -> T {
    if a == b {
        return T::zero();
    }
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    let mut acc = T::zero();
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
        let (r, r1, _) = spec.radial(mid + half * T::lit(*x));
        acc = acc + T::lit(*w) * r.hypot(r1);
    }
    acc * half
}

/// Root of an increasing function on `[lo, hi]`; `f` returns value and derivative.
/// Newton steps that leave the bracket fall back to bisection.
pub(crate) fn bracketed_newton<T: Scalar>(
    f: impl Fn(T) -> (T, T),
    mut lo: T,
    mut hi: T,
    guess: T,
    tol: T,
) -> Option<T> {
    let mut x = if guess > lo && guess < hi {
        guess
    } else {
        (lo + hi) * T::lit(0.5)
    };
    for _ in 0..200 {
        let (v, dv) = f(x);
        if v.abs() <= tol {
            return Some(x);
        }
        if v < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - v / dv;
        if !(next > lo && next < hi) {
            next = (lo + hi) * T::lit(0.5);
        }
        if next == x || hi - lo <= T::epsilon() * (T::one() + x.abs()) {
            return Some(next);
        }
        x = next;
    }
    None
}

/// Grid extremum of curvature refined by Newton steps on finite-difference derivatives
/// around the three best local extrema.
fn refine_extremum<T: Scalar>(spec: &CurveSpec<T>, kappas: &[T], step: T, minimum: bool) -> (T, T) {
    let n = kappas.len();
    let better = |a: T, b: T| if minimum { a < b } else { a > b };
    let mut locals: Vec<usize> = (0..n)
        .filter(|&i| {
            let prev = kappas[(i + n - 1) % n];
            let next = kappas[(i + 1) % n];
            better(kappas[i], prev) && !better(next, kappas[i])
        })
        .collect();
    let global = (0..n)
        .reduce(|a, b| if better(kappas[b], kappas[a]) { b } else { a })
        .unwrap_or(0);
    if locals.is_empty() {
        locals.push(global);
    }
    locals.sort_by(|&a, &b| {
        let o = kappas[a]
            .partial_cmp(&kappas[b])
            .unwrap_or(std::cmp::Ordering::Equal);
        if minimum {
            o
        } else {
            o.reverse()
        }
    });
    locals.truncate(3);

    let kappa = |phi: T| {
        let (r, r1, r2) = spec.radial(phi);
        polar_curvature(r, r1, r2)
    };
    let mut best = (kappas[global], step * T::lit(global as f64));
    let h = T::lit(1e-4);
    for &i in &locals {
        let start = step * T::lit(i as f64);
        let mut phi = start;
        for _ in 0..8 {
            let (km, k0, kp) = (kappa(phi - h), kappa(phi), kappa(phi + h));
            let d1 = (kp - km) / (h + h);
            let d2 = (kp - k0 - k0 + km) / (h * h);
            let curving = if minimum {
                d2 > T::zero()
            } else {
                d2 < T::zero()
            };
            if !curving {
                break;
            }
            let next = phi - d1 / d2;
            if (next - start).abs() > step {
                break;
            }
            phi = next;
        }
        let k = kappa(phi);
        if better(k, best.0) {
            best = (k, phi.wrap_angle());
        }
    }
    best
}

/// Symmetry and asymmetry diagnostics of a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryReport<T> {
    pub centrally_symmetric: bool,
    /// `sup_φ |r(φ + π) − r(φ)|`.
    pub central_residual: T,
    /// Set for circles; the dihedral order is then reported as `None`.
    pub continuous_symmetry: bool,
    pub dihedral_order: Option<u32>,
    /// Reflection axes as angles in `[0, π)`.
    pub reflection_axes: Vec<T>,
    /// `min |κ(k) − κ(a(k))|` over the sample grid.
    pub asymmetry_margin_min: T,
    /// Same minimum, excluding a window of [`BALANCE_WINDOW`] radians around each balanced point.
    pub asymmetry_margin_generic: T,
    /// Parameters where `κ(k) = κ(a(k))` on a non-centrally-symmetric curve.
    pub balanced_points: Vec<T>,
}

pub const BALANCE_WINDOW: f64 = 0.05;
const MAX_DIHEDRAL: u32 = 12;

/// Central and dihedral symmetry detection plus the curvature comparison at antipodal pairs.
pub fn classify_symmetry<T: Scalar>(
    curve: &FermiCurve<T>,
) -> Result<SymmetryReport<T>, CurveError> {
    let n = curve.sample_count();
    let tol = curve.symmetry_tol();
    let grid: Vec<T> = (0..n).map(|i| curve.grid_phi(i)).collect();
    let r_at: Vec<T> = grid.iter().map(|&p| curve.radial(p).0).collect();
    let central_residual = curve.central_residual();
    let centrally_symmetric = central_residual < tol;

    let max_dr = grid
        .iter()
        .map(|&p| curve.radial(p).1.abs())
        .fold(T::zero(), T::max);
    if max_dr < tol {
        return Ok(SymmetryReport {
            centrally_symmetric: true,
            central_residual,
            continuous_symmetry: true,
            dihedral_order: None,
            reflection_axes: Vec::new(),
            asymmetry_margin_min: T::zero(),
            asymmetry_margin_generic: T::zero(),
            balanced_points: Vec::new(),
        });
    }

    // Reflection axes pass through critical points of r.
    let mut axes: Vec<T> = Vec::new();
    for i in 0..n {
        let (a, b) = (grid[i], if i + 1 < n { grid[i + 1] } else { T::two_pi() });
        let (da, db) = (curve.radial(a).1, curve.radial(b).1);
        let root = if da == T::zero() {
            Some(a)
        } else if da * db < T::zero() {
            Some(bisect(|x| curve.radial(x).1, a, b, da))
        } else {
            None
        };
        let Some(alpha) = root else { continue };
        let residual = grid
            .iter()
            .zip(&r_at)
            .map(|(&p, &r)| (curve.radial(alpha + alpha - p).0 - r).abs())
            .fold(T::zero(), T::max);
        if residual < tol {
            let line = alpha % T::PI();
            if !axes.iter().any(|&x| angle_line_close(x, line)) {
                axes.push(line);
            }
        }
    }
    axes.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    let dihedral_order = if axes.is_empty() {
        None
    } else {
        (1..=MAX_DIHEDRAL).rev().find(|&m| {
            let shift = T::two_pi() / T::lit(m as f64);
            grid.iter()
                .zip(&r_at)
                .all(|(&p, &r)| (curve.radial(p + shift).0 - r).abs() < tol)
        })
    };

    let gaps: Vec<T> = grid
        .iter()
        .map(|&p| Ok(curve.curvature(p) - curve.curvature(curve.antipodal(p)?)))
        .collect::<Result<_, CurveError>>()?;
    let asymmetry_margin_min = gaps.iter().map(|g| g.abs()).fold(T::infinity(), T::min);

    let mut balanced_points = Vec::new();
    if !centrally_symmetric {
        let gap_at = |x: T| -> T {
            let a = curve.antipodal(x).unwrap_or(x);
            curve.curvature(x) - curve.curvature(a)
        };
        for i in 0..n {
            let j = (i + 1) % n;
            let (ga, gb) = (gaps[i], gaps[j]);
            if ga == T::zero() {
                balanced_points.push(grid[i]);
            } else if ga * gb < T::zero() {
                let b = if j == 0 { T::two_pi() } else { grid[j] };
                balanced_points.push(bisect(gap_at, grid[i], b, ga).wrap_angle());
            }
        }
    }
    let window = T::lit(BALANCE_WINDOW);
    let asymmetry_margin_generic = if centrally_symmetric {
        T::zero()
    } else {
        grid.iter()
            .zip(&gaps)
            .filter(|(&p, _)| {
                balanced_points
                    .iter()
                    .all(|&b| crate::scalar::angle_diff(p, b).abs() > window)
            })
            .map(|(_, g)| g.abs())
            .fold(T::infinity(), T::min)
    };

    Ok(SymmetryReport {
        centrally_symmetric,
        central_residual,
        continuous_symmetry: false,
        dihedral_order,
        reflection_axes: axes,
        asymmetry_margin_min,
        asymmetry_margin_generic,
        balanced_points,
    })
}

fn angle_line_close<T: Scalar>(a: T, b: T) -> bool {
    let d = (a - b).abs() % T::PI();
    d.min(T::PI() - d) < T::lit(1e-6)
}

fn bisect<T: Scalar>(f: impl Fn(T) -> T, mut a: T, mut b: T, fa: T) -> T {
    let sa = fa > T::zero();
    for _ in 0..100 {
        let m = (a + b) * T::lit(0.5);
        if m <= a || m >= b {
            break;
        }
        if (f(m) > T::zero()) == sa {
            a = m;
        } else {
            b = m;
        }
    }
    (a + b) * T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{PI, TAU};

    use approx::assert_abs_diff_eq;

    use super::*;

    fn tripod() -> FermiCurve<f64> {
        make_curve(CurveSpec::radial_series(1.0, &[(3, 0.05, 0.0)])).unwrap()
    }

    #[test]
    fn unit_circle_tables() {
        let c = make_curve(CurveSpec::<f64>::circle(1.0)).unwrap();
        assert_abs_diff_eq!(c.length(), TAU, epsilon = 1e-12);
        assert_abs_diff_eq!(c.kappa_min(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.kappa_max(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_convex_tripod() {
        let err = make_curve(CurveSpec::<f64>::radial_series(1.0, &[(3, 0.20, 0.0)])).unwrap_err();
        assert!(matches!(err, CurveError::NonConvex { .. }), "{err:?}");
    }

    #[test]
    fn rejects_non_positive_radius() {
        let err = make_curve(CurveSpec::<f64>::radial_series(0.5, &[(1, 0.7, 0.0)])).unwrap_err();
        assert!(
            matches!(err, CurveError::NonPositiveRadius { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn rejects_small_grid() {
        let err = make_curve(CurveSpec::<f64>::circle(1.0).with_samples(100)).unwrap_err();
        assert!(matches!(err, CurveError::InvalidSpec(_)));
    }

    #[test]
    fn point_at_circle_origin() {
        let c = make_curve(CurveSpec::<f64>::circle(1.0)).unwrap();
        let p = c.point_at(0.0);
        assert_abs_diff_eq!(p.position.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.position.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.tangent.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.normal.x, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.curvature, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ellipse_vertex_curvature() {
        let c = make_curve(CurveSpec::<f64>::ellipse(2.0, 1.0)).unwrap();
        let p = c.point_at(0.0);
        assert_abs_diff_eq!(p.position.x, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.curvature, 2.0, epsilon = 1e-12);
        // minor vertex: b / a² = 0.25
        assert_abs_diff_eq!(c.curvature(PI / 2.0), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(c.kappa_min(), 0.25, epsilon = 1e-9);
    }

    #[test]
    fn tripod_curvature_at_zero() {
        // r = 1.05, r' = 0, r'' = -0.45
        let expected = (1.05f64 * 1.05 + 1.05 * 0.45) / 1.05f64.powi(3);
        assert_abs_diff_eq!(tripod().curvature(0.0), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(expected, 1.3606, epsilon = 1e-4);
    }

    #[test]
    fn antipodal_examples() {
        let c = make_curve(CurveSpec::<f64>::circle(1.0)).unwrap();
        assert_abs_diff_eq!(c.antipodal(0.0).unwrap(), PI, epsilon = 1e-12);
        let e = make_curve(CurveSpec::<f64>::ellipse(2.0, 1.0)).unwrap();
        for &phi in &[0.0, 0.3, 1.2, 2.9, 5.5] {
            let a = e.antipodal(phi).unwrap();
            let sum = e.position(phi) + e.position(a);
            assert!(sum.norm() < 1e-10, "phi={phi}: {sum:?}");
        }
    }

    #[test]
    fn tripod_antipode_against_dense_scan() {
        let c = tripod();
        let t0 = c.tangent(0.0);
        // independent oracle: scan for tangent anti-parallel to t0, away from 0
        let n = 200_000;
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..n {
            let phi = TAU * i as f64 / n as f64;
            let t = c.tangent(phi);
            let score = (t + t0).norm();
            if score < best.0 {
                best = (score, phi);
            }
        }
        let a = c.antipodal(0.0).unwrap();
        assert!((a - best.1).abs() < 1e-4, "{a} vs {}", best.1);
        let back = c.antipodal(a).unwrap();
        assert!(crate::scalar::angle_diff(back, 0.0).abs() < 1e-10);
    }

    #[test]
    fn local_graph_circle() {
        let c = make_curve(CurveSpec::<f64>::circle(1.0)).unwrap();
        assert_eq!(c.local_graph(0.7, 0.0).unwrap(), 0.0);
        let x = c.local_graph(1.3, 0.1).unwrap();
        assert_abs_diff_eq!(x, 1.0 - (1.0f64 - 0.01).sqrt(), epsilon = 1e-13);
        let y = c.local_graph(1.3, -0.1).unwrap();
        assert_abs_diff_eq!(y, x, epsilon = 1e-13);
        assert!(matches!(
            c.local_graph(0.0, 0.2),
            Err(CurveError::OutOfChart { .. })
        ));
    }

    #[test]
    fn local_graph_second_difference() {
        let c = tripod();
        let h = 1e-3;
        let fd = (c.local_graph(0.0, h).unwrap() + c.local_graph(0.0, -h).unwrap()) / (h * h);
        assert_abs_diff_eq!(fd, c.curvature(0.0), epsilon = 1e-4);
    }

    #[test]
    fn dispersion_examples() {
        let c = make_curve(CurveSpec::<f64>::circle(1.0)).unwrap();
        assert_abs_diff_eq!(c.dispersion(Vec2::new(1.0, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(c.dispersion(Vec2::new(1.5, 0.0)).unwrap(), 0.5);
        assert_eq!(c.dispersion(Vec2::zero()), Err(CurveError::OriginSingular));
        let t = tripod();
        assert_abs_diff_eq!(
            t.dispersion(Vec2::new(1.05, 0.0)).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        for &phi in &[0.2, 1.0, 2.5, 4.0] {
            let p = t.position(phi);
            assert_abs_diff_eq!(t.dispersion(p).unwrap(), 0.0, epsilon = 1e-14);
            assert!(t.dispersion(p * 0.9).unwrap() < 0.0);
        }
    }

    #[test]
    fn arclen_inverse_and_ellipse_perimeter() {
        let e = make_curve(CurveSpec::<f64>::ellipse(2.0, 1.0)).unwrap();
        // perimeter of the (2, 1) ellipse: 4a E(e²), e² = 3/4
        assert_abs_diff_eq!(e.length(), 9.688_448_220_547_675, epsilon = 1e-9);
        for &s in &[0.0, 0.1, 3.3, 9.0] {
            let phi = e.phi_at_arclen(s);
            assert_abs_diff_eq!(e.arclen_at(phi), s, epsilon = 1e-11);
        }
    }

    #[test]
    fn nearest_point_projection() {
        let e = make_curve(CurveSpec::<f64>::ellipse(2.0, 1.0)).unwrap();
        for &phi in &[0.0, 0.4, 1.1, 2.0, 4.4] {
            let k = e.position(phi) + e.normal(phi) * 0.07;
            assert_abs_diff_eq!(
                crate::scalar::angle_diff(e.nearest_phi(k), phi),
                0.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn symmetry_classification() {
        let c = classify_symmetry(&make_curve(CurveSpec::<f64>::circle(1.0)).unwrap()).unwrap();
        assert!(c.continuous_symmetry && c.centrally_symmetric);
        assert_eq!(c.dihedral_order, None);
        assert_eq!(c.asymmetry_margin_min, 0.0);

        let e =
            classify_symmetry(&make_curve(CurveSpec::<f64>::ellipse(2.0, 1.0)).unwrap()).unwrap();
        assert!(e.centrally_symmetric && e.central_residual < 1e-12);
        assert_eq!(e.dihedral_order, Some(2));

        let t = classify_symmetry(&tripod()).unwrap();
        assert!(!t.centrally_symmetric);
        assert_eq!(t.dihedral_order, Some(3));
        assert_eq!(t.reflection_axes.len(), 3);
        assert!(t.asymmetry_margin_generic > 0.0);
    }

    #[test]
    fn f32_curve_is_usable() {
        let c = make_curve(CurveSpec::<f32>::ellipse(2.0, 1.0)).unwrap();
        let a = c.antipodal(0.3).unwrap();
        assert!((c.position(0.3) + c.position(a)).norm() < 1e-4);
    }
}
