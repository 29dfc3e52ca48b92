//! The sum map `Φ(k₁, k₂) = k₁ + k₂` on pairs of curve points.
//!
//! Preimages of `q` are found by a one-dimensional scan: `(φ₁, φ₂)` solves
//! `Φ = q` exactly when `q − P(φ₁)` lies on the curve, i.e. when
//! `g(φ₁) = dispersion(q − P(φ₁))` vanishes, and then `φ₂ = arg(q − P(φ₁))`.
//! Roots are bracketed on a grid (sign changes, plus local extrema of `g` that
//! may hide a close pair of roots) and polished by a two-dimensional Newton step.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::curve::{CurveError, FermiCurve};
use crate::mc::{chunk_rng, sample_moments};
use crate::momentum::minkowski_feasible;
use crate::rect::OrientedRect;
use crate::scalar::{angle_diff, CompensatedSum, Scalar};
use crate::vec2::Vec2;

/// Solutions with `|sin θ|` below this lie on the antipodal graph.
pub const DEGENERATE_SIN: f64 = 1e-6;
/// Default number of scan points for [`preimage_count`].
pub const DEFAULT_GRID: usize = 720;
/// Newton step size at which polishing stops.
pub const NEWTON_TOL: f64 = 1e-10;
/// Largest accepted `|Φ − q|` for a reported solution.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Minimal sample count of the Monte Carlo estimators.
pub const MIN_SAMPLES: usize = 100_000;
/// Volume constant `inf μ(B_{r/2}(x)) / r²` of a flat surface.
pub const BALL_CONSTANT: f64 = std::f64::consts::FRAC_PI_4;
/// Grid-based degeneracy threshold for [`area_formula_check`].
pub const DEGENERATE_REGION_SIN: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParallelogramError {
    #[error("tolerance {0:e} is outside [1e-10, 1e-4]")]
    Tolerance(f64),
    #[error("{samples} samples requested, at least {min} required")]
    TooFewSamples { samples: usize, min: usize },
    #[error("region is degenerate: |sin θ| ≤ {max_sin:.3e} everywhere on it")]
    DegenerateRegion { max_sin: f64 },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("window requires 0 < ω₁ < ω₂/2 and disjoint arcs, got ω₁ = {omega1}, ω₂ = {omega2}")]
    InvalidWindow { omega1: f64, omega2: f64 },
    #[error("window with ω₁ = {omega1}, ω₂ = {omega2} contains no admissible pair")]
    EmptyWindow { omega1: f64, omega2: f64 },
    #[error("ε = {eps} is not below ω₁/4 = {limit}")]
    EpsilonTooLarge { eps: f64, limit: f64 },
    #[error("points {i} and {j} are {distance:.3e} apart, below ε = {eps:.3e}")]
    NotSeparated {
        i: usize,
        j: usize,
        distance: f64,
        eps: f64,
    },
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// `|sin θ|`, θ the angle between the normals at `phi1` and `phi2`.
pub fn jacobian_sin_theta<T: Scalar>(curve: &FermiCurve<T>, phi1: T, phi2: T) -> T {
    curve.normal(phi1).cross(curve.normal(phi2)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreimageCount {
    Finite(usize),
    /// The whole antipodal graph maps to `q`.
    Infinite,
}

impl PreimageCount {
    pub fn finite(self) -> Option<usize> {
        match self {
            PreimageCount::Finite(n) => Some(n),
            PreimageCount::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreimageResult<T> {
    pub q: Vec2<T>,
    /// Ordered pairs `(φ₁, φ₂)`, sorted by `φ₁`.
    pub solutions: Vec<(T, T)>,
    pub degenerate: bool,
    pub count: PreimageCount,
    pub min_sin_theta: Option<T>,
    /// Candidates dropped because Newton polishing did not converge.
    pub discarded: usize,
}

/// `dispersion(q − P(φ))`, continued by `−r_min` at the origin.
#[inline]
fn residual<T: Scalar>(curve: &FermiCurve<T>, q: Vec2<T>, p: Vec2<T>) -> T {
    let k = q - p;
    let n = k.norm();
    if n == T::zero() {
        return -curve.r_min();
    }
    n - curve.spec().radius_toward(k * (T::one() / n))
}

/// Root of `f` on `[a, b]` given opposite signs at the ends (Illinois variant of
/// false position, with bisection when it stalls).
fn bracket_root<T: Scalar>(
    f: impl Fn(T) -> T,
    mut a: T,
    mut b: T,
    mut fa: T,
    mut fb: T,
    xtol: T,
) -> T {
    let mut side = 0i8;
    for _ in 0..100 {
        if (b - a).abs() <= xtol {
            break;
        }
        let mut x = (a * fb - b * fa) / (fb - fa);
        if !(x > a.min(b) && x < a.max(b)) {
            x = (a + b) * T::lit(0.5);
        }
        let fx = f(x);
        if fx == T::zero() {
            return x;
        }
        if (fx > T::zero()) == (fb > T::zero()) {
            b = x;
            fb = fx;
            if side == -1 {
                fa = fa * T::lit(0.5);
            }
            side = -1;
        } else {
            a = x;
            fa = fx;
            if side == 1 {
                fb = fb * T::lit(0.5);
            }
            side = 1;
        }
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}

/// Point of `[a, b]` where `sign · f` is smallest (golden section).
fn golden_min<T: Scalar>(f: impl Fn(T) -> T, mut a: T, mut b: T, iters: usize) -> (T, T) {
    let r = T::lit(0.618_033_988_749_894_8);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Roots of `g` from samples `vals` at `xs`; `cyclic` links the last sample to the first
/// (the last node is then taken one period after its stored value).
fn scan_roots<T: Scalar>(
    g: &impl Fn(T) -> T,
    xs: &[T],
    vals: &[T],
    cyclic: bool,
    xtol: T,
) -> Vec<T> {
    let n = xs.len();
    let period = T::two_pi();
    let node = |i: usize| -> (T, T) {
        if i < n {
            (xs[i], vals[i])
        } else {
            (xs[i - n] + period, vals[i - n])
        }
    };
    let cells = if cyclic { n } else { n - 1 };
    let mut roots = Vec::new();
    for i in 0..cells {
        let (a, fa) = node(i);
        let (b, fb) = node(i + 1);
        if fa == T::zero() {
            roots.push(a);
            continue;
        }
        if (fa > T::zero()) != (fb > T::zero()) && fb != T::zero() {
            roots.push(bracket_root(g, a, b, fa, fb, xtol));
        } else if !cyclic && i + 1 == n - 1 && fb == T::zero() {
            roots.push(b);
        }
    }
    // close pairs of roots hide between samples around local extrema of g
    let first = if cyclic { 0 } else { 1 };
    let last = if cyclic { n } else { n - 1 };
    for i in first..last {
        let (xm, fm) = if i == 0 {
            let (x, v) = node(n - 1);
            (x - period, v)
        } else {
            node(i - 1)
        };
        let (_, f0) = node(i);
        let (xp, fp) = node(i + 1);
        let positive = f0 > T::zero();
        if (fm > T::zero()) != positive || (fp > T::zero()) != positive || f0 == T::zero() {
            continue;
        }
        let is_ext = if positive {
            f0 <= fm && f0 <= fp
        } else {
            f0 >= fm && f0 >= fp
        };
        if !is_ext || f0.abs() > (fm - f0).abs() + (fp - f0).abs() {
            continue;
        }
        let s = if positive { T::one() } else { -T::one() };
        let (xe, fe) = golden_min(|x| s * g(x), xm, xp, 60);
        let fe = s * fe;
        if (fe > T::zero()) != positive && fe != T::zero() {
            roots.push(bracket_root(g, xm, xe, fm, fe, xtol));
            roots.push(bracket_root(g, xe, xp, fe, fp, xtol));
        } else if fe.abs() <= xtol {
            roots.push(xe);
        }
    }
    roots
}

/// Newton polish of `P(x₁) + P(x₂) = q`; `None` if the residual stays above the acceptance level.
fn polish<T: Scalar>(curve: &FermiCurve<T>, q: Vec2<T>, mut x1: T, mut x2: T) -> Option<(T, T)> {
    let step_cap = T::lit(0.1);
    for _ in 0..40 {
        let f = curve.position(x1) + curve.position(x2) - q;
        let (v1, v2) = (curve.velocity(x1), curve.velocity(x2));
        let det = v1.cross(v2);
        if det.abs() <= T::lit(1e-14) * v1.norm() * v2.norm() {
            break;
        }
        let d1 = -f.cross(v2) / det;
        let d2 = -v1.cross(f) / det;
        let big = d1.abs().max(d2.abs());
        let scale = if big > step_cap {
            step_cap / big
        } else {
            T::one()
        };
        x1 = x1 + d1 * scale;
        x2 = x2 + d2 * scale;
        if big <= T::lit(NEWTON_TOL) {
            break;
        }
    }
    let res = (curve.position(x1) + curve.position(x2) - q).norm();
    let accept = T::lit(RESIDUAL_TOL).max(T::epsilon() * T::lit(64.0) * curve.r_max());
    if res.is_finite() && res <= accept {
        Some((x1.wrap_angle(), x2.wrap_angle()))
    } else {
        None
    }
}

/// All ordered pairs on the curve summing to `q`.
pub fn preimage_count<T: Scalar>(
    curve: &FermiCurve<T>,
    q: Vec2<T>,
    tol: T,
) -> Result<PreimageResult<T>, ParallelogramError> {
    preimage_count_with_grid(curve, q, tol, DEFAULT_GRID)
}

pub fn preimage_count_with_grid<T: Scalar>(
    curve: &FermiCurve<T>,
    q: Vec2<T>,
    tol: T,
    grid: usize,
) -> Result<PreimageResult<T>, ParallelogramError> {
    let t = tol.as_f64();
    if !(1e-10..=1e-4).contains(&t) {
        return Err(ParallelogramError::Tolerance(t));
    }
    if q.norm() <= tol && curve.is_centrally_symmetric() {
        return Ok(PreimageResult {
            q,
            solutions: Vec::new(),
            degenerate: true,
            count: PreimageCount::Infinite,
            min_sin_theta: Some(T::zero()),
            discarded: 0,
        });
    }
    let grid = grid.max(16);
    let step = T::two_pi() / T::lit(grid as f64);
    let xs: Vec<T> = (0..grid).map(|i| step * T::lit(i as f64)).collect();
    let vals: Vec<T> = xs
        .iter()
        .map(|&x| residual(curve, q, curve.position(x)))
        .collect();
    let g = |x: T| residual(curve, q, curve.position(x));
    let xtol = T::lit(T::SOLVE_TOL).max(T::epsilon() * T::lit(16.0));
    let roots = scan_roots(&g, &xs, &vals, true, xtol);

    let mut discarded = 0;
    let mut sols: Vec<(T, T)> = Vec::new();
    for x1 in roots {
        let x2 = (q - curve.position(x1)).angle();
        match polish(curve, q, x1, x2) {
            Some(s) => sols.push(s),
            None => discarded += 1,
        }
    }
    sols.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let merge = tol * T::lit(10.0);
    let mut solutions: Vec<(T, T)> = Vec::new();
    for s in sols {
        let dup = solutions
            .iter()
            .any(|o| angle_diff(o.0, s.0).abs() < merge && angle_diff(o.1, s.1).abs() < merge);
        if !dup {
            solutions.push(s);
        }
    }
    let min_sin = solutions
        .iter()
        .map(|&(a, b)| jacobian_sin_theta(curve, a, b))
        .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.min(v))));
    let degenerate = min_sin.is_some_and(|m| m < T::lit(DEGENERATE_SIN));
    Ok(PreimageResult {
        q,
        count: PreimageCount::Finite(solutions.len()),
        solutions,
        degenerate,
        min_sin_theta: min_sin,
        discarded,
    })
}

/// `[φ₁ lo, φ₁ hi] × [φ₂ lo, φ₂ hi]` in the angle parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRect<T> {
    pub phi1: (T, T),
    pub phi2: (T, T),
}

impl<T: Scalar> ParamRect<T> {
    pub fn new(phi1: (T, T), phi2: (T, T)) -> Self {
        ParamRect { phi1, phi2 }
    }

    pub fn area(&self) -> T {
        (self.phi1.1 - self.phi1.0) * (self.phi2.1 - self.phi2.0)
    }

    /// Largest `|sin θ|` on an `m × m` grid over the region.
    pub fn max_sin_theta(&self, curve: &FermiCurve<T>, m: usize) -> T {
        self.sin_theta_grid(curve, m).fold(T::zero(), T::max)
    }

    /// Smallest `|sin θ|` on an `m × m` grid over the region.
    pub fn min_sin_theta(&self, curve: &FermiCurve<T>, m: usize) -> T {
        self.sin_theta_grid(curve, m).fold(T::infinity(), T::min)
    }

    fn sin_theta_grid<'a>(
        &'a self,
        curve: &'a FermiCurve<T>,
        m: usize,
    ) -> impl Iterator<Item = T> + 'a {
        let m = m.max(2);
        let at = move |r: (T, T), i: usize| r.0 + (r.1 - r.0) * T::lit(i as f64 / (m - 1) as f64);
        (0..m).flat_map(move |i| {
            (0..m).map(move |j| jacobian_sin_theta(curve, at(self.phi1, i), at(self.phi2, j)))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaCheck {
    /// `∫_E |J|` in arc-length measure.
    pub lhs: f64,
    /// Monte Carlo `∫ #(E, y) dy`.
    pub rhs: f64,
    pub rel_err: f64,
    /// Standard error of `rhs`.
    pub stderr: f64,
    pub samples: usize,
}

impl AreaCheck {
    /// `rel_err ≤ max(floor, sigmas · stderr / lhs)`.
    pub fn passes(&self, floor: f64, sigmas: f64) -> bool {
        self.rel_err <= floor.max(sigmas * self.stderr / self.lhs.abs().max(f64::MIN_POSITIVE))
    }
}

const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Composite 4-point Gauss–Legendre nodes and weights on `[a, b]`.
fn gauss_nodes<T: Scalar>(a: T, b: T, panels: usize) -> Vec<(T, T)> {
    let h = (b - a) / T::lit(panels as f64);
    (0..panels)
        .flat_map(|p| {
            let mid = a + h * (T::lit(p as f64) + T::lit(0.5));
            GL4.iter()
                .map(move |&(x, w)| (mid + h * T::lit(0.5 * x), h * T::lit(0.5 * w)))
        })
        .collect()
}

/// `∫_E |sin θ| ds₁ ds₂` by tensor Gauss–Legendre quadrature.
pub fn jacobian_integral<T: Scalar>(curve: &FermiCurve<T>, e: &ParamRect<T>, panels: usize) -> f64 {
    let n1 = gauss_nodes(e.phi1.0, e.phi1.1, panels);
    let n2 = gauss_nodes(e.phi2.0, e.phi2.1, panels);
    let second: Vec<(Vec2<T>, f64)> = n2
        .iter()
        .map(|&(x, w)| (curve.normal(x), (w * curve.speed(x)).as_f64()))
        .collect();
    let rows: Vec<f64> = n1
        .par_iter()
        .map(|&(x, w)| {
            let nx = curve.normal(x);
            let wx = (w * curve.speed(x)).as_f64();
            let row: CompensatedSum = second
                .iter()
                .map(|&(ny, wy)| nx.cross(ny).abs().as_f64() * wy)
                .collect();
            wx * row.value()
        })
        .collect();
    rows.into_iter().collect::<CompensatedSum>().value()
}

/// Bounding box `(lo, hi)` of the arc `P([a, b])`.
fn arc_bbox<T: Scalar>(curve: &FermiCurve<T>, a: T, b: T) -> (Vec2<T>, Vec2<T>) {
    let m = 512;
    let mut lo = Vec2::new(T::infinity(), T::infinity());
    let mut hi = Vec2::new(T::neg_infinity(), T::neg_infinity());
    let mut vmax = T::zero();
    for i in 0..=m {
        let x = a + (b - a) * T::lit(i as f64 / m as f64);
        let p = curve.position(x);
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        vmax = vmax.max(curve.speed(x));
    }
    // a chord of length c sags at most κ c² / 8 away from its arc
    let c = vmax * T::lit(1.1) * (b - a) / T::lit(m as f64);
    let pad = curve.kappa_max() * c * c / T::lit(8.0) + T::lit(1e-12);
    (lo - Vec2::new(pad, pad), hi + Vec2::new(pad, pad))
}

/// `#(E, y)` for one region, with the `φ₁` scan grid cached.
struct RestrictedCounter<'a, T> {
    curve: &'a FermiCurve<T>,
    xs: Vec<T>,
    pos: Vec<Vec2<T>>,
    phi2: (T, T),
}

impl<'a, T: Scalar> RestrictedCounter<'a, T> {
    fn new(curve: &'a FermiCurve<T>, e: &ParamRect<T>, points: usize) -> Self {
        let xs: Vec<T> = (0..points)
            .map(|i| e.phi1.0 + (e.phi1.1 - e.phi1.0) * T::lit(i as f64 / (points - 1) as f64))
            .collect();
        let pos = xs.iter().map(|&x| curve.position(x)).collect();
        RestrictedCounter {
            curve,
            xs,
            pos,
            phi2: e.phi2,
        }
    }

    fn count(&self, y: Vec2<T>) -> usize {
        let vals: Vec<T> = self
            .pos
            .iter()
            .map(|&p| residual(self.curve, y, p))
            .collect();
        let g = |x: T| residual(self.curve, y, self.curve.position(x));
        let roots = scan_roots(&g, &self.xs, &vals, false, T::lit(1e-12));
        let width = self.phi2.1 - self.phi2.0;
        let mut found: Vec<T> = Vec::with_capacity(roots.len());
        for x in roots {
            let x2 = (y - self.curve.position(x)).angle();
            if (x2 - self.phi2.0).wrap_angle() <= width
                && !found.iter().any(|&f| (f - x).abs() < T::lit(1e-9))
            {
                found.push(x);
            }
        }
        found.len()
    }
}

/// Compares `∫_E |J|` with a Monte Carlo estimate of `∫ #(E, y) dy`.
pub fn area_formula_check<T: Scalar>(
    curve: &FermiCurve<T>,
    e: &ParamRect<T>,
    samples: usize,
    seed: u64,
) -> Result<AreaCheck, ParallelogramError> {
    let w1 = e.phi1.1 - e.phi1.0;
    let w2 = e.phi2.1 - e.phi2.0;
    if w1 < T::zero() || w2 < T::zero() || w1 > T::two_pi() || w2 > T::two_pi() {
        return Err(ParallelogramError::InvalidRegion(format!(
            "side lengths {} and {} must lie in [0, 2π]",
            w1, w2
        )));
    }
    if w1 == T::zero() || w2 == T::zero() {
        return Ok(AreaCheck {
            lhs: 0.0,
            rhs: 0.0,
            rel_err: 0.0,
            stderr: 0.0,
            samples: 0,
        });
    }
    if samples < MIN_SAMPLES {
        return Err(ParallelogramError::TooFewSamples {
            samples,
            min: MIN_SAMPLES,
        });
    }
    let max_sin = e.max_sin_theta(curve, 33);
    if max_sin < T::lit(DEGENERATE_REGION_SIN) {
        return Err(ParallelogramError::DegenerateRegion {
            max_sin: max_sin.as_f64(),
        });
    }
    let lhs = jacobian_integral(curve, e, 32);

    let (lo1, hi1) = arc_bbox(curve, e.phi1.0, e.phi1.1);
    let (lo2, hi2) = arc_bbox(curve, e.phi2.0, e.phi2.1);
    let lo = (lo1 + lo2).to_f64();
    let hi = (hi1 + hi2).to_f64();
    let box_area = (hi.x - lo.x) * (hi.y - lo.y);
    // one scan point per ~0.01 rad keeps roots of distinct branches apart
    let points = ((w1.as_f64() / 0.01).ceil() as usize).clamp(16, 4096) + 1;
    let counter = RestrictedCounter::new(curve, e, points);
    let m = sample_moments(seed, samples, |rng| {
        let y = Vec2::new(
            T::lit(lo.x + (hi.x - lo.x) * rng.gen::<f64>()),
            T::lit(lo.y + (hi.y - lo.y) * rng.gen::<f64>()),
        );
        counter.count(y) as f64
    });
    let rhs = box_area * m.mean();
    let stderr = box_area * m.stderr();
    Ok(AreaCheck {
        lhs,
        rhs,
        rel_err: (lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE),
        stderr,
        samples,
    })
}

/// Rectangle `A` with one pair of sides parallel to `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRect<T> {
    pub center: Vec2<T>,
    /// Unit direction of the `l1` sides.
    pub axis: Vec2<T>,
    pub l1: T,
    pub l2: T,
    /// Radius of the neighborhood `A′(ε)`.
    pub eps: T,
}

impl<T: Scalar> RegionRect<T> {
    pub fn new(center: Vec2<T>, axis: Vec2<T>, l1: T, l2: T) -> Result<Self, ParallelogramError> {
        if !(l1 > T::zero() && l2 > T::zero()) || !(l1.is_finite() && l2.is_finite()) {
            return Err(ParallelogramError::InvalidRegion(format!(
                "extents must be positive, got L1 = {l1}, L2 = {l2}"
            )));
        }
        Ok(RegionRect {
            center,
            axis: axis.normalized(),
            l1,
            l2,
            eps: T::zero(),
        })
    }

    /// Axis-aligned square of side `side`.
    pub fn square(center: Vec2<T>, side: T) -> Result<Self, ParallelogramError> {
        Self::new(center, Vec2::new(T::one(), T::zero()), side, side)
    }

    pub fn with_eps(mut self, eps: T) -> Self {
        self.eps = eps;
        self
    }

    pub fn rect(&self) -> OrientedRect<T> {
        OrientedRect::new(
            self.center,
            self.axis,
            self.l1 * T::lit(0.5),
            self.l2 * T::lit(0.5),
        )
    }

    /// Rectangle containing the `eps`-neighborhood.
    pub fn inflated(&self) -> OrientedRect<T> {
        OrientedRect::new(
            self.center,
            self.axis,
            self.l1 * T::lit(0.5) + self.eps,
            self.l2 * T::lit(0.5) + self.eps,
        )
    }

    pub fn area(&self) -> T {
        self.l1 * self.l2
    }
}

/// Arcs of arc-length radius `omega2` around `p` and `a(p)`, with pairs at
/// least `omega1` apart from each other and from each other's antipode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntipodalWindow<T> {
    pub p: T,
    pub omega1: T,
    pub omega2: T,
}

impl<T: Scalar> AntipodalWindow<T> {
    pub fn new(p: T, omega1: T, omega2: T) -> Result<Self, ParallelogramError> {
        let err = ParallelogramError::InvalidWindow {
            omega1: omega1.as_f64(),
            omega2: omega2.as_f64(),
        };
        if !(omega1 > T::zero() && omega1 * T::lit(2.0) < omega2 && omega2.is_finite()) {
            return Err(err);
        }
        Ok(AntipodalWindow { p, omega1, omega2 })
    }

    /// Arc-length centers of the two arcs.
    pub fn arc_centers(&self, curve: &FermiCurve<T>) -> Result<[T; 2], CurveError> {
        Ok([
            curve.arclen_at(self.p),
            curve.arclen_at(curve.antipodal(self.p)?),
        ])
    }

    /// Membership of a pair in the window, given its parameters.
    pub fn admits(&self, curve: &FermiCurve<T>, phi1: T, phi2: T) -> Result<bool, CurveError> {
        if curve.arc_distance(phi1, phi2) < self.omega1 {
            return Ok(false);
        }
        let a1 = curve.antipodal(phi1)?;
        Ok(curve.arc_distance(a1, phi2) >= self.omega1)
    }

    /// Whether both points lie in the window arcs.
    pub fn in_arcs(&self, curve: &FermiCurve<T>, phi: T) -> Result<bool, CurveError> {
        let a = curve.antipodal(self.p)?;
        Ok(curve.arc_distance(phi, self.p) <= self.omega2
            || curve.arc_distance(phi, a) <= self.omega2)
    }

    fn check(&self, curve: &FermiCurve<T>) -> Result<[T; 2], ParallelogramError> {
        let centers = self.arc_centers(curve)?;
        let gap = {
            let d = (centers[1] - centers[0]).modulo(curve.length());
            d.min(curve.length() - d)
        };
        if gap <= self.omega2 * T::lit(2.0) {
            return Err(ParallelogramError::InvalidWindow {
                omega1: self.omega1.as_f64(),
                omega2: self.omega2.as_f64(),
            });
        }
        // coarse membership scan over W × W
        let m = 48;
        let mut any = false;
        'outer: for &c1 in &centers {
            for &c2 in &centers {
                for i in 0..m {
                    for j in 0..m {
                        let u = self.omega2 * T::lit(2.0 * (i as f64 + 0.5) / m as f64 - 1.0);
                        let v = self.omega2 * T::lit(2.0 * (j as f64 + 0.5) / m as f64 - 1.0);
                        let p1 = curve.phi_at_arclen(c1 + u);
                        let p2 = curve.phi_at_arclen(c2 + v);
                        if self.admits(curve, p1, p2)? {
                            any = true;
                            break 'outer;
                        }
                    }
                }
            }
        }
        if !any {
            return Err(ParallelogramError::EmptyWindow {
                omega1: self.omega1.as_f64(),
                omega2: self.omega2.as_f64(),
            });
        }
        Ok(centers)
    }
}

/// Square cell `[s₁ ± h] × [s₂ ± h]` in arc-length coordinates.
#[derive(Debug, Clone, Copy)]
struct Cell<T> {
    s1: T,
    s2: T,
    h: T,
}

/// Monte Carlo measure of `{(s₁, s₂) ∈ blocks : Φ ∈ target, keep(φ₁, φ₂)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureEstimate {
    pub measure: f64,
    pub stderr: f64,
    pub leaves: usize,
    pub samples: usize,
}

/// Upper bound on leaves of the quadtree.
const MAX_LEAVES: usize = 1 << 18;

/// Estimates the arc-length measure of `Φ⁻¹(target)` within the given square blocks,
/// restricted by `keep`. Cells whose image provably misses `target` are pruned;
/// the samples are stratified over the surviving leaves.
fn preimage_measure<T, K>(
    curve: &FermiCurve<T>,
    blocks: &[Cell<T>],
    target: &OrientedRect<T>,
    min_cell: T,
    keep: K,
    samples: usize,
    seed: u64,
) -> Result<MeasureEstimate, CurveError>
where
    T: Scalar,
    K: Fn(T, T, T, T) -> Result<bool, CurveError> + Sync,
{
    let kappa = curve.kappa_max();
    let image_may_hit = |c: &Cell<T>| -> bool {
        let p1 = curve.point_at(curve.phi_at_arclen(c.s1));
        let p2 = curve.point_at(curve.phi_at_arclen(c.s2));
        let seg1 = OrientedRect::new(p1.position, p1.tangent, c.h, T::zero());
        let seg2 = OrientedRect::new(p2.position, p2.tangent, c.h, T::zero());
        // each arc stays within κ h² / 2 of its tangent segment
        let rho = kappa * c.h * c.h;
        let grown = OrientedRect {
            half: [target.half[0] + rho, target.half[1] + rho],
            ..*target
        };
        minkowski_feasible(&[seg1, seg2], &grown)
    };
    let mut leaves = Vec::new();
    let mut stack: Vec<Cell<T>> = blocks.iter().rev().copied().collect();
    let mut refine = true;
    while let Some(c) = stack.pop() {
        if !image_may_hit(&c) {
            continue;
        }
        if c.h <= min_cell || !refine {
            leaves.push(c);
            continue;
        }
        if leaves.len() + stack.len() + 4 > MAX_LEAVES {
            refine = false;
            leaves.push(c);
            continue;
        }
        let h = c.h * T::lit(0.5);
        // push in reverse so cells pop in lexicographic order
        for (a, b) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
            stack.push(Cell {
                s1: c.s1 + h * T::lit(a as f64),
                s2: c.s2 + h * T::lit(b as f64),
                h,
            });
        }
    }
    if leaves.is_empty() {
        return Ok(MeasureEstimate {
            measure: 0.0,
            stderr: 0.0,
            leaves: 0,
            samples: 0,
        });
    }
    let total_area: f64 = leaves.iter().map(|c| (2.0 * c.h.as_f64()).powi(2)).sum();
    let per_leaf: Vec<usize> = leaves
        .iter()
        .map(|c| {
            ((samples as f64 * (2.0 * c.h.as_f64()).powi(2) / total_area).ceil() as usize).max(2)
        })
        .collect();
    let partials: Vec<Result<(f64, f64), CurveError>> = leaves
        .par_iter()
        .zip(per_leaf.par_iter())
        .enumerate()
        .map(|(idx, (c, &n))| {
            let mut rng = chunk_rng(seed, idx as u64);
            let mut hits = 0usize;
            for _ in 0..n {
                let u: f64 = rng.gen_range(-1.0..1.0);
                let v: f64 = rng.gen_range(-1.0..1.0);
                let s1 = c.s1 + c.h * T::lit(u);
                let s2 = c.s2 + c.h * T::lit(v);
                let (x1, x2) = (curve.phi_at_arclen(s1), curve.phi_at_arclen(s2));
                let y = curve.position(x1) + curve.position(x2);
                if target.contains(y) && keep(x1, x2, s1, s2)? {
                    hits += 1;
                }
            }
            let area = (2.0 * c.h.as_f64()).powi(2);
            let p = hits as f64 / n as f64;
            Ok((area * p, area * area * p * (1.0 - p) / (n as f64 - 1.0)))
        })
        .collect();
    let mut mean = CompensatedSum::new();
    let mut var = CompensatedSum::new();
    for p in partials {
        let (m, v) = p?;
        mean.add(m);
        var.add(v);
    }
    Ok(MeasureEstimate {
        measure: mean.value(),
        stderr: var.value().max(0.0).sqrt(),
        leaves: leaves.len(),
        samples: per_leaf.iter().sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureRatio {
    /// `μ(Φ⁻¹(A) ∩ 𝓜̃) / m(A)`.
    pub ratio: f64,
    pub stderr: f64,
    pub estimate: MeasureEstimate,
}

/// Ratio of the window-restricted preimage measure of `a` to its area.
pub fn measure_ratio<T: Scalar>(
    curve: &FermiCurve<T>,
    window: &AntipodalWindow<T>,
    a: &RegionRect<T>,
    samples: usize,
    seed: u64,
) -> Result<MeasureRatio, ParallelogramError> {
    if samples < MIN_SAMPLES {
        return Err(ParallelogramError::TooFewSamples {
            samples,
            min: MIN_SAMPLES,
        });
    }
    let centers = window.check(curve)?;
    let h = window.omega2;
    let blocks: Vec<Cell<T>> = centers
        .iter()
        .flat_map(|&c1| centers.iter().map(move |&c2| Cell { s1: c1, s2: c2, h }))
        .collect();
    let target = a.inflated();
    let min_cell = a.l1.min(a.l2) / T::lit(16.0);
    let est = preimage_measure(
        curve,
        &blocks,
        &target,
        min_cell,
        |x1, x2, _, _| window.admits(curve, x1, x2),
        samples,
        seed,
    )?;
    let area = (target.area()).as_f64();
    Ok(MeasureRatio {
        ratio: est.measure / area,
        stderr: est.stderr / area,
        estimate: est,
    })
}

/// Points of the curve with pairwise arc distance at least `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedSet<T> {
    pub points: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> SeparatedSet<T> {
    /// Checks every pair.
    pub fn new(curve: &FermiCurve<T>, points: Vec<T>, eps: T) -> Result<Self, ParallelogramError> {
        // relative slack for points placed exactly eps apart
        let floor = eps * (T::one() - T::lit(1e-9));
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = curve.arc_distance(points[i], points[j]);
                if d < floor {
                    return Err(ParallelogramError::NotSeparated {
                        i,
                        j,
                        distance: d.as_f64(),
                        eps: eps.as_f64(),
                    });
                }
            }
        }
        Ok(SeparatedSet { points, eps })
    }

    /// `count` points equally spaced in arc length, starting at `φ = 0`.
    pub fn equispaced(curve: &FermiCurve<T>, count: usize) -> Self {
        let step = curve.length() / T::lit(count as f64);
        SeparatedSet {
            points: (0..count)
                .map(|i| curve.phi_at_arclen(step * T::lit(i as f64)))
                .collect(),
            eps: step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparatedCount {
    pub count: usize,
    /// `μ(Φ⁻¹(A′(ε))) / (ε² V)`.
    pub bound: f64,
    pub preimage_measure: f64,
    pub measure_stderr: f64,
    pub ball_constant: f64,
}

/// Pairs of `Γ × Γ` mapped into `a`, and the packing bound on that number.
pub fn separated_count<T: Scalar>(
    curve: &FermiCurve<T>,
    gamma: &SeparatedSet<T>,
    a: &RegionRect<T>,
    samples: usize,
    seed: u64,
) -> Result<SeparatedCount, ParallelogramError> {
    let rect = a.rect();
    let pos: Vec<Vec2<T>> = gamma.points.iter().map(|&p| curve.position(p)).collect();
    let count = pos
        .iter()
        .map(|&x| pos.iter().filter(|&&y| rect.contains(x + y)).count())
        .sum();
    let grown = a.with_eps(gamma.eps).inflated();
    let half = curve.length() * T::lit(0.5);
    let blocks = [Cell {
        s1: half,
        s2: half,
        h: half,
    }];
    let min_cell = (a.l1.min(a.l2) / T::lit(16.0)).max(curve.length() * T::lit(1e-6));
    let est = preimage_measure(
        curve,
        &blocks,
        &grown,
        min_cell,
        |_, _, _, _| Ok(true),
        samples,
        seed,
    )?;
    let e = gamma.eps.as_f64();
    Ok(SeparatedCount {
        count,
        bound: est.measure / (e * e * BALL_CONSTANT),
        preimage_measure: est.measure,
        measure_stderr: est.stderr,
        ball_constant: BALL_CONSTANT,
    })
}

/// Monte Carlo estimate of `μ(B_{r/2}(x)) / r²` on the product of the curve with itself,
/// using the intrinsic product distance; returns the value and its standard error.
pub fn ball_constant_estimate<T: Scalar>(
    curve: &FermiCurve<T>,
    center: (T, T),
    r: T,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let s0 = (curve.arclen_at(center.0), curve.arclen_at(center.1));
    let rad = r * T::lit(0.5);
    let m = sample_moments(seed, samples, |rng| {
        let u = T::lit(rng.gen_range(-1.0..1.0));
        let v = T::lit(rng.gen_range(-1.0..1.0));
        let x1 = curve.phi_at_arclen(s0.0 + rad * u);
        let x2 = curve.phi_at_arclen(s0.1 + rad * v);
        let d1 = curve.arc_distance(center.0, x1);
        let d2 = curve.arc_distance(center.1, x2);
        f64::from(u8::from(d1.hypot(d2) <= rad))
    });
    // sampled square has side r, so the ball fraction is μ(B)/r²
    (m.mean(), m.stderr())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectBound {
    pub count: usize,
    pub bound: f64,
    /// Bound with the constant set to one.
    pub shape: f64,
    pub violated: bool,
}

/// `(L₁ + ε ω₂)(L₂ + ε) / (ω₁ ε²)`.
pub fn rect_bound_shape(l1: f64, l2: f64, eps: f64, omega1: f64, omega2: f64) -> f64 {
    (l1 + eps * omega2) * (l2 + eps) / (omega1 * eps * eps)
}

/// Window-restricted count of `Γ × Γ` pairs mapped into `a`, against
/// `constant · (L₁ + ε ω₂)(L₂ + ε) / (ω₁ ε²)`.
pub fn rect_bound_check<T: Scalar>(
    curve: &FermiCurve<T>,
    gamma: &SeparatedSet<T>,
    a: &RegionRect<T>,
    window: &AntipodalWindow<T>,
    constant: f64,
) -> Result<RectBound, ParallelogramError> {
    let eps = gamma.eps.as_f64();
    let w1 = window.omega1.as_f64();
    if eps >= w1 / 4.0 {
        return Err(ParallelogramError::EpsilonTooLarge {
            eps,
            limit: w1 / 4.0,
        });
    }
    let rect = a.rect();
    let inside: Vec<(T, Vec2<T>)> = gamma
        .points
        .iter()
        .filter_map(|&p| match window.in_arcs(curve, p) {
            Ok(true) => Some(Ok((p, curve.position(p)))),
            Ok(false) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<_, _>>()?;
    let mut count = 0;
    for &(p1, x1) in &inside {
        for &(p2, x2) in &inside {
            if rect.contains(x1 + x2) && window.admits(curve, p1, p2)? {
                count += 1;
            }
        }
    }
    let shape = rect_bound_shape(
        a.l1.as_f64(),
        a.l2.as_f64(),
        eps,
        w1,
        window.omega2.as_f64(),
    );
    let bound = constant * shape;
    Ok(RectBound {
        count,
        bound,
        shape,
        violated: count as f64 > bound,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;
    use crate::curve::{make_curve, CurveSpec};

    fn circle() -> FermiCurve<f64> {
        make_curve(CurveSpec::circle(1.0)).unwrap()
    }

    #[test]
    fn jacobian_examples() {
        let c = circle();
        assert!((jacobian_sin_theta(&c, 0.0, FRAC_PI_2) - 1.0).abs() < 1e-15);
        assert!(jacobian_sin_theta(&c, 0.0, PI) < 1e-15);
    }

    #[test]
    fn circle_preimages() {
        let c = circle();
        let r = preimage_count(&c, Vec2::new(1.0, 0.0), 1e-9).unwrap();
        assert_eq!(r.count, PreimageCount::Finite(2));
        for &(a, b) in &r.solutions {
            let d = angle_diff(a, b).abs();
            assert!((d - 2.0 * PI / 3.0).abs() < 1e-9, "{a} {b}");
        }
        assert!(!r.degenerate);
        let z = preimage_count(&c, Vec2::new(0.0, 0.0), 1e-9).unwrap();
        assert_eq!(z.count, PreimageCount::Infinite);
        let far = preimage_count(&c, Vec2::new(3.0, 0.0), 1e-9).unwrap();
        assert_eq!(far.count, PreimageCount::Finite(0));
        assert!(preimage_count(&c, Vec2::new(1.0, 0.0), 1e-3).is_err());
    }

    #[test]
    fn tangent_double_root_is_found() {
        // |q| = 2 on the unit circle: the single pair (0, 0), a tangency
        let c = circle();
        let r = preimage_count(&c, Vec2::new(2.0, 0.0), 1e-9).unwrap();
        assert_eq!(r.count, PreimageCount::Finite(1));
        assert!(r.degenerate);
    }

    #[test]
    fn zero_area_region() {
        let c = circle();
        let e = ParamRect::new((0.0, 0.0), (1.0, 2.0));
        let r = area_formula_check(&c, &e, MIN_SAMPLES, 1).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    #[test]
    fn degenerate_region() {
        let c = circle();
        let e = ParamRect::new((0.0, 1e-5), (PI, PI + 1e-5));
        assert!(matches!(
            area_formula_check(&c, &e, MIN_SAMPLES, 1),
            Err(ParallelogramError::DegenerateRegion { .. })
        ));
    }

    #[test]
    fn window_invariants() {
        assert!(AntipodalWindow::new(0.0, 0.25, 0.5).is_err());
        assert!(AntipodalWindow::new(0.0, 0.1, 0.5).is_ok());
        let c = circle();
        let w = AntipodalWindow::new(0.0, 0.1, 2.0).unwrap();
        assert!(matches!(
            measure_ratio(
                &c,
                &w,
                &RegionRect::square(Vec2::new(0.0, 0.0), 0.1).unwrap(),
                MIN_SAMPLES,
                0
            ),
            Err(ParallelogramError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn separated_examples() {
        let c = circle();
        let g = SeparatedSet::equispaced(&c, 16);
        let all = RegionRect::square(Vec2::new(0.0, 0.0), 10.0).unwrap();
        let r = separated_count(&c, &g, &all, MIN_SAMPLES, 3).unwrap();
        assert_eq!(r.count, 256);
        assert!(r.bound >= 256.0);
        let tiny = RegionRect::square(Vec2::new(2.0, 0.0), 1e-3).unwrap();
        assert_eq!(
            separated_count(&c, &g, &tiny, MIN_SAMPLES, 3)
                .unwrap()
                .count,
            1
        );
        let away = RegionRect::square(Vec2::new(5.0, 0.0), 1.0).unwrap();
        assert_eq!(
            separated_count(&c, &g, &away, MIN_SAMPLES, 3)
                .unwrap()
                .count,
            0
        );
        assert!(SeparatedSet::new(&c, vec![0.0, 0.05], 0.1).is_err());
    }
}
