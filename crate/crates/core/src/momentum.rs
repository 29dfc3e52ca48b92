//! Momentum-conservation counting over sector configurations.
//!
//! Sectors are rectangles, so a vector sum of sectors is a zonotope and
//! feasibility of `x₁ + ⋯ + x_m ∈ target` reduces to a separating-axis test.
//! [`enumerate_mom`] counts single-scale tuples of anchors, [`enumerate_cons`]
//! counts fine-scale completions of a two-scale configuration.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::curve::{CurveError, FermiCurve};
use crate::rect::OrientedRect;
use crate::scalar::Scalar;
use crate::sectorization::{ArcSpan, Sectorization};
use crate::vec2::Vec2;

/// Default cap on the candidate product before pruning.
pub const DEFAULT_MAX_TUPLES: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CountError {
    #[error(
        "projected enumeration of {projected:.3e} candidate tuples exceeds the limit {limit:.3e}"
    )]
    TooManyTuples { projected: f64, limit: f64 },
    #[error("expected {expected} intervals for n = {n}, got {got}")]
    LegCount {
        n: usize,
        expected: usize,
        got: usize,
    },
    #[error("n = {0} is outside the supported range")]
    UnsupportedN(usize),
    #[error("fine scale j = {j} must exceed coarse scale i = {i}")]
    ScaleOrder { i: u32, j: u32 },
    #[error("fine length {l} is not below a quarter of the coarse length {l_coarse}")]
    RatioTooSmall { l: f64, l_coarse: f64 },
    #[error("sector index {0} out of range")]
    SectorIndex(usize),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("sweep needs at least 4 points spanning a factor of 8, got {points} points spanning {span:.3}")]
    InsufficientSweep { points: usize, span: f64 },
    #[error("all sweep counts are zero")]
    DegenerateSweep,
    #[error("sweep values must be positive and finite")]
    InvalidValue,
}

/// Minkowski sum of segments `[-g, g]` translated to `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope<T> {
    pub center: Vec2<T>,
    pub generators: Vec<Vec2<T>>,
}

impl<T: Scalar> Zonotope<T> {
    pub fn from_rects(rects: &[OrientedRect<T>]) -> Self {
        let mut center = Vec2::zero();
        let mut generators = Vec::with_capacity(2 * rects.len());
        for r in rects {
            center += r.center;
            generators.extend_from_slice(&r.generators());
        }
        Zonotope { center, generators }
    }

    /// Support half-width along the unit direction `d`.
    pub fn half_width(&self, d: Vec2<T>) -> T {
        self.generators.iter().map(|g| g.dot(d).abs()).sum()
    }

    pub fn bbox_half(&self) -> Vec2<T> {
        let mut h = Vec2::zero();
        for g in &self.generators {
            h.x = h.x + g.x.abs();
            h.y = h.y + g.y.abs();
        }
        h
    }

    /// Vertices in counter-clockwise order (duplicates of parallel generators merged).
    pub fn vertices(&self) -> Vec<Vec2<T>> {
        let mut gens: Vec<Vec2<T>> = self
            .generators
            .iter()
            .filter(|g| g.norm_sq() > T::zero())
            .map(|&g| {
                // canonical half-plane: angle in [0, π)
                if g.y < T::zero() || (g.y == T::zero() && g.x < T::zero()) {
                    -g
                } else {
                    g
                }
            })
            .collect();
        if gens.is_empty() {
            return vec![self.center];
        }
        gens.sort_by(|a, b| {
            a.angle()
                .partial_cmp(&b.angle())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        // lowest vertex: take every generator with its negative sign
        let start = self.center - gens.iter().copied().sum::<Vec2<T>>();
        let mut out = Vec::with_capacity(2 * gens.len());
        let mut v = start;
        for g in gens.iter().chain(gens.iter()) {
            out.push(v);
            let step = if out.len() <= gens.len() { *g } else { -*g };
            v += step * T::lit(2.0);
        }
        out
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        separated(p - self.center, &self.generators, T::lit(FEASIBLE_SLACK)).is_none()
    }
}

/// First axis along which the symmetric set `Σ[-g, g]` misses `offset`, if any.
/// `slack` widens the set relative to its own extent.
fn separated<T: Scalar>(offset: Vec2<T>, gens: &[Vec2<T>], slack: T) -> Option<Vec2<T>> {
    let scale = gens.iter().map(|g| g.norm()).sum::<T>() + offset.norm();
    let tol = slack * scale;
    let mut any = false;
    for g in gens {
        let len = g.norm();
        if len == T::zero() {
            continue;
        }
        any = true;
        let u = *g * (T::one() / len);
        for d in [u.perp(), u] {
            let reach: T = gens.iter().map(|h| h.dot(d).abs()).sum();
            if offset.dot(d).abs() > reach + tol {
                return Some(d);
            }
        }
    }
    if !any && offset.norm() > tol {
        return Some(offset.normalized());
    }
    None
}

/// Relative slack on feasibility comparisons: sums that touch the target only
/// at round-off level still count as feasible.
const FEASIBLE_SLACK: f64 = 1e-12;

/// Whether `r₁ + ⋯ + r_m` meets `target`.
pub fn minkowski_feasible<T: Scalar>(rects: &[OrientedRect<T>], target: &OrientedRect<T>) -> bool {
    let mut gens = Vec::with_capacity(2 * rects.len() + 2);
    let mut c = -target.center;
    for r in rects {
        c += r.center;
        gens.extend_from_slice(&r.generators());
    }
    gens.extend_from_slice(&target.generators());
    separated(c, &gens, T::lit(FEASIBLE_SLACK)).is_none()
}

/// Whether two rectangles intersect.
pub fn rects_intersect<T: Scalar>(a: &OrientedRect<T>, b: &OrientedRect<T>) -> bool {
    minkowski_feasible(std::slice::from_ref(a), b)
}

/// Counter-clockwise image `a(I)` of an arc under the antipodal map.
pub fn antipodal_span<T: Scalar>(
    curve: &FermiCurve<T>,
    span: &ArcSpan<T>,
) -> Result<ArcSpan<T>, CurveError> {
    let a0 = curve.antipodal(curve.phi_at_arclen(span.start))?;
    let a1 = curve.antipodal(curve.phi_at_arclen(span.end()))?;
    let start = curve.arclen_at(a0);
    let mut length = curve.arclen_between(a0, a1);
    // a full-length arc maps to a full-length arc
    if span.length >= curve.length() * T::lit(0.5) && length < span.length * T::lit(0.5) {
        length = length + curve.length();
    }
    Ok(ArcSpan { start, length })
}

/// `max_{i≠j} min(dist(I_i, I_j), dist(I_i, a(I_j)))` and the maximizing ordered pair.
pub fn pair_separation<T: Scalar>(
    curve: &FermiCurve<T>,
    spans: &[ArcSpan<T>],
) -> Result<(T, Option<(usize, usize)>), CurveError> {
    let total = curve.length();
    let images = spans
        .iter()
        .map(|s| antipodal_span(curve, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = T::zero();
    let mut pair = None;
    for i in 0..spans.len() {
        for j in 0..spans.len() {
            if i == j {
                continue;
            }
            let v = spans[i]
                .distance(&spans[j], total)
                .min(spans[i].distance(&images[j], total));
            if pair.is_none() || v > best {
                best = v;
                pair = Some((i, j));
            }
        }
    }
    Ok((best, pair))
}

/// Counts tuples `(c₁, …, c_m)`, `c_i ∈ legs[i]`, such that
/// `Σ fixed + Σ c_i` meets `target`.
pub fn count_feasible<T: Scalar>(
    fixed: &[OrientedRect<T>],
    legs: &[Vec<OrientedRect<T>>],
    target: &OrientedRect<T>,
    max_tuples: f64,
) -> Result<u64, CountError> {
    let projected: f64 = legs.iter().map(|l| l.len() as f64).product();
    if projected > max_tuples {
        return Err(CountError::TooManyTuples {
            projected,
            limit: max_tuples,
        });
    }
    if legs.iter().any(|l| l.is_empty()) {
        return Ok(0);
    }
    if legs.is_empty() {
        return Ok(u64::from(minkowski_feasible(fixed, target)));
    }
    let m = legs.len();
    // suffix[k]: coordinate-wise range of Σ_{i ≥ k} legs[i] boxes
    let mut suffix = vec![(Vec2::zero(), Vec2::zero()); m + 1];
    for k in (0..m).rev() {
        let (mut lo, mut hi) = (
            Vec2::new(T::infinity(), T::infinity()),
            Vec2::new(T::neg_infinity(), T::neg_infinity()),
        );
        for r in &legs[k] {
            let h = r.bbox_half();
            lo = Vec2::new(lo.x.min(r.center.x - h.x), lo.y.min(r.center.y - h.y));
            hi = Vec2::new(hi.x.max(r.center.x + h.x), hi.y.max(r.center.y + h.y));
        }
        suffix[k] = (suffix[k + 1].0 + lo, suffix[k + 1].1 + hi);
    }
    let th = target.bbox_half();
    let slack = {
        let s = th.x + th.y + suffix[0].1.x.abs() + suffix[0].1.y.abs();
        s * T::lit(1e-9)
    };
    let t_lo = target.center - th - Vec2::new(slack, slack);
    let t_hi = target.center + th + Vec2::new(slack, slack);
    let last = BoxIndex::new(&legs[m - 1]);

    let mut base = Partial::new(m);
    for r in fixed {
        base.push(*r);
    }
    let ctx = Ctx {
        legs,
        suffix: &suffix,
        t_lo,
        t_hi,
        target,
        last: &last,
    };
    let count = legs[0]
        .par_iter()
        .map(|r| {
            let mut part = base.clone();
            part.push(*r);
            ctx.descend(&mut part, 1)
        })
        .sum();
    Ok(count)
}

#[derive(Clone)]
struct Partial<T> {
    rects: Vec<OrientedRect<T>>,
    lo: Vec2<T>,
    hi: Vec2<T>,
}

impl<T: Scalar> Partial<T> {
    fn new(capacity: usize) -> Self {
        Partial {
            rects: Vec::with_capacity(capacity + 2),
            lo: Vec2::zero(),
            hi: Vec2::zero(),
        }
    }

    fn push(&mut self, r: OrientedRect<T>) {
        let h = r.bbox_half();
        self.lo += r.center - h;
        self.hi += r.center + h;
        self.rects.push(r);
    }

    fn pop(&mut self) {
        if let Some(r) = self.rects.pop() {
            let h = r.bbox_half();
            self.lo -= r.center - h;
            self.hi -= r.center + h;
        }
    }
}

struct Ctx<'a, T> {
    legs: &'a [Vec<OrientedRect<T>>],
    suffix: &'a [(Vec2<T>, Vec2<T>)],
    t_lo: Vec2<T>,
    t_hi: Vec2<T>,
    target: &'a OrientedRect<T>,
    last: &'a BoxIndex<T>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn descend(&self, part: &mut Partial<T>, k: usize) -> u64 {
        let m = self.legs.len();
        let (slo, shi) = self.suffix[k];
        let lo = part.lo + slo;
        let hi = part.hi + shi;
        if lo.x > self.t_hi.x || lo.y > self.t_hi.y || hi.x < self.t_lo.x || hi.y < self.t_lo.y {
            return 0;
        }
        if k == m {
            return u64::from(minkowski_feasible(&part.rects, self.target));
        }
        if k == m - 1 {
            // last leg's box must meet [t_lo − part.hi, t_hi − part.lo]
            let q_lo = self.t_lo - part.hi;
            let q_hi = self.t_hi - part.lo;
            let mut count = 0;
            self.last.query(q_lo, q_hi, |i| {
                part.push(self.legs[k][i]);
                count += u64::from(minkowski_feasible(&part.rects, self.target));
                part.pop();
            });
            return count;
        }
        let mut count = 0;
        for r in &self.legs[k] {
            part.push(*r);
            count += self.descend(part, k + 1);
            part.pop();
        }
        count
    }
}

/// Uniform grid over rectangle bounding boxes, for range queries at the last leg.
struct BoxIndex<T> {
    lo: Vec2<T>,
    cell: T,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
    boxes: Vec<(Vec2<T>, Vec2<T>)>,
}

impl<T: Scalar> BoxIndex<T> {
    fn new(rects: &[OrientedRect<T>]) -> Self {
        let boxes: Vec<(Vec2<T>, Vec2<T>)> = rects
            .iter()
            .map(|r| {
                let h = r.bbox_half();
                (r.center - h, r.center + h)
            })
            .collect();
        let mut lo = Vec2::new(T::infinity(), T::infinity());
        let mut hi = Vec2::new(T::neg_infinity(), T::neg_infinity());
        let mut extent = T::zero();
        for (a, b) in &boxes {
            lo = Vec2::new(lo.x.min(a.x), lo.y.min(a.y));
            hi = Vec2::new(hi.x.max(b.x), hi.y.max(b.y));
            extent = extent.max(b.x - a.x).max(b.y - a.y);
        }
        let span = (hi.x - lo.x).max(hi.y - lo.y);
        let cell = if extent > T::zero() {
            extent
        } else {
            span.max(T::one())
        };
        let side = |w: T| ((w / cell).floor().to_usize().unwrap_or(0) + 1).min(1024);
        let (nx, ny) = (side(hi.x - lo.x), side(hi.y - lo.y));
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, (a, b)) in boxes.iter().enumerate() {
            let (x0, y0) = Self::cell_of(lo, cell, nx, ny, *a);
            let (x1, y1) = Self::cell_of(lo, cell, nx, ny, *b);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    cells[y * nx + x].push(i);
                }
            }
        }
        BoxIndex {
            lo,
            cell,
            nx,
            ny,
            cells,
            boxes,
        }
    }

    fn cell_of(lo: Vec2<T>, cell: T, nx: usize, ny: usize, p: Vec2<T>) -> (usize, usize) {
        let f = |v: T, n: usize| {
            let c = (v / cell).floor();
            if c < T::zero() {
                0
            } else {
                c.to_usize().unwrap_or(n - 1).min(n - 1)
            }
        };
        (f(p.x - lo.x, nx), f(p.y - lo.y, ny))
    }

    /// Calls `f` once per box meeting `[q_lo, q_hi]`, in index order.
    fn query(&self, q_lo: Vec2<T>, q_hi: Vec2<T>, mut f: impl FnMut(usize)) {
        if q_lo.x > q_hi.x || q_lo.y > q_hi.y {
            return;
        }
        let (x0, y0) = Self::cell_of(self.lo, self.cell, self.nx, self.ny, q_lo);
        let (x1, y1) = Self::cell_of(self.lo, self.cell, self.nx, self.ny, q_hi);
        let mut hits: Vec<usize> = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                hits.extend_from_slice(&self.cells[y * self.nx + x]);
            }
        }
        hits.sort_unstable();
        hits.dedup();
        for i in hits {
            let (a, b) = self.boxes[i];
            if a.x <= q_hi.x && a.y <= q_hi.y && b.x >= q_lo.x && b.y >= q_lo.y {
                f(i);
            }
        }
    }
}

/// Result of one enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct CountReport {
    pub descriptor: String,
    pub exact_count: u64,
    /// Bound with the constant set to one.
    pub shape: f64,
    /// `fitted_constant · shape`.
    pub bound_value: f64,
    pub fitted_constant: f64,
    pub scaling_fit: Option<ScalingFit>,
    pub runtime_ms: f64,
    /// Candidate tuples before pruning.
    pub candidates: f64,
    /// Separation quantity (ω or ω′).
    pub omega: f64,
    /// Pair of legs realizing `omega`.
    pub certifying_pair: Option<(usize, usize)>,
    /// Whether the hypotheses of the corresponding bound hold.
    pub hypotheses_hold: bool,
    pub notes: Vec<String>,
}

impl CountReport {
    pub fn with_constant(mut self, k: f64) -> Self {
        self.fitted_constant = k;
        self.bound_value = k * self.shape;
        self
    }

    pub fn within_bound(&self) -> bool {
        self.exact_count as f64 <= self.bound_value
    }
}

/// Single-scale query: tuples of anchors of `sectorization`, one per interval,
/// whose sectors can sum into the sector at `p`.
#[derive(Debug, Clone)]
pub struct MomQuery<'a, T> {
    pub sectorization: &'a Sectorization<T>,
    pub p: T,
    pub n: usize,
    pub intervals: Vec<ArcSpan<T>>,
    pub constant: f64,
    pub max_tuples: f64,
}

impl<'a, T: Scalar> MomQuery<'a, T> {
    /// Intervals of common length `delta` centered at the given parameters.
    pub fn centered(sectorization: &'a Sectorization<T>, p: T, centers: &[T], delta: T) -> Self {
        let curve = sectorization.curve();
        let intervals = centers
            .iter()
            .map(|&c| ArcSpan::centered(curve.arclen_at(c), delta))
            .collect();
        MomQuery {
            sectorization,
            p,
            n: (centers.len() + 1) / 2,
            intervals,
            constant: 1.0,
            max_tuples: DEFAULT_MAX_TUPLES,
        }
    }

    /// Rectangle of the sector anchored at `p`.
    pub fn target(&self) -> OrientedRect<T> {
        let sec = self.sectorization;
        let pt = sec.curve().point_at(self.p);
        OrientedRect::new(
            pt.position,
            pt.tangent,
            sec.length * T::lit(0.5),
            sec.scale.outer(),
        )
    }

    /// Anchors of each interval, as sector indices.
    pub fn candidates(&self) -> Vec<Vec<usize>> {
        let sec = self.sectorization;
        let total = sec.curve().length();
        self.intervals
            .iter()
            .map(|iv| {
                sec.sectors
                    .iter()
                    .filter(|s| iv.contains(s.center_arclen, total))
                    .map(|s| s.index)
                    .collect()
            })
            .collect()
    }
}

/// `n² (δ/l + 1)^{2n−3} (1 + Λ/(lω))`.
pub fn mom_shape(n: usize, delta_over_l: f64, lambda_over_l: f64, omega: f64) -> f64 {
    let n_f = n as f64;
    n_f * n_f * (delta_over_l + 1.0).powi(2 * n as i32 - 3) * (1.0 + lambda_over_l / omega)
}

/// `(l′/l)^{n−3} (1 + 1/(M^{j−1} l ω′))`.
pub fn cons_shape(n: usize, ratio: f64, base: f64, j: u32, l: f64, omega: f64) -> f64 {
    ratio.powi(n as i32 - 3) * (1.0 + 1.0 / (base.powi(j as i32 - 1) * l * omega))
}

pub fn enumerate_mom<T: Scalar>(q: &MomQuery<'_, T>) -> Result<CountReport, CountError> {
    let start = Instant::now();
    if !(2..=3).contains(&q.n) {
        return Err(CountError::UnsupportedN(q.n));
    }
    let expected = 2 * q.n - 1;
    if q.intervals.len() != expected {
        return Err(CountError::LegCount {
            n: q.n,
            expected,
            got: q.intervals.len(),
        });
    }
    let sec = q.sectorization;
    let curve = sec.curve();
    let l = sec.length.as_f64();
    let delta = q
        .intervals
        .iter()
        .map(|s| s.length.as_f64())
        .fold(0.0, f64::max);
    let (sep, pair) = pair_separation(curve, &q.intervals)?;
    let omega = 3.0 * sep.as_f64();

    let ids = q.candidates();
    let legs: Vec<Vec<OrientedRect<T>>> = ids
        .iter()
        .map(|v| v.iter().map(|&i| sec.sectors[i].rect).collect())
        .collect();
    let candidates: f64 = legs.iter().map(|l| l.len() as f64).product();
    let count = count_feasible(&[], &legs, &q.target(), q.max_tuples)?;

    let mut notes = Vec::new();
    if delta < l * (1.0 - 1e-12) {
        notes.push(format!(
            "interval length {delta:.4e} below sector length {l:.4e}"
        ));
    }
    let hyp = sep.as_f64() > delta.max(4.0 * l);
    if !hyp {
        notes.push(format!(
            "separation ω/3 = {:.4e} does not exceed max(δ, 4l) = {:.4e}",
            sep.as_f64(),
            delta.max(4.0 * l)
        ));
    }
    let shape = mom_shape(
        q.n,
        delta / l,
        sec.width.as_f64() / l,
        omega.max(f64::MIN_POSITIVE),
    );
    let report = CountReport {
        descriptor: format!(
            "mom n={} j={} M={} l={:.4e} delta/l={:.3} p={:.6}",
            q.n,
            sec.scale.j,
            sec.scale.base,
            l,
            delta / l,
            q.p
        ),
        exact_count: count,
        shape,
        bound_value: shape,
        fitted_constant: 1.0,
        scaling_fit: None,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        candidates,
        omega,
        certifying_pair: pair,
        hypotheses_hold: hyp && delta >= l * (1.0 - 1e-12),
        notes,
    };
    Ok(report.with_constant(q.constant))
}

/// Two-scale query: fine completions `(s₂, …, s_n)` of a fixed fine sector `s1`
/// with `s_m` meeting the coarse sector `coarse_legs[m − 2]`.
#[derive(Debug, Clone)]
pub struct ConsQuery<'a, T> {
    pub fine: &'a Sectorization<T>,
    pub coarse: &'a Sectorization<T>,
    pub s1: usize,
    pub coarse_legs: Vec<usize>,
    /// Conservation tolerance: sums must reach the square `|x|∞ ≤ k_tol · M^{-j}`.
    pub k_tol: f64,
    pub constant: f64,
    pub max_tuples: f64,
    /// Reject queries that break `l < l′/4` instead of flagging them.
    pub strict: bool,
}

impl<'a, T: Scalar> ConsQuery<'a, T> {
    pub fn new(
        fine: &'a Sectorization<T>,
        coarse: &'a Sectorization<T>,
        s1: usize,
        coarse_legs: Vec<usize>,
    ) -> Self {
        ConsQuery {
            fine,
            coarse,
            s1,
            coarse_legs,
            k_tol: 1.0,
            constant: 1.0,
            max_tuples: DEFAULT_MAX_TUPLES,
            strict: true,
        }
    }

    pub fn n(&self) -> usize {
        self.coarse_legs.len() + 1
    }

    /// Fine sectors whose rectangle meets each coarse leg.
    pub fn candidates(&self) -> Vec<Vec<usize>> {
        let curve = self.fine.curve();
        let total = curve.length();
        let margin =
            self.coarse.length + self.fine.length + T::lit(2.0) * self.coarse.scale.outer();
        self.coarse_legs
            .iter()
            .map(|&c| {
                let coarse = &self.coarse.sectors[c];
                let reach = ArcSpan {
                    start: coarse.arc.start - margin,
                    length: coarse.arc.length + margin * T::lit(2.0),
                };
                self.fine
                    .sectors
                    .iter()
                    .filter(|f| reach.intersects(&f.arc, total))
                    .filter(|f| rects_intersect(&f.rect, &coarse.rect))
                    .map(|f| f.index)
                    .collect()
            })
            .collect()
    }
}

pub fn enumerate_cons<T: Scalar>(q: &ConsQuery<'_, T>) -> Result<CountReport, CountError> {
    let start = Instant::now();
    let (i, j) = (q.coarse.scale.j, q.fine.scale.j);
    if i >= j {
        return Err(CountError::ScaleOrder { i, j });
    }
    let n = q.n();
    if !(2..=5).contains(&n) {
        return Err(CountError::UnsupportedN(n));
    }
    if q.s1 >= q.fine.len() {
        return Err(CountError::SectorIndex(q.s1));
    }
    if let Some(&c) = q.coarse_legs.iter().find(|&&c| c >= q.coarse.len()) {
        return Err(CountError::SectorIndex(c));
    }
    let l = q.fine.length.as_f64();
    let l_coarse = q.coarse.length.as_f64();
    let mut notes = Vec::new();
    let ratio_ok = l < l_coarse / 4.0;
    if !ratio_ok {
        if q.strict {
            return Err(CountError::RatioTooSmall { l, l_coarse });
        }
        notes.push(format!(
            "l = {l:.4e} is not below l'/4 = {:.4e}",
            l_coarse / 4.0
        ));
    }

    let curve = q.fine.curve();
    let spans: Vec<ArcSpan<T>> = q
        .coarse_legs
        .iter()
        .map(|&c| q.coarse.sectors[c].arc)
        .collect();
    let (omega, pair) = if spans.len() >= 2 {
        let (w, p) = pair_separation(curve, &spans)?;
        // report legs in 2..n numbering
        (w.as_f64(), p.map(|(a, b)| (a + 2, b + 2)))
    } else {
        (0.0, None)
    };
    let omega_ok = omega >= 4.0 * l_coarse;
    if !omega_ok {
        notes.push(format!(
            "ω' = {omega:.4e} is below 4l' = {:.4e}",
            4.0 * l_coarse
        ));
    }

    let ids = q.candidates();
    let legs: Vec<Vec<OrientedRect<T>>> = ids
        .iter()
        .map(|v| v.iter().map(|&k| q.fine.sectors[k].rect).collect())
        .collect();
    let candidates: f64 = legs.iter().map(|l| l.len() as f64).product();
    let half = T::lit(q.k_tol) * q.fine.scale.width();
    let target = OrientedRect::axis_aligned(Vec2::zero(), half, half);
    let count = count_feasible(&[q.fine.sectors[q.s1].rect], &legs, &target, q.max_tuples)?;

    let base = q.fine.scale.base.as_f64();
    let shape = cons_shape(n, l_coarse / l, base, j, l, omega.max(f64::MIN_POSITIVE));
    let report = CountReport {
        descriptor: format!(
            "cons n={n} i={i} j={j} M={base} l={l:.4e} l'={l_coarse:.4e} s1={}",
            q.s1
        ),
        exact_count: count,
        shape,
        bound_value: shape,
        fitted_constant: 1.0,
        scaling_fit: None,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        candidates,
        omega,
        certifying_pair: pair,
        hypotheses_hold: ratio_ok && omega_ok,
        notes,
    };
    Ok(report.with_constant(q.constant))
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub exponent: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fits `ln y = a + b ln x`; zero counts are dropped.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<ScalingFit, SweepError> {
    if xs.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(SweepError::InvalidValue);
    }
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(SweepError::DegenerateSweep);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(SweepError::DegenerateSweep);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let stderr = if pts.len() > 2 {
        let rss: f64 = pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
        (rss / (k - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(ScalingFit {
        exponent: b,
        stderr,
        intercept: a,
        points: pts.len(),
    })
}

/// Variable a sweep runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    DeltaOverL,
    Omega1,
    /// `M^{j−i}`.
    ScaleGap,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::DeltaOverL => "delta_over_l",
            SweepVar::Omega1 => "omega1",
            SweepVar::ScaleGap => "scale_gap",
        }
    }
}

/// Log-log fit of maximal counts against the sweep variable. Requires at least
/// four points spanning a factor of eight.
pub fn bound_sweep(_var: SweepVar, xs: &[f64], counts: &[u64]) -> Result<ScalingFit, SweepError> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi / lo;
    if xs.len() < 4 || !(span >= 8.0 * (1.0 - 1e-12)) {
        return Err(SweepError::InsufficientSweep {
            points: xs.len(),
            span,
        });
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(SweepError::DegenerateSweep);
    }
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    loglog_fit(xs, &ys)
}

/// Constant fitted on calibration runs: `safety · max(count / shape)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub constant: f64,
    pub raw: f64,
    pub safety: f64,
}

impl Calibration {
    pub fn fit<'r>(reports: impl IntoIterator<Item = &'r CountReport>, safety: f64) -> Self {
        let raw = reports
            .into_iter()
            .filter(|r| r.shape > 0.0)
            .map(|r| r.exact_count as f64 / r.shape)
            .fold(0.0, f64::max);
        Calibration {
            constant: raw * safety,
            raw,
            safety,
        }
    }
}
