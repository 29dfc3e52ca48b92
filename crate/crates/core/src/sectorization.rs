//! Shells, sectors and sectorizations of a Fermi curve at a given scale.
//!
//! A sectorization of length `l` lays `N = ⌈ℓ / (7l/8)⌉` sectors uniformly in
//! arc length. With spacing `ℓ/N`, consecutive arcs overlap by `l − ℓ/N`;
//! when that exceeds `l/8` the sector length is shortened to `8ℓ/(7N)` so the
//! overlap lands exactly on the target `l/8`, and the adjustment is reported.

use std::fmt;

use thiserror::Error;

use crate::curve::FermiCurve;
use crate::rect::OrientedRect;
use crate::scalar::Scalar;
use crate::vec2::Vec2;

/// Relative slack for comparisons of lengths that are equal in exact arithmetic.
const REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SectorError {
    #[error("scale index j = {0} must be at least 2")]
    ScaleIndex(u32),
    #[error("base M = {0} must be at least 10")]
    Base(f64),
    #[error("sector length {length} is not below a quarter of the curve length {curve_length}")]
    SectorTooLong { length: f64, curve_length: f64 },
    #[error("width {width} is outside the admissible range [l², l] = [{lo}, {hi}]")]
    InadmissibleWidth { width: f64, lo: f64, hi: f64 },
    #[error("sector length {0} must be positive")]
    NonPositiveLength(f64),
}

/// Scale `j` with base `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale<T> {
    pub j: u32,
    pub base: T,
}

impl<T: Scalar> Scale<T> {
    pub fn new(j: u32, base: f64) -> Result<Self, SectorError> {
        if j < 2 {
            return Err(SectorError::ScaleIndex(j));
        }
        if !(base >= 10.0) {
            return Err(SectorError::Base(base));
        }
        Ok(Scale {
            j,
            base: T::lit(base),
        })
    }

    /// `M^{-e}`.
    pub fn pow_neg(&self, e: f64) -> T {
        self.base.powf(-T::lit(e))
    }

    /// `M^{-j}`: the default sector width Λ.
    pub fn width(&self) -> T {
        self.pow_neg(self.j as f64)
    }

    /// `M^{-j+1}`: outer shell bound and sector half-width across the curve.
    pub fn outer(&self) -> T {
        self.pow_neg(self.j as f64 - 1.0)
    }

    /// `M^{-j/2}`: the anisotropic sector length.
    pub fn anisotropic_length(&self) -> T {
        self.pow_neg(self.j as f64 / 2.0)
    }

    pub fn shell(&self) -> Shell<T> {
        Shell {
            scale: *self,
            inner: self.width(),
            outer: self.outer(),
        }
    }
}

/// `{k : M^{-j} ≤ |dispersion(k)| ≤ M^{-j+1}}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shell<T> {
    pub scale: Scale<T>,
    pub inner: T,
    pub outer: T,
}

impl<T: Scalar> Shell<T> {
    pub fn contains(&self, curve: &FermiCurve<T>, k: Vec2<T>) -> bool {
        match curve.dispersion(k) {
            Ok(d) => d.abs() >= self.inner && d.abs() <= self.outer,
            Err(_) => false,
        }
    }
}

/// Closed arc `[start, start + length]` in arc-length coordinates, taken cyclically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSpan<T> {
    pub start: T,
    pub length: T,
}

impl<T: Scalar> ArcSpan<T> {
    pub fn centered(center: T, length: T) -> Self {
        ArcSpan {
            start: center - length * T::lit(0.5),
            length,
        }
    }

    pub fn end(&self) -> T {
        self.start + self.length
    }

    pub fn center(&self) -> T {
        self.start + self.length * T::lit(0.5)
    }

    /// Offset of `s` past the start, reduced into `[0, total)`.
    fn offset(&self, s: T, total: T) -> T {
        (s - self.start).modulo(total)
    }

    pub fn contains(&self, s: T, total: T) -> bool {
        let slack = T::lit(REL_TOL) * total;
        let d = self.offset(s, total);
        d <= self.length + slack || d >= total - slack
    }

    /// Length of the intersection with `other` (both shorter than half the curve).
    pub fn overlap(&self, other: &Self, total: T) -> T {
        let d = other.offset(self.start, total);
        // self starts d after other starts
        let a = (other.length - d).max(T::zero()).min(self.length);
        let e = self.offset(other.start, total);
        let b = (self.length - e).max(T::zero()).min(other.length);
        a.max(b)
    }

    pub fn intersects(&self, other: &Self, total: T) -> bool {
        let slack = T::lit(REL_TOL) * total;
        let d = other.offset(self.start, total);
        let e = self.offset(other.start, total);
        d <= other.length + slack
            || e <= self.length + slack
            || d >= total - slack
            || e >= total - slack
    }

    /// Intrinsic distance between two arcs (0 when they meet).
    pub fn distance(&self, other: &Self, total: T) -> T {
        if self.intersects(other, total) {
            return T::zero();
        }
        let forward = (other.start - self.end()).modulo(total);
        let backward = (self.start - other.end()).modulo(total);
        forward.min(backward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sector<T> {
    pub index: usize,
    pub scale: Scale<T>,
    pub center_phi: T,
    pub center_arclen: T,
    /// Tangential extent l.
    pub length: T,
    /// Normal extent Λ used by the counting bounds.
    pub width: T,
    /// Flat footprint: `length` along the tangent, `±M^{-j+1}` along the normal.
    pub rect: OrientedRect<T>,
    pub arc: ArcSpan<T>,
    /// `[φ_lo, φ_hi]` of the arc, each reduced into `[0, 2π)`.
    pub arc_interval: (T, T),
}

#[derive(Debug, Clone)]
pub struct Sectorization<T> {
    curve: FermiCurve<T>,
    pub scale: Scale<T>,
    /// Sector length after any adjustment.
    pub length: T,
    pub requested_length: T,
    pub width: T,
    pub sectors: Vec<Sector<T>>,
    /// `overlaps[i]` is the arc overlap of sector `i` with its predecessor.
    pub overlaps: Vec<T>,
    /// Relative shortening applied to the requested length, if any.
    pub length_adjustment: Option<T>,
}

/// Sectorization with the default anisotropic width `Λ = M^{-j}`.
pub fn build_sectorization<T: Scalar>(
    curve: &FermiCurve<T>,
    scale: Scale<T>,
    length: T,
) -> Result<Sectorization<T>, SectorError> {
    build_sectorization_with_width(curve, scale, length, scale.width())
}

/// Anisotropic schedule `l = M^{-j/2}`, `Λ = M^{-j}`.
pub fn anisotropic_sectorization<T: Scalar>(
    curve: &FermiCurve<T>,
    scale: Scale<T>,
) -> Result<Sectorization<T>, SectorError> {
    build_sectorization(curve, scale, scale.anisotropic_length())
}

pub fn build_sectorization_with_width<T: Scalar>(
    curve: &FermiCurve<T>,
    scale: Scale<T>,
    length: T,
    width: T,
) -> Result<Sectorization<T>, SectorError> {
    let total = curve.length();
    if !(length > T::zero()) {
        return Err(SectorError::NonPositiveLength(length.as_f64()));
    }
    if length >= total * T::lit(0.25) {
        return Err(SectorError::SectorTooLong {
            length: length.as_f64(),
            curve_length: total.as_f64(),
        });
    }
    let slack = T::one() + T::lit(1e-12);
    if width > length * slack || width * slack < length * length {
        return Err(SectorError::InadmissibleWidth {
            width: width.as_f64(),
            lo: (length * length).as_f64(),
            hi: length.as_f64(),
        });
    }

    let n = (total / (T::lit(7.0 / 8.0) * length))
        .ceil()
        .to_usize()
        .unwrap_or(0)
        .max(3);
    let spacing = total / T::lit(n as f64);
    let raw_overlap = length - spacing;
    let (eff_len, adjustment) = if raw_overlap > length * T::lit(0.125) * slack {
        let shortened = T::lit(8.0 / 7.0) * spacing;
        (shortened, Some(T::one() - shortened / length))
    } else {
        (length, None)
    };
    let centers: Vec<T> = (0..n).map(|i| spacing * T::lit(i as f64)).collect();
    let mut sec = Sectorization::from_centers(curve, scale, eff_len, width, &centers);
    sec.requested_length = length;
    sec.length_adjustment = adjustment;
    Ok(sec)
}

impl<T: Scalar> Sectorization<T> {
    /// Unvalidated layout from sector centers given in arc length.
    pub fn from_centers(
        curve: &FermiCurve<T>,
        scale: Scale<T>,
        length: T,
        width: T,
        centers: &[T],
    ) -> Self {
        let half_across = scale.outer();
        let sectors: Vec<Sector<T>> = centers
            .iter()
            .enumerate()
            .map(|(index, &c)| {
                let c = curve.wrap_arclen(c);
                let phi = curve.phi_at_arclen(c);
                let p = curve.point_at(phi);
                let arc = ArcSpan::centered(c, length);
                Sector {
                    index,
                    scale,
                    center_phi: phi,
                    center_arclen: c,
                    length,
                    width,
                    rect: OrientedRect::new(
                        p.position,
                        p.tangent,
                        length * T::lit(0.5),
                        half_across,
                    ),
                    arc,
                    arc_interval: (
                        curve.phi_at_arclen(arc.start),
                        curve.phi_at_arclen(arc.end()),
                    ),
                }
            })
            .collect();
        let mut sec = Sectorization {
            curve: curve.clone(),
            scale,
            length,
            requested_length: length,
            width,
            sectors,
            overlaps: Vec::new(),
            length_adjustment: None,
        };
        sec.recompute_overlaps();
        sec
    }

    fn recompute_overlaps(&mut self) {
        let total = self.curve.length();
        let n = self.sectors.len();
        self.overlaps = (0..n)
            .map(|i| {
                let prev = &self.sectors[(i + n - 1) % n];
                self.sectors[i].arc.overlap(&prev.arc, total)
            })
            .collect();
        for (i, s) in self.sectors.iter_mut().enumerate() {
            s.index = i;
        }
    }

    /// Copy with sector `index` removed.
    pub fn without_sector(&self, index: usize) -> Self {
        let mut out = self.clone();
        out.sectors.remove(index);
        out.recompute_overlaps();
        out
    }

    pub fn curve(&self) -> &FermiCurve<T> {
        &self.curve
    }

    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    /// Uniform spacing of sector centers.
    pub fn spacing(&self) -> T {
        self.curve.length() / T::lit(self.sectors.len().max(1) as f64)
    }

    /// Sector anchors: the parameters of the sector centers.
    pub fn anchors(&self) -> Vec<T> {
        self.sectors.iter().map(|s| s.center_phi).collect()
    }

    /// `2ℓ / l` sector count bound.
    pub fn count_bound(&self) -> T {
        T::lit(2.0) * self.curve.length() / self.length
    }

    /// Indices of sectors whose arc contains the projection of `k` on the curve,
    /// provided `|dispersion(k)| ≤ M^{-j+1}`. At most two entries.
    pub fn locate(&self, k: Vec2<T>) -> Vec<usize> {
        let Ok(d) = self.curve.dispersion(k) else {
            return Vec::new();
        };
        if d.abs() > self.scale.outer() {
            return Vec::new();
        }
        let s = self.curve.arclen_at(self.curve.nearest_phi(k));
        self.sectors_containing_arclen(s)
    }

    /// Sectors whose arc contains the arc-length coordinate `s`.
    pub fn sectors_containing_arclen(&self, s: T) -> Vec<usize> {
        let total = self.curve.length();
        let n = self.sectors.len();
        if n == 0 {
            return Vec::new();
        }
        let guess = (self.curve.wrap_arclen(s) / self.spacing())
            .round()
            .to_usize()
            .unwrap_or(0);
        let mut out: Vec<usize> = (0..5)
            .map(|o| (guess + n + o - 2) % n)
            .filter(|&i| self.sectors[i].arc.contains(s, total))
            .collect();
        out.sort_unstable();
        out.dedup();
        if out.is_empty() || out.len() > 2 {
            // irregular layouts: fall back to a full scan
            out = (0..n)
                .filter(|&i| self.sectors[i].arc.contains(s, total))
                .collect();
        }
        out
    }
}

/// `locate` as a free function.
pub fn locate_sectors<T: Scalar>(sec: &Sectorization<T>, k: Vec2<T>) -> Vec<usize> {
    sec.locate(k)
}

/// A rule of the sectorization definition that a layout breaks.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Uncovered arc between two consecutive sectors.
    Cover {
        after: usize,
        before: usize,
        gap: f64,
    },
    /// Sector whose set of neighbors is not exactly its two cyclic neighbors.
    Neighbors { index: usize, neighbors: Vec<usize> },
    /// Consecutive overlap outside `[l/16, l/8]`.
    Overlap {
        first: usize,
        second: usize,
        overlap: f64,
        length: f64,
    },
    /// More than `2ℓ/l` sectors.
    Count { count: usize, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cover { after, before, gap } => {
                write!(f, "cover: gap of {gap:.3e} between sectors {after} and {before}")
            }
            Violation::Neighbors { index, neighbors } => {
                write!(f, "two-neighbor: sector {index} meets {neighbors:?}")
            }
            Violation::Overlap {
                first,
                second,
                overlap,
                length,
            } => write!(
                f,
                "overlap: sectors {first} and {second} overlap by {overlap:.3e}, outside [l/16, l/8] for l = {length:.3e}"
            ),
            Violation::Count { count, bound } => {
                write!(f, "count: {count} sectors exceed 2ℓ/l = {bound:.3}")
            }
        }
    }
}

/// Checks cover, two-neighbor, overlap-range and count rules. Empty means valid.
pub fn validate_sectorization<T: Scalar>(sec: &Sectorization<T>) -> Vec<Violation> {
    let total = sec.curve.length();
    let n = sec.sectors.len();
    let mut out = Vec::new();
    if n == 0 {
        out.push(Violation::Cover {
            after: 0,
            before: 0,
            gap: total.as_f64(),
        });
        return out;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sec.sectors[a]
            .arc
            .start
            .partial_cmp(&sec.sectors[b].arc.start)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let slack = T::lit(REL_TOL) * total;

    for w in 0..n {
        let (i, k) = (order[w], order[(w + 1) % n]);
        let a = &sec.sectors[i].arc;
        let b = &sec.sectors[k].arc;
        let mut gap = (b.start - a.end()) % total;
        if gap < -total * T::lit(0.5) {
            gap = gap + total;
        } else if gap > total * T::lit(0.5) {
            gap = gap - total;
        }
        if n == 1 {
            gap = total - a.length;
        }
        if gap > slack {
            out.push(Violation::Cover {
                after: i,
                before: k,
                gap: gap.as_f64(),
            });
        } else if n > 1 {
            let ov = a.overlap(b, total);
            let l = sec.length;
            let lo = l / T::lit(16.0) * (T::one() - T::lit(REL_TOL));
            let hi = l / T::lit(8.0) * (T::one() + T::lit(REL_TOL));
            if ov < lo || ov > hi {
                out.push(Violation::Overlap {
                    first: i,
                    second: k,
                    overlap: ov.as_f64(),
                    length: l.as_f64(),
                });
            }
        }
    }

    if n >= 3 {
        let max_len = sec
            .sectors
            .iter()
            .map(|s| s.arc.length)
            .fold(T::zero(), T::max);
        for w in 0..n {
            let i = order[w];
            let expected = {
                let mut e = vec![order[(w + n - 1) % n], order[(w + 1) % n]];
                e.sort_unstable();
                e
            };
            // an arc meeting `a` starts within [a.start − max_len, a.end]
            let a = &sec.sectors[i].arc;
            let mut neighbors = Vec::new();
            for step in 1..n {
                let k = order[(w + step) % n];
                if (sec.sectors[k].arc.start - a.start).modulo(total) > a.length + slack {
                    break;
                }
                neighbors.push(k);
            }
            for step in 1..n {
                let k = order[(w + n - step) % n];
                if (a.start - sec.sectors[k].arc.start).modulo(total) > max_len + slack {
                    break;
                }
                neighbors.push(k);
            }
            neighbors.retain(|&k| a.intersects(&sec.sectors[k].arc, total));
            neighbors.sort_unstable();
            neighbors.dedup();
            if neighbors != expected {
                out.push(Violation::Neighbors {
                    index: i,
                    neighbors,
                });
            }
        }
    }

    let bound = sec.count_bound();
    if T::lit(n as f64) > bound * (T::one() + T::lit(REL_TOL)) {
        out.push(Violation::Count {
            count: n,
            bound: bound.as_f64(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{PI, TAU};

    use super::*;
    use crate::curve::{make_curve, CurveSpec};

    fn circle() -> FermiCurve<f64> {
        make_curve(CurveSpec::circle(1.0)).unwrap()
    }

    #[test]
    fn circle_eighth_pi_layout() {
        let c = circle();
        // Λ must lie in [l², l]; the default M^{-j} is too thin for l = π/8.
        let sec = build_sectorization_with_width(&c, Scale::new(2, 10.0).unwrap(), PI / 8.0, 0.2)
            .unwrap();
        assert_eq!(sec.len(), 19); // ⌈128/7⌉
        assert!(validate_sectorization(&sec).is_empty());
        assert!(sec.len() <= 32);
        let adj = sec.length_adjustment.unwrap();
        assert!((adj - (1.0 - 128.0 / 133.0)).abs() < 1e-12, "{adj}");
        for &o in &sec.overlaps {
            assert!(o >= sec.length / 16.0 && o <= sec.length / 8.0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn too_long_sector() {
        let err = build_sectorization_with_width(&circle(), Scale::new(2, 10.0).unwrap(), TAU, 1.0)
            .unwrap_err();
        assert!(matches!(err, SectorError::SectorTooLong { .. }));
    }

    #[test]
    fn inadmissible_width() {
        let err = build_sectorization(&circle(), Scale::new(2, 10.0).unwrap(), 0.5).unwrap_err();
        assert!(matches!(err, SectorError::InadmissibleWidth { .. }));
        assert!(matches!(
            Scale::<f64>::new(1, 10.0),
            Err(SectorError::ScaleIndex(1))
        ));
        assert!(matches!(
            Scale::<f64>::new(2, 5.0),
            Err(SectorError::Base(_))
        ));
    }

    #[test]
    fn deleted_sector_names_the_gap() {
        let sec = anisotropic_sectorization(&circle(), Scale::new(2, 10.0).unwrap()).unwrap();
        let broken = sec.without_sector(5);
        let v = validate_sectorization(&broken);
        assert!(
            v.iter().any(|v| matches!(
                v,
                Violation::Cover {
                    after: 4,
                    before: 5,
                    ..
                }
            )),
            "{v:?}"
        );
    }

    #[test]
    fn half_overlap_is_rejected() {
        let c = circle();
        let l = c.length() / 20.0;
        let centers: Vec<f64> = (0..40).map(|i| i as f64 * l / 2.0).collect();
        let sec = Sectorization::from_centers(&c, Scale::new(2, 10.0).unwrap(), l, l * l, &centers);
        assert!((sec.overlaps[1] - l / 2.0).abs() < 1e-9);
        let v = validate_sectorization(&sec);
        assert!(
            v.iter().any(|v| matches!(v, Violation::Overlap { .. })),
            "{v:?}"
        );
    }

    #[test]
    fn locate_center_overlap_and_outside() {
        let c = circle();
        let scale = Scale::new(2, 10.0).unwrap();
        let sec = anisotropic_sectorization(&c, scale).unwrap();
        let s3 = &sec.sectors[3];
        assert_eq!(sec.locate(c.position(s3.center_phi)), vec![3]);
        // middle of the overlap between 3 and 4
        let mid = s3.arc.end() - sec.overlaps[4] / 2.0;
        assert_eq!(sec.locate(c.position(c.phi_at_arclen(mid))), vec![3, 4]);
        let out = c.position(s3.center_phi) * (1.0 + 2.0 * scale.outer());
        assert!(sec.locate(out).is_empty());
    }

    #[test]
    fn arc_span_distance() {
        let a = ArcSpan {
            start: 0.0f64,
            length: 1.0,
        };
        let b = ArcSpan {
            start: 2.0,
            length: 1.0,
        };
        assert!((a.distance(&b, 10.0) - 1.0).abs() < 1e-12);
        let c = ArcSpan {
            start: 8.5,
            length: 1.0,
        };
        assert!((a.distance(&c, 10.0) - 0.5).abs() < 1e-12);
        assert_eq!(
            a.distance(
                &ArcSpan {
                    start: 0.5,
                    length: 1.0
                },
                10.0
            ),
            0.0
        );
    }
}
