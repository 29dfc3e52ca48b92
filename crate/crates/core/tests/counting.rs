use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use sectorcount::curve::{make_curve, CurveSpec, FermiCurve};
use sectorcount::harness::mom_configuration;
use sectorcount::momentum::{
    enumerate_cons, enumerate_mom, minkowski_feasible, ConsQuery, CountError, MomQuery,
};
use sectorcount::sectorization::{anisotropic_sectorization, ArcSpan, Scale};
use sectorcount::{Point, Rect};

/// Hull of all corner sums by gift wrapping.
fn corner_hull(rects: &[Rect]) -> Vec<Point> {
    let mut pts = vec![Point::zero()];
    for r in rects {
        pts = pts
            .iter()
            .flat_map(|p| r.corners().map(|c| *p + c))
            .collect();
    }
    let start = *pts
        .iter()
        .min_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)))
        .unwrap();
    let mut hull = vec![start];
    loop {
        let cur = *hull.last().unwrap();
        let mut next = pts[0];
        for &p in &pts {
            if next == cur {
                next = p;
                continue;
            }
            let c = (next - cur).cross(p - cur);
            if c < 0.0 || (c == 0.0 && (p - cur).norm() > (next - cur).norm()) {
                next = p;
            }
        }
        if next == start || hull.len() > pts.len() {
            break;
        }
        hull.push(next);
    }
    hull
}

fn inside(poly: &[Point], p: Point) -> bool {
    (0..poly.len()).all(|i| (poly[(i + 1) % poly.len()] - poly[i]).cross(p - poly[i]) >= 0.0)
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let t = ((p - a).dot(b - a) / (b - a).norm_sq()).clamp(0.0, 1.0);
    (p - (a + (b - a) * t)).norm()
}

fn cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o = |p: Point, q: Point, r: Point| (q - p).cross(r - p);
    o(a, b, c) * o(a, b, d) < 0.0 && o(c, d, a) * o(c, d, b) < 0.0
}

/// Exact convex polygon intersection and the smallest vertex-to-edge distance.
fn polygons_meet(p: &[Point], q: &[Point]) -> (bool, f64) {
    let mut meet = p.iter().any(|&v| inside(q, v)) || q.iter().any(|&v| inside(p, v));
    let mut gap = f64::INFINITY;
    for i in 0..p.len() {
        let (a, b) = (p[i], p[(i + 1) % p.len()]);
        for j in 0..q.len() {
            let (c, d) = (q[j], q[(j + 1) % q.len()]);
            meet |= cross(a, b, c, d);
            gap = gap.min(seg_dist(a, c, d)).min(seg_dist(c, a, b));
        }
    }
    (meet, gap)
}

fn rect_strategy(spread: f64) -> impl Strategy<Value = Rect> {
    (
        -spread..spread,
        -spread..spread,
        0.0..PI,
        0.05..0.5f64,
        0.05..0.5f64,
    )
        .prop_map(|(x, y, a, h0, h1)| Rect::new(Point::new(x, y), Point::from_angle(a), h0, h1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn feasibility_matches_polygon_oracle(
        rects in prop::collection::vec(rect_strategy(1.0), 1..4),
        target in rect_strategy(2.5),
    ) {
        let (meet, gap) = polygons_meet(&corner_hull(&rects), &target.corners());
        if gap > 1e-9 {
            prop_assert_eq!(minkowski_feasible(&rects, &target), meet);
        }
    }
}

#[test]
fn feasibility_examples() {
    let sq = |x: f64, y: f64| Rect::axis_aligned(Point::new(x, y), 0.5, 0.5);
    assert!(minkowski_feasible(
        &[sq(0.0, 0.0), sq(1.0, 0.0)],
        &sq(1.0, 0.0)
    ));
    assert!(!minkowski_feasible(
        &[sq(0.0, 0.0), sq(1.0, 0.0)],
        &sq(10.0, 10.0)
    ));
}

fn circle() -> FermiCurve<f64> {
    make_curve(CurveSpec::circle(1.0)).unwrap()
}

#[test]
fn mom_count_is_invariant_under_leg_permutation() {
    let curve = circle();
    let sec = anisotropic_sectorization(&curve, Scale::new(3, 10.0).unwrap()).unwrap();
    let centers = mom_configuration(&curve, 0.3, 3).unwrap();
    let q = MomQuery::centered(&sec, 0.3, &centers, 3.0 * sec.length);
    let base = enumerate_mom(&q).unwrap().exact_count;
    assert!(base > 0);
    for perm in [[1, 2, 3, 4], [4, 3, 2, 1], [2, 4, 1, 3], [3, 1, 4, 2]] {
        let mut p = q.clone();
        p.intervals = std::iter::once(q.intervals[0])
            .chain(perm.iter().map(|&i| q.intervals[i]))
            .collect();
        assert_eq!(enumerate_mom(&p).unwrap().exact_count, base);
    }
}

#[test]
fn mom_count_grows_with_intervals() {
    let curve = make_curve(CurveSpec::ellipse(2.0, 1.0)).unwrap();
    let sec = anisotropic_sectorization(&curve, Scale::new(3, 10.0).unwrap()).unwrap();
    let centers = mom_configuration(&curve, 0.3, 2).unwrap();
    let q = MomQuery::centered(&sec, 0.3, &centers, 2.0 * sec.length);
    let base = enumerate_mom(&q).unwrap().exact_count;
    for leg in 0..3 {
        let mut prev = base;
        for grow in [1.5, 3.0] {
            let mut wider = q.clone();
            let iv = q.intervals[leg];
            wider.intervals[leg] = ArcSpan::centered(iv.center(), iv.length * grow);
            let c = enumerate_mom(&wider).unwrap().exact_count;
            assert!(c >= prev, "leg {leg}: {c} < {prev}");
            prev = c;
        }
    }
}

#[test]
fn balanced_legs_miss_the_target() {
    let curve = circle();
    let sec = anisotropic_sectorization(&curve, Scale::new(3, 10.0).unwrap()).unwrap();
    // three legs summing to the origin cannot reach a point on the unit circle
    let centers = [0.0, TAU / 3.0, 2.0 * TAU / 3.0];
    let q = MomQuery::centered(&sec, 1.0, &centers, 2.0 * sec.length);
    assert_eq!(enumerate_mom(&q).unwrap().exact_count, 0);
}

#[test]
fn constructed_triangle_is_counted() {
    let curve = make_curve(CurveSpec::radial_series(1.0, &[(3, 0.05, 0.0)])).unwrap();
    let sec = anisotropic_sectorization(&curve, Scale::new(3, 10.0).unwrap()).unwrap();
    let p = sec.sectors[5].center_phi;
    let centers = mom_configuration(&curve, p, 2).unwrap();
    let q = MomQuery::centered(&sec, p, &centers, 2.0 * sec.length);
    assert!(enumerate_mom(&q).unwrap().exact_count >= 1);
}

#[test]
fn tuple_limit_is_enforced() {
    let curve = circle();
    let sec = anisotropic_sectorization(&curve, Scale::new(3, 10.0).unwrap()).unwrap();
    let centers = mom_configuration(&curve, 0.3, 2).unwrap();
    let mut q = MomQuery::centered(&sec, 0.3, &centers, 4.0 * sec.length);
    q.max_tuples = 10.0;
    assert!(matches!(
        enumerate_mom(&q),
        Err(CountError::TooManyTuples { .. })
    ));
}

#[test]
fn cons_scale_order_and_ratio() {
    let curve = circle();
    let coarse = anisotropic_sectorization(&curve, Scale::new(2, 10.0).unwrap()).unwrap();
    let same = ConsQuery::new(&coarse, &coarse, 0, vec![10, 20]);
    assert!(matches!(
        enumerate_cons(&same),
        Err(CountError::ScaleOrder { i: 2, j: 2 })
    ));
    let fine = anisotropic_sectorization(&curve, Scale::new(3, 10.0).unwrap()).unwrap();
    let q = ConsQuery::new(&fine, &coarse, 0, vec![24, 48]);
    assert!(matches!(
        enumerate_cons(&q),
        Err(CountError::RatioTooSmall { .. })
    ));
    let mut relaxed = q.clone();
    relaxed.strict = false;
    let r = enumerate_cons(&relaxed).unwrap();
    assert!(!r.hypotheses_hold);
    assert!(r.certifying_pair.is_some());
}
