use std::f64::consts::TAU;

use proptest::prelude::*;
use sectorcount::curve::{make_curve, CurveSpec, FermiCurve};
use sectorcount::parallelogram::{preimage_count, PreimageCount};
use sectorcount::Point;

fn curves() -> Vec<FermiCurve<f64>> {
    vec![
        make_curve(CurveSpec::circle(1.0)).unwrap(),
        make_curve(CurveSpec::ellipse(2.0, 1.0)).unwrap(),
        make_curve(CurveSpec::radial_series(1.0, &[(3, 0.05, 0.0)])).unwrap(),
    ]
}

/// Sign changes of `|q − P(φ)| − r(q − P(φ))` on a fine grid, and the smallest
/// `|g|` at a grid local minimum of `|g|` (small values flag near-tangencies).
fn oracle(curve: &FermiCurve<f64>, q: Point) -> (usize, f64) {
    let m = 100_000;
    let g: Vec<f64> = (0..m)
        .map(|i| {
            curve
                .dispersion(q - curve.position(TAU * i as f64 / m as f64))
                .unwrap()
        })
        .collect();
    let mut changes = 0;
    let mut closest = f64::INFINITY;
    for i in 0..m {
        let (a, b, c) = (g[(i + m - 1) % m], g[i], g[(i + 1) % m]);
        if (b > 0.0) != (c > 0.0) {
            changes += 1;
        }
        if b.abs() <= a.abs()
            && b.abs() <= c.abs()
            && (a > 0.0) == (b > 0.0)
            && (b > 0.0) == (c > 0.0)
        {
            closest = closest.min(b.abs());
        }
    }
    (changes, closest)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn counts_match_fine_scan(which in 0usize..3, angle in 0.0..TAU, radius in 0.05..1.0f64) {
        let curve = &curves()[which];
        let q = Point::from_angle(angle) * (radius * 2.0 * curve.r_max());
        let (want, closest) = oracle(curve, q);
        let got = preimage_count(curve, q, 1e-9).unwrap();
        for &(a, b) in &got.solutions {
            prop_assert!((curve.position(a) + curve.position(b) - q).norm() < 1e-8);
        }
        if closest > 1e-6 {
            prop_assert_eq!(got.count, PreimageCount::Finite(want));
        }
    }
}

#[test]
fn circle_counts() {
    let curve = make_curve(CurveSpec::circle(1.0)).unwrap();
    for r in [0.1, 0.9, 1.5, 1.99] {
        let res = preimage_count(&curve, Point::new(r * 0.6, r * 0.8), 1e-9).unwrap();
        assert_eq!(res.count, PreimageCount::Finite(2), "|q| = {r}");
    }
    let far = preimage_count(&curve, Point::new(2.5, 0.0), 1e-9).unwrap();
    assert_eq!(far.count, PreimageCount::Finite(0));
    let origin = preimage_count(&curve, Point::zero(), 1e-9).unwrap();
    assert_eq!(origin.count, PreimageCount::Infinite);
}
