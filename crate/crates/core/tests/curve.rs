use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use sectorcount::curve::{make_curve, CurveSpec, FermiCurve};
use sectorcount::scalar::angle_diff;
use sectorcount::{CurveF32, Point};

fn curve_strategy() -> impl Strategy<Value = FermiCurve<f64>> {
    prop_oneof![
        (0.5..3.0f64).prop_map(CurveSpec::circle),
        (1.0..3.0f64, 0.5..1.5f64).prop_map(|(a, b)| CurveSpec::ellipse(a, b)),
        (2u32..6, -0.02..0.02f64, -0.02..0.02f64)
            .prop_map(|(m, a, b)| CurveSpec::radial_series(1.0, &[(m, a, b)])),
    ]
    .prop_map(|spec| make_curve(spec).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn antipode_is_an_involution_with_opposite_tangent(curve in curve_strategy(), phi in 0.0..TAU) {
        let a = curve.antipodal(phi).unwrap();
        let back = curve.antipodal(a).unwrap();
        prop_assert!(angle_diff(phi, back).abs() < 1e-9);
        prop_assert!((curve.tangent(phi) + curve.tangent(a)).norm() < 1e-9);
    }

    #[test]
    fn arclength_round_trip(curve in curve_strategy(), phi in 0.0..TAU) {
        let s = curve.arclen_at(phi);
        prop_assert!(s >= 0.0 && s < curve.length());
        prop_assert!(angle_diff(phi, curve.phi_at_arclen(s)).abs() < 1e-10);
    }

    #[test]
    fn curvature_is_tangent_turning_rate(curve in curve_strategy(), phi in 0.1..TAU - 0.1) {
        let h = 1e-4;
        let dpsi = curve.tangent_angle(phi + h) - curve.tangent_angle(phi - h);
        let ds = curve.arclen_at(phi + h) - curve.arclen_at(phi - h);
        let k = curve.curvature(phi);
        prop_assert!((dpsi / ds - k).abs() < 1e-6 * k.max(1.0), "{} vs {}", dpsi / ds, k);
    }

    #[test]
    fn normal_points_inward(curve in curve_strategy(), phi in 0.0..TAU) {
        let p = curve.point_at(phi);
        prop_assert!(curve.dispersion(p.position + p.normal * 1e-3).unwrap() < 0.0);
        prop_assert!(curve.dispersion(p.position - p.normal * 1e-3).unwrap() > 0.0);
    }
}

#[test]
fn length_matches_inscribed_polygon() {
    let curve = make_curve(CurveSpec::<f64>::radial_series(1.0, &[(3, 0.05, 0.0)])).unwrap();
    let m = 200_000;
    let pts: Vec<Point> = (0..m)
        .map(|i| curve.position(TAU * i as f64 / m as f64))
        .collect();
    let poly: f64 = (0..m).map(|i| (pts[(i + 1) % m] - pts[i]).norm()).sum();
    assert!(
        (poly - curve.length()).abs() < 1e-8,
        "{poly} vs {}",
        curve.length()
    );
}

#[test]
fn single_precision_circle() {
    let c: CurveF32 = make_curve(CurveSpec::circle(1.0)).unwrap();
    assert!((c.length() - 2.0 * std::f32::consts::PI).abs() < 1e-4);
    let a = c.antipodal(0.5).unwrap();
    assert!((a - (0.5 + PI as f32)).abs() < 1e-4);
}
