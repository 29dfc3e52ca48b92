use std::f64::consts::TAU;

use proptest::prelude::*;
use sectorcount::curve::{make_curve, CurveSpec, FermiCurve};
use sectorcount::sectorization::{
    anisotropic_sectorization, build_sectorization_with_width, validate_sectorization, Scale,
    Sectorization,
};
use sectorcount::Point;

fn curves() -> Vec<FermiCurve<f64>> {
    vec![
        make_curve(CurveSpec::circle(1.0)).unwrap(),
        make_curve(CurveSpec::ellipse(2.0, 1.0)).unwrap(),
        make_curve(CurveSpec::radial_series(1.0, &[(3, 0.05, 0.0)])).unwrap(),
    ]
}

/// Nearest curve parameter by dense scan and golden-section refinement.
fn project(curve: &FermiCurve<f64>, k: Point) -> f64 {
    let m = 20_000;
    let d = |phi: f64| (curve.position(phi) - k).norm();
    let best = (0..m)
        .map(|i| TAU * i as f64 / m as f64)
        .min_by(|a, b| d(*a).total_cmp(&d(*b)))
        .unwrap();
    let (mut lo, mut hi) = (best - TAU / m as f64, best + TAU / m as f64);
    for _ in 0..100 {
        let a = lo + (hi - lo) * 0.382;
        let b = lo + (hi - lo) * 0.618;
        if d(a) < d(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    (0.5 * (lo + hi)).rem_euclid(TAU)
}

fn brute_locate(sec: &Sectorization<f64>, k: Point) -> Vec<usize> {
    let curve = sec.curve();
    if curve.dispersion(k).unwrap().abs() > sec.scale.outer() {
        return Vec::new();
    }
    let s = curve.arclen_at(project(curve, k));
    let total = curve.length();
    sec.sectors
        .iter()
        .filter(|x| x.arc.contains(s, total))
        .map(|x| x.index)
        .collect()
}

#[test]
fn every_scale_validates() {
    for curve in curves() {
        for j in 2..=6 {
            let sec = anisotropic_sectorization(&curve, Scale::new(j, 10.0).unwrap()).unwrap();
            assert!(validate_sectorization(&sec).is_empty(), "j = {j}");
            assert!((sec.len() as f64) <= sec.count_bound());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn explicit_lengths_validate(which in 0usize..3, length in 0.02..0.5f64, t in 0.0..1.0f64) {
        let curve = &curves()[which];
        let width = length * length + t * (length - length * length);
        let sec = build_sectorization_with_width(curve, Scale::new(2, 10.0).unwrap(), length, width).unwrap();
        prop_assert!(validate_sectorization(&sec).is_empty());
        prop_assert!(sec.length <= length);
    }

    #[test]
    fn locate_matches_brute_force(which in 0usize..3, j in 2u32..5, phi in 0.0..TAU, off in -1.2..1.2f64) {
        let curve = &curves()[which];
        let sec = anisotropic_sectorization(curve, Scale::new(j, 10.0).unwrap()).unwrap();
        let p = curve.point_at(phi);
        let k = p.position + p.normal * (off * sec.scale.outer());
        let mut got = sec.locate(k);
        got.sort_unstable();
        let want = brute_locate(&sec, k);
        // skip points within rounding of an arc end or of the shell boundary
        let total = curve.length();
        let s = curve.arclen_at(project(curve, k));
        let near_end = sec.sectors.iter().any(|x| {
            let a = (s - x.arc.start).rem_euclid(total);
            let b = (s - x.arc.end()).rem_euclid(total);
            a.min(total - a) < 1e-9 || b.min(total - b) < 1e-9
        });
        let near_shell = (curve.dispersion(k).unwrap().abs() - sec.scale.outer()).abs() < 1e-9;
        if !near_end && !near_shell {
            prop_assert_eq!(got, want);
        }
    }
}
