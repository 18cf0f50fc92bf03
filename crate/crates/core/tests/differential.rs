use std::f64::consts::PI;

use proptest::prelude::*;
use spectra_rh::differential::{PeriodPath, Pole, PoleRef, QuadraticDifferential};
use spectra_rh::{Error, C64};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn a1() -> QuadraticDifferential {
    QuadraticDifferential::polynomial(&[-1.0, 0.0, 1.0]).unwrap()
}

#[test]
fn critical_point_examples() {
    let q = QuadraticDifferential::polynomial(&[0.0, 1.0]).unwrap();
    let cp = q.critical_points().unwrap();
    assert_eq!(cp.zeros.len(), 1);
    assert!(cp.zeros[0].norm() < 1e-14);
    assert_eq!(cp.infinity_order, 5);

    let cp = a1().critical_points().unwrap();
    assert!((cp.zeros[0] + 1.0).norm() < 1e-13 && (cp.zeros[1] - 1.0).norm() < 1e-13);
    assert_eq!(cp.infinity_order, 6);

    let q = QuadraticDifferential::new(vec![c(0.0, 0.0), c(1.0, 0.0)], vec![Pole { z: c(2.0, 0.0), order: 2, sign: 1 }]).unwrap();
    let cp = q.critical_points().unwrap();
    assert_eq!(cp.poles, vec![(c(2.0, 0.0), 2)]);
    assert_eq!(cp.infinity_order, 3);
}

#[test]
fn double_zero_rejected() {
    let q = QuadraticDifferential::polynomial(&[1.0, 2.0, 1.0]).unwrap();
    assert!(matches!(q.zeros(), Err(Error::NonSimpleZero(_))));
}

#[test]
fn degree_identity() {
    // zeros (with infinity) minus pole orders (with infinity) = -4
    let cases = vec![
        a1(),
        QuadraticDifferential::polynomial(&[1.0, 0.0, 0.0, 1.0]).unwrap(),
        QuadraticDifferential::new(
            vec![c(1.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)],
            vec![Pole { z: c(0.0, 0.0), order: 2, sign: 1 }, Pole { z: c(1.0, 0.0), order: 3, sign: 1 }],
        )
        .unwrap(),
    ];
    for q in cases {
        let cp = q.critical_points().unwrap();
        let inf = cp.infinity_order;
        let zeros = cp.zeros.len() as i32 + if inf < 0 { -inf } else { 0 };
        let poles: i32 = cp.poles.iter().map(|p| p.1 as i32).sum::<i32>() + inf.max(0);
        assert_eq!(zeros - poles, -4);
    }
}

#[test]
fn residue_examples() {
    let q = QuadraticDifferential::new(vec![c(1.0, 0.0)], vec![Pole { z: c(0.0, 0.0), order: 2, sign: 1 }]).unwrap();
    let r = q.residue(Some(c(0.0, 0.0)), 1).unwrap();
    assert!((r.residue - c(0.0, 4.0 * PI)).norm() < 1e-12);
    let m = q.residue(Some(c(0.0, 0.0)), -1).unwrap();
    assert!((m.residue + r.residue).norm() < 1e-14);

    let q = QuadraticDifferential::new(vec![c(-0.25, 0.0)], vec![Pole { z: c(0.0, 0.0), order: 2, sign: 1 }]).unwrap();
    let r = q.residue(Some(c(0.0, 0.0)), 1).unwrap();
    assert!((r.residue.norm() - 2.0 * PI).abs() < 1e-12 && r.residue.im.abs() < 1e-12);
    assert!((r.residue * r.residue + 16.0 * PI * PI * r.r).norm() < 1e-10);

    assert!(matches!(a1().residue(Some(c(1.0, 0.0)), 1), Err(Error::NotDoublePole(_))));
}

#[test]
fn residue_at_infinity_matches_chart_and_series() {
    // (z^2 + i z + 2) / (z^2 (z-1)^2): infinity is a double pole
    let q = QuadraticDifferential::new(
        vec![c(2.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)],
        vec![Pole { z: c(0.0, 0.0), order: 2, sign: 1 }, Pole { z: c(1.0, 0.0), order: 2, sign: 1 }],
    )
    .unwrap();
    assert_eq!(q.infinity_order(), 2);
    let r_inf = q.residue(None, 1).unwrap();
    let w = q.at_infinity_chart();
    let r_w = w.residue(Some(c(0.0, 0.0)), 1).unwrap();
    assert!((r_inf.residue - r_w.residue).norm() < 1e-12);
    // series oracle: r = lim z^2 phi(z), extrapolated from two large radii
    let z1 = c(1e3, 0.0);
    let z2 = c(2e3, 0.0);
    let f1 = z1 * z1 * q.eval(z1);
    let f2 = z2 * z2 * q.eval(z2);
    let richardson = f2 * 2.0 - f1;
    assert!((richardson - r_inf.r).norm() < 1e-5);
}

#[test]
fn chart_change_is_an_involution() {
    let q = QuadraticDifferential::new(
        vec![c(1.0, 1.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        vec![Pole { z: c(1.0, 2.0), order: 2, sign: -1 }],
    )
    .unwrap();
    let back = q.at_infinity_chart().at_infinity_chart();
    for z in [c(0.3, 0.1), c(-1.0, 2.0)] {
        assert!((back.eval(z) - q.eval(z)).norm() < 1e-12 * q.eval(z).norm());
    }
    // pullback rule phi_w(w) = w^-4 phi(1/w)
    let w = q.at_infinity_chart();
    let pt = c(0.4, -0.7);
    assert!((w.eval(pt) - q.eval(1.0 / pt) / pt.powu(4)).norm() < 1e-10 * w.eval(pt).norm());
}

#[test]
fn rotation_examples() {
    let q = a1();
    let r = q.rotate(PI);
    for (a, b) in q.numerator.iter().zip(&r.numerator) {
        assert!((a - b).norm() < 1e-14);
    }
    let r = q.rotate(PI / 2.0);
    for (a, b) in q.numerator.iter().zip(&r.numerator) {
        assert!((a + b).norm() < 1e-14);
    }
}

#[test]
fn asymptotic_direction_examples() {
    let q = QuadraticDifferential::polynomial(&[0.0, 1.0]).unwrap();
    let mut args: Vec<f64> = q.asymptotic_directions(PoleRef::Infinity).iter().map(|d| d.arg().rem_euclid(2.0 * PI)).collect();
    args.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (a, e) in args.iter().zip([0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]) {
        assert!((a - e).abs() < 1e-12);
    }
    // the real part of int sqrt(phi) grows along each direction: phi(z) dz^2 > 0 there
    for d in q.asymptotic_directions(PoleRef::Infinity) {
        let z = d * 1e3;
        let v = q.eval(z) * d * d;
        assert!(v.re > 0.0 && v.im.abs() < 1e-9 * v.re);
    }
    // m = 3 with a0 = 1
    let q = QuadraticDifferential::new(vec![c(1.0, 0.0)], vec![Pole { z: c(0.0, 0.0), order: 3, sign: 1 }]);
    // 1/z^3 has infinity of order 1 (simple pole), still valid
    let q = q.unwrap();
    let d = q.asymptotic_directions(PoleRef::Finite(0));
    assert_eq!(d.len(), 1);
    assert!((d[0] - 1.0).norm() < 1e-14);
}

#[test]
fn rotating_turns_directions() {
    let q = QuadraticDifferential::polynomial(&[1.0, 0.0, 0.0, 1.0]).unwrap();
    let theta = 0.37;
    let m = q.infinity_order();
    let d0 = q.asymptotic_directions(PoleRef::Infinity);
    let d1 = q.rotate(theta).asymptotic_directions(PoleRef::Infinity);
    for (a, b) in d0.iter().zip(&d1) {
        // at infinity, turning by 2 theta/(m-2) in z
        let turn = (b / a).arg();
        assert!((turn - 2.0 * theta / (m - 2) as f64).abs() < 1e-12);
    }
}

#[test]
fn surfaces_of_examples() {
    let s = QuadraticDifferential::polynomial(&[1.0, 0.0, 0.0, 1.0]).unwrap().marked_bordered_surface();
    assert_eq!((s.boundary_marks.clone(), s.punctures), (vec![5], 0));
    let s = a1().marked_bordered_surface();
    assert_eq!((s.boundary_marks.clone(), s.punctures), (vec![4], 0));
    let q = QuadraticDifferential::new(vec![c(0.0, 0.0), c(1.0, 0.0)], vec![Pole { z: c(2.0, 0.0), order: 2, sign: 1 }]).unwrap();
    let s = q.marked_bordered_surface();
    assert_eq!((s.boundary_marks.clone(), s.punctures), (vec![1], 1));
}

#[test]
fn a1_period_closed_form() {
    let q = a1();
    let p = PeriodPath { waypoints: vec![c(-1.0, 0.0), c(1.0, 0.0)], sheet: 1 };
    let z = q.period(&p).unwrap();
    assert!((z - c(0.0, PI)).norm() < 1e-10, "{z}");
    let rev = PeriodPath { waypoints: vec![c(1.0, 0.0), c(-1.0, 0.0)], sheet: 1 };
    // reversed start is 0.9 where sqrt(z^2-1) principal = +i sqrt(1-z^2): same sheet
    assert!((q.period(&rev).unwrap() + z).norm() < 1e-10);
    let other = PeriodPath { waypoints: vec![c(-1.0, 0.0), c(1.0, 0.0)], sheet: -1 };
    assert!((q.period(&other).unwrap() + z).norm() < 1e-10);
}

#[test]
fn bent_path_gives_same_period() {
    let q = a1();
    let p = PeriodPath { waypoints: vec![c(-1.0, 0.0), c(-0.5, 0.7), c(0.6, 0.4), c(1.0, 0.0)], sheet: 1 };
    let straight = q.period(&PeriodPath { waypoints: vec![c(-1.0, 0.0), c(1.0, 0.0)], sheet: 1 }).unwrap();
    let bent = q.period(&p).unwrap();
    assert!((bent.abs_diff(straight)) < 1e-10 || (bent + straight).norm() < 1e-10);
}

trait AbsDiff {
    fn abs_diff(&self, o: C64) -> f64;
}
impl AbsDiff for C64 {
    fn abs_diff(&self, o: C64) -> f64 {
        (self - o).norm()
    }
}

#[test]
fn path_near_zero_is_ambiguous() {
    let q = a1();
    let p = PeriodPath { waypoints: vec![c(-1.0, 0.0), c(1.0, 1e-6), c(0.0, 2.0)], sheet: 1 };
    assert!(matches!(q.period(&p), Err(Error::SheetAmbiguity(_))));
}

#[test]
fn cubic_period_against_elementary_antiderivative() {
    // phi = z (z - 1)(z + 1)... instead use (z - a)(z - b) rescaled: the period
    // between the zeros of (z-a)(z-b) is i pi (b-a)^2 / 4 up to sign.
    let a = c(0.3, -0.2);
    let b = c(1.7, 0.9);
    let q = QuadraticDifferential::new(vec![a * b, -(a + b), c(1.0, 0.0)], vec![]).unwrap();
    let z = q.period(&PeriodPath { waypoints: vec![a, b], sheet: 1 }).unwrap();
    let expect = c(0.0, PI) * (b - a) * (b - a) / 4.0;
    assert!((z - expect).norm() < 1e-10 || (z + expect).norm() < 1e-10, "{z} vs {expect}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn residue_sign_law(re in -3.0f64..3.0, im in -3.0f64..3.0, pz in -2.0f64..2.0) {
        prop_assume!(re.abs() + im.abs() > 0.1);
        let q = QuadraticDifferential::new(vec![c(re, im), c(1.0, 0.0)], vec![Pole { z: c(pz, 0.5), order: 2, sign: 1 }]).unwrap();
        let p = q.residue(Some(c(pz, 0.5)), 1).unwrap();
        let m = q.residue(Some(c(pz, 0.5)), -1).unwrap();
        prop_assert!((p.residue + m.residue).norm() < 1e-12);
    }

    #[test]
    fn period_rotation_law(theta in -1.5f64..1.5) {
        // Z of e^{-2i theta} phi along the same path and continued sheet is e^{-i theta} Z
        let q = a1();
        let path = [c(-1.0, 0.0), c(0.0, 0.3), c(1.0, 0.0)];
        let base = q.period_tracked(&path, q.eval(c(-0.95, 0.015)).sqrt()).unwrap();
        let r = q.rotate(theta);
        let want = base.start_sqrt * C64::from_polar(1.0, -theta);
        let rot = r.period_tracked(&path, want).unwrap();
        prop_assert!((rot.z - base.z * C64::from_polar(1.0, -theta)).norm() < 1e-9);
    }

    #[test]
    fn concatenation_adds(x in -0.8f64..0.8, y in 0.2f64..1.0) {
        let q = QuadraticDifferential::polynomial(&[0.5, -1.0, 0.0, 1.0]).unwrap();
        let zs = q.zeros().unwrap();
        let mid = c(x, y);
        let s0 = c(0.0, 1.0);
        let whole = q.period_tracked(&[zs[0], mid, zs[1]], s0).unwrap();
        let a = q.period_tracked(&[zs[0], mid], s0).unwrap();
        let b = q.period_tracked(&[mid, zs[1]], a.end_sqrt).unwrap();
        prop_assert!((whole.z - a.z - b.z).norm() < 1e-9);
    }
}
