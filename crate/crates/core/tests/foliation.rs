use std::f64::consts::PI;

use proptest::prelude::*;

use spectra_rh::differential::{Pole, PoleRef, QuadraticDifferential};
use spectra_rh::foliation::{bps_invariants, decompose, is_generic, Foliation, FoliationConfig, Termination};
use spectra_rh::surface::{Mark, Side};
use spectra_rh::{Error, C64};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn a1() -> QuadraticDifferential {
    QuadraticDifferential::polynomial(&[-1.0, 0.0, 1.0]).unwrap()
}

fn fol(q: &QuadraticDifferential) -> Foliation {
    Foliation::new(q, FoliationConfig::default()).unwrap()
}

#[test]
fn a1_single_saddle() {
    let f = fol(&a1());
    let t = f.find_saddles().unwrap();
    assert_eq!(t.saddles.len(), 1);
    let s = &t.saddles[0];
    assert!((s.phase - 0.5).abs() < 1e-8);
    assert!((s.period - c(0.0, PI)).norm() < 1e-8);
}

fn cubic(c0: C64) -> QuadraticDifferential {
    QuadraticDifferential::new(vec![c0, c(-3.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)], vec![]).unwrap()
}

/// int_0^1 sqrt(1 - x^3) dx by Simpson after x = 1 - s^2.
fn beta_integral() -> f64 {
    let n = 2000;
    let f = |s: f64| {
        let x = 1.0 - s * s;
        2.0 * s * s * (1.0 + x + x * x).sqrt()
    };
    let h = 1.0 / n as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn a1_wkb_is_square_with_one_diagonal() {
    let f = fol(&a1());
    let w = f.wkb_triangulation(0.0).unwrap();
    assert_eq!(w.triangulation.triangles.len(), 2);
    assert_eq!(w.triangulation.n(), 1);
    assert_eq!(w.strips.len(), 1);
    assert!((w.strips[0].period - c(0.0, PI)).norm() < 1e-8);
    let marks: std::collections::BTreeSet<_> = w.corners.iter().flatten().cloned().collect();
    assert_eq!(marks.len(), 4);
}

#[test]
fn cubic_wkb_is_pentagon_and_periods_match_beta_oracle() {
    let q = QuadraticDifferential::polynomial(&[1.0, 0.0, 0.0, 1.0]).unwrap();
    let f = fol(&q);
    let w = f.wkb_triangulation(0.0).unwrap();
    assert_eq!(w.triangulation.triangles.len(), 3);
    assert_eq!(w.strips.len(), 2);
    assert_eq!(w.strips.len(), q.marked_bordered_surface().dimension() as usize);
    let i = beta_integral();
    for s in &w.strips {
        let (za, zb) = (f.zeros[s.a.0], f.zeros[s.b.0]);
        let oracle = (zb - za) * 2.0 * i;
        assert!(
            (s.period - oracle).norm() < 1e-7 || (s.period + oracle).norm() < 1e-7,
            "{} vs {}",
            s.period,
            oracle
        );
        assert!((s.period * C64::from_polar(1.0, 0.0)).im > 0.0);
    }
}

#[test]
fn quartic_wkb_is_hexagon() {
    let q = QuadraticDifferential::new(
        vec![c(0.3, 0.2), c(-1.0, 0.1), c(0.2, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        vec![],
    )
    .unwrap();
    let f = fol(&q);
    let th = 0.137;
    let w = f.wkb_triangulation(th).unwrap();
    assert_eq!(w.triangulation.triangles.len(), 4);
    assert_eq!(w.strips.len(), 3);
    let rot = C64::from_polar(1.0, -PI * th);
    for s in &w.strips {
        assert!((s.period * rot).im > 0.0);
    }
    for (a, t) in w.triangulation.triangles.iter().enumerate() {
        for k in 0..3 {
            if let Side::Segment(m) = t.sides[k] {
                assert_eq!(t.corners[k], Mark::Boundary(m), "triangle {a}");
            }
        }
    }
}

#[test]
fn punctured_wkb_signing_puts_residues_in_upper_half_plane() {
    // (z^2 - 1) dz^2 / (z - 3)^2: a puncture and a pole of order 4 at infinity
    let q = QuadraticDifferential::new(
        vec![c(-1.0, -0.3), c(0.0, 0.0), c(1.0, 0.3)],
        vec![Pole { z: c(3.0, 0.0), order: 2, sign: 1 }],
    )
    .unwrap();
    let f = fol(&q);
    let th = 0.21;
    let w = f.wkb_triangulation(th).unwrap();
    assert_eq!(w.punctures.len(), 1);
    assert!(w.corners.iter().flatten().any(|m| *m == Mark::Puncture(0)));
    let res = q.residue_at(w.punctures[0], w.signing[0]).unwrap().residue * C64::from_polar(1.0, -PI * th);
    assert!(res.im > 0.0 || (res.im == 0.0 && res.re < 0.0));
    assert_eq!(w.strips.len(), q.marked_bordered_surface().dimension() as usize);
    assert!(w.tagged().is_ok());
}

#[test]
fn two_poles_of_high_order_are_unsupported() {
    let q = QuadraticDifferential::new(vec![c(1.0, 0.0)], vec![Pole { z: c(0.0, 0.0), order: 3, sign: 1 }]).unwrap();
    let f = fol(&q);
    assert!(matches!(f.wkb_triangulation(0.1), Err(Error::UnsupportedTopology(_))));
}

#[test]
fn escape_directions_of_linear_differential() {
    let q = QuadraticDifferential::polynomial(&[0.0, 1.0]).unwrap();
    let f = fol(&q);
    let ang = f.prong_angles(0, 0.0);
    for (k, a) in ang.iter().enumerate() {
        assert!((a - 2.0 * PI * k as f64 / 3.0).abs() < 1e-12);
        let t = f.prong_trajectory(0, k, 0.0).unwrap();
        assert!(matches!(t.termination, Termination::PoleSector { pole: PoleRef::Infinity, .. }));
        // prongs of z dz^2 are straight rays
        for z in t.points.iter().skip(1) {
            let d = (z / C64::from_polar(1.0, *a)).arg().abs();
            assert!(d < 1e-6, "prong {k} bends by {d}");
        }
    }
    let marks: std::collections::BTreeSet<u32> = (0..3)
        .map(|k| match f.prong_trajectory(0, k, 0.0).unwrap().termination {
            Termination::PoleSector { mark, .. } => mark,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(marks.len(), 3);
}

#[test]
fn prongs_are_evenly_spaced_and_leave_along_their_angle() {
    let q = cubic(c(0.4, 0.7));
    let f = fol(&q);
    for a in 0..3 {
        for th in [0.0, 0.3, 0.77] {
            let ang = f.prong_angles(a, th);
            for k in 0..3 {
                let d = ang[(k + 1) % 3] - ang[k];
                assert!(((d).rem_euclid(2.0 * PI) - 2.0 * PI / 3.0).abs() < 1e-12);
                // phi (dz)^2 along the prong has phase 2 pi theta
                let dz = C64::from_polar(1.0, ang[k]);
                let z = f.zeros[a] + dz * 1e-5;
                let v = q.eval(z) * dz * dz * C64::from_polar(1.0, -2.0 * PI * th);
                assert!(v.im.abs() < 1e-3 * v.norm() && v.re > 0.0);
            }
        }
    }
}

#[test]
fn double_pole_leaves_close_up() {
    // -dz^2 / z^2: horizontal leaves are circles |z| = const
    let q = QuadraticDifferential::new(vec![c(-1.0, 0.0)], vec![Pole { z: c(0.0, 0.0), order: 2, sign: 1 }]).unwrap();
    let f = fol(&q);
    let t = f.integrate_trajectory(c(1.0, 0.0), 0.0, 1).unwrap();
    assert_eq!(t.termination, Termination::Closed);
    assert!((t.length - 2.0 * PI).abs() < 1e-3);
    for z in &t.points {
        assert!((z.norm() - 1.0).abs() < 1e-7);
    }
    // at phase 1/2 the same point runs radially into the pole
    let t = f.integrate_trajectory(c(1.0, 0.0), 0.5, -1).unwrap();
    assert!(matches!(t.termination, Termination::DoublePole(_)), "{:?}", t.termination);
}

#[test]
fn saddle_free_witness() {
    let f = fol(&a1());
    assert!(f.is_saddle_free().unwrap().0);
    let turned = a1().rotate(PI / 2.0);
    let (free, w) = fol(&turned).is_saddle_free().unwrap();
    assert!(!free);
    let w = w.unwrap();
    assert!((w.period.norm() - PI).abs() < 1e-8);
    assert!(matches!(fol(&turned).wkb_triangulation(0.0), Err(Error::NotSaddleFree(_))));
}

#[test]
fn a2_chambers_have_two_and_three_states() {
    let two = fol(&cubic(c(1.0, 1.0))).find_saddles().unwrap();
    let three = fol(&cubic(c(0.0, 3.0))).find_saddles().unwrap();
    assert_eq!(two.saddles.len(), 2);
    assert_eq!(three.saddles.len(), 3);
    let om = bps_invariants(&three);
    assert_eq!(om.len(), 6);
    assert!(om.values().all(|&v| v == 1));
    assert!(is_generic(&two, 1e-9) && is_generic(&three, 1e-9));
}

#[test]
fn saddle_periods_are_integral_in_the_hat_basis() {
    for t in [fol(&cubic(c(3.0, 0.0))).find_saddles().unwrap(), fol(&cubic(c(2.5, 2.5))).find_saddles().unwrap()] {
        for s in &t.saddles {
            let z: C64 = s.class.iter().zip(&t.basis_periods).map(|(&k, p)| p * k as f64).sum();
            assert!((z - s.period).norm() < 1e-8 * s.period.norm());
            // the period sits on the ray of its phase
            let r = s.period * C64::from_polar(1.0, -PI * s.phase);
            assert!(r.im.abs() < 1e-8 * r.norm() && r.re > 0.0);
        }
    }
}

#[test]
fn rotation_shifts_phases() {
    let q = cubic(c(0.0, 3.0));
    let base = fol(&q).find_saddles().unwrap();
    let s = 0.3;
    let turned = fol(&q.rotate(PI * s)).find_saddles().unwrap();
    assert_eq!(base.saddles.len(), turned.saddles.len());
    for a in &base.saddles {
        let want = (a.phase - s).rem_euclid(1.0);
        let b = turned
            .saddles
            .iter()
            .find(|b| ((b.phase - want + 0.5).rem_euclid(1.0) - 0.5).abs() < 1e-8)
            .expect("rotated saddle");
        let z = a.period * C64::from_polar(1.0, -PI * s);
        assert!((b.period - z).norm() < 1e-8 || (b.period + z).norm() < 1e-8);
    }
}

#[test]
fn a2_wall_is_not_generic() {
    // walk c from the two-state point 1 + i to the three-state point 3i
    let at = |s: f64| c(1.0 - s, 1.0 + 2.0 * s);
    let ratio_im = |s: f64| {
        let w = fol(&cubic(at(s))).wkb_triangulation(0.0).unwrap();
        let (z1, z2) = (w.strips[0].period, w.strips[1].period);
        (z1 * z2.conj()).im
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let flo = ratio_im(lo);
    assert!(flo * ratio_im(hi) < 0.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if ratio_im(mid) * flo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = fol(&cubic(at(0.5 * (lo + hi)))).find_saddles().unwrap();
    assert!(!is_generic(&t, 1e-6));
    let off = fol(&cubic(at(0.5 * (lo + hi) - 0.05))).find_saddles().unwrap();
    assert!(is_generic(&off, 1e-6));
}

#[test]
fn degenerate_rings_at_double_poles() {
    let q = QuadraticDifferential::new(
        vec![c(-1.0, -0.3), c(0.0, 0.0), c(1.0, 0.3)],
        vec![Pole { z: c(3.0, 0.0), order: 2, sign: 1 }],
    )
    .unwrap();
    let t = fol(&q).find_saddles().unwrap();
    assert_eq!(t.rings.len(), 1);
    let r = &t.rings[0];
    assert!(r.degenerate);
    let res = q.residue_at(PoleRef::Finite(0), 1).unwrap().residue;
    assert!((r.period - res).norm() < 1e-12 || (r.period + res).norm() < 1e-12);
    let om = bps_invariants(&t);
    assert!(om.values().all(|&v| v != -2));
}

#[test]
fn class_decomposition_is_unique() {
    let b = [c(1.0, 0.0), c(0.0, 1.0)];
    assert_eq!(decompose(c(3.0, -2.0), &b, 10, 1e-9).unwrap(), vec![3, -2]);
    assert!(matches!(decompose(c(0.5, 0.0), &b, 10, 1e-9), Err(Error::ClassMatch(_))));
    let dup = [c(1.0, 0.0), c(2.0, 0.0)];
    assert!(matches!(decompose(c(2.0, 0.0), &dup, 10, 1e-9), Err(Error::ClassMatch(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn leaves_keep_their_phase(x in -2.0f64..2.0, y in 0.5f64..2.0, th in 0.0f64..1.0) {
        let q = cubic(c(0.4, 0.7));
        let f = fol(&q);
        let z0 = c(x, y);
        prop_assume!(f.zeros.iter().all(|a| (a - z0).norm() > 0.1));
        let t = f.integrate_trajectory(z0, th, 1).unwrap();
        let rot = C64::from_polar(1.0, -PI * th);
        let step = (t.points.len() / 20).max(1);
        for i in (step..t.points.len()).step_by(step) {
            let zi = t.points[i];
            if f.zeros.iter().any(|a| (a - zi).norm() < 1e-2) || zi.norm() > 50.0 {
                break;
            }
            let v = q.period_tracked(&t.points[..=i], t.sqrts[0]).unwrap();
            let w = v.z * rot;
            prop_assert!(w.im.abs() < 1e-6 * (1.0 + w.norm()), "drift {} at {}", w.im, i);
            prop_assert!(w.re >= -1e-9);
        }
    }
}

#[test]
fn vertical_segment_of_a1_runs_into_both_zeros() {
    let f = fol(&a1());
    let mut hit = vec![];
    for dir in [1, -1] {
        let t = f.integrate_trajectory(c(0.0, 0.0), 0.5, dir).unwrap();
        match t.termination {
            Termination::Zero(i) => hit.push(i),
            other => panic!("{other:?}"),
        }
        assert!(t.points.iter().all(|z| z.im.abs() < 1e-8));
    }
    hit.sort();
    assert_eq!(hit, vec![0, 1]);
}

#[test]
fn a1_quarter_turn_is_still_saddle_free() {
    let f = fol(&a1().rotate(PI / 4.0));
    assert!(f.is_saddle_free().unwrap().0);
}

#[test]
fn a1_bps_counts() {
    let t = fol(&a1()).find_saddles().unwrap();
    let om = bps_invariants(&t);
    assert_eq!(om.len(), 2);
    assert_eq!(om[&vec![1]], 1);
    assert_eq!(om[&vec![-1]], 1);
    assert!(is_generic(&t, 1e-9));
}

#[test]
fn wkb_triangulations_across_an_active_ray_differ_by_one_flip() {
    let q = cubic(c(1.0, 1.0));
    let f = fol(&q);
    let t = f.find_saddles().unwrap();
    let s = &t.saddles[0];
    let d = 0.01;
    let lo = f.wkb_triangulation(s.phase - d).unwrap();
    let hi = f.wkb_triangulation(s.phase + d).unwrap();
    assert!(!lo.triangulation.same_as(&hi.triangulation).unwrap());
    let flipped = (0..lo.triangulation.n()).filter(|&k| lo.triangulation.flip(k).unwrap().same_as(&hi.triangulation).unwrap()).count();
    assert_eq!(flipped, 1);
}
