use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectra_rh::differential::{PoleRef, QuadraticDifferential};
use spectra_rh::foliation::{Foliation, FoliationConfig};
use spectra_rh::opers::*;
use spectra_rh::surface::Mark;
use spectra_rh::{Error, C64};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn fam(phi: &QuadraticDifferential) -> OperFamily {
    OperFamily::new(phi, OperConfig::default()).unwrap()
}

fn a1() -> QuadraticDifferential {
    QuadraticDifferential::polynomial(&[-1.0, 0.0, 1.0]).unwrap()
}

fn a2() -> QuadraticDifferential {
    QuadraticDifferential::new(vec![c(0.0, 3.0), c(-3.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)], vec![]).unwrap()
}

fn double_pole(a: C64) -> QuadraticDifferential {
    QuadraticDifferential::new(vec![a], vec![spectra_rh::differential::Pole { z: c(0.0, 0.0), order: 2, sign: 1 }]).unwrap()
}

fn punctured() -> QuadraticDifferential {
    QuadraticDifferential::new(vec![c(0.0, 0.0), c(1.0, 0.0)], vec![spectra_rh::differential::Pole { z: c(2.0, 0.0), order: 2, sign: 1 }])
        .unwrap()
}

fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol * b.norm().max(1.0)
}

fn mat_close(m: [[C64; 2]; 2], e: [[C64; 2]; 2], tol: f64) -> bool {
    (0..2).all(|i| (0..2).all(|j| close(m[i][j], e[i][j], tol)))
}

fn mul(a: [[C64; 2]; 2], b: [[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let mut o = [[c(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

#[test]
fn potential_shapes() {
    let f = fam(&a1());
    let (z, t) = (c(0.3, 0.7), c(0.4, -0.2));
    assert!(close(f.potential(z, t), (z * z - 1.0) / (t * t), 1e-14));
    let a = c(0.3, 0.2);
    let g = fam(&double_pole(a));
    let expect = a / (t * t * z * z) - 0.25 / (z * z);
    assert!(close(g.potential(z, t), expect, 1e-13));
    let corr = -0.25 / (z * z);
    assert!(close(g.potential(z, 2.0 * t) - corr, (g.potential(z, t) - corr) / 4.0, 1e-13));
}

#[test]
fn transport_of_constant_potentials() {
    // phi = 1: Q = 1/t^2 is zero to rounding for huge t and 1 at t = 1
    let f = fam(&QuadraticDifferential::polynomial(&[1.0]).unwrap());
    let m = f.transport(&[c(0.0, 0.0), c(1.0, 0.0)], c(1e9, 0.0)).unwrap().matrix();
    assert!(mat_close(m, [[c(1.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]], 1e-10));
    let l = 1.7;
    let m = f.transport(&[c(0.0, 0.0), c(l, 0.0)], c(1.0, 0.0)).unwrap().matrix();
    let (ch, sh) = (c(l.cosh(), 0.0), c(l.sinh(), 0.0));
    assert!(mat_close(m, [[ch, sh], [sh, ch]], 1e-10));
}

#[test]
fn transport_concatenates_and_keeps_det_one() {
    let f = fam(&a2());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let p: Vec<C64> = (0..4).map(|_| c(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect();
        let t = C64::from_polar(rng.gen_range(0.5..4.0), rng.gen_range(-0.5..0.5));
        let whole = f.transport(&p, t).unwrap();
        let first = f.transport(&p[..3], t).unwrap();
        let second = f.transport(&p[2..], t).unwrap();
        let prod = mul(second.matrix(), first.matrix());
        assert!(mat_close(prod, whole.matrix(), 1e-9));
        // rounding in det grows with |M|^2; the absolute bound holds for moderate growth
        let m = whole.matrix();
        let size = m.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>();
        assert!((whole.det() - 1.0).norm() < 1e-9 * size.max(1.0), "{} {size}", whole.det());
        if size < 1e3 {
            assert!((whole.det() - 1.0).norm() < 1e-9);
        }
    }
}

#[test]
fn transport_through_a_pole_is_refused() {
    let f = fam(&punctured());
    let r = f.transport(&[c(1.0, 0.0), c(3.0, 0.0)], c(1.0, 0.0));
    assert!(matches!(r, Err(Error::SingularityOnPath(_))));
}

#[test]
fn homotopic_paths_agree() {
    let f = fam(&punctured());
    let t = c(0.8, 0.3);
    let a = f.transport(&[c(1.0, 0.0), c(1.0, 1.0), c(3.0, 1.0), c(3.0, 0.2)], t).unwrap();
    let b = f.transport(&[c(1.0, 0.0), c(1.5, 0.5), c(2.0, 2.0), c(3.0, 0.2)], t).unwrap();
    assert!(mat_close(a.matrix(), b.matrix(), 1e-8));
}

#[test]
fn eigenvalue_law_at_a_double_pole() {
    let a = c(0.3, 0.2);
    let f = fam(&double_pole(a));
    for t in [c(1.0, 0.0), c(1.0, 1.0), c(0.3, 0.0)] {
        let e = f.monodromy_eigendata(PoleRef::Finite(0), t, None).unwrap();
        // indicial roots 1/2 +- sqrt(a)/t of y'' = (a/t^2 - 1/4) y / z^2
        let mut oracle = [-(2.0 * PI * C64::i() * a.sqrt() / t).exp(), -(-2.0 * PI * C64::i() * a.sqrt() / t).exp()];
        if (e.lambda[0] - oracle[0]).norm() > (e.lambda[0] - oracle[1]).norm() {
            oracle.swap(0, 1);
        }
        for k in 0..2 {
            assert!((e.lambda[k] - oracle[k]).norm() < 1e-6 * oracle[k].norm(), "t = {t}");
        }
        let pred = f.predicted_eigenvalues(PoleRef::Finite(0), t).unwrap();
        for k in 0..2 {
            assert!((e.lambda[k] - pred[k]).norm() < 1e-6 * pred[k].norm());
        }
    }
}

#[test]
fn eigenlines_are_invariant() {
    let f = fam(&double_pole(c(0.3, 0.2)));
    let t = c(0.7, 0.2);
    let e = f.monodromy_eigendata(PoleRef::Finite(0), t, None).unwrap();
    let n = 64;
    let r = e.base;
    let lp: Vec<C64> = (0..=n).map(|k| r * C64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64)).collect();
    for (l, lam) in e.lines.iter().zip(e.lambda) {
        let v = f.transport_line(&lp, t, *l).unwrap();
        assert!(line_distance(&v, l) < 1e-7);
        let m = f.transport(&lp, t).unwrap().matrix();
        let w = [m[0][0] * l[0] + m[0][1] * l[1], m[1][0] * l[0] + m[1][1] * l[1]];
        assert!((w[0] - lam * l[0]).norm() + (w[1] - lam * l[1]).norm() < 1e-6 * lam.norm());
    }
}

#[test]
fn removable_double_pole_is_apparent() {
    // a = 0 leaves y'' = -y/(4 z^2), roots 1/2 twice: eigenvalues collide at -1
    let g = fam(&double_pole(c(1e-30, 0.0)));
    let r = g.monodromy_eigendata(PoleRef::Finite(0), c(1.0, 0.0), None);
    assert!(matches!(r, Err(Error::ApparentSingularity(_))), "{r:?}");
}

#[test]
fn airy_sector_lines_are_distinct() {
    let f = fam(&QuadraticDifferential::polynomial(&[0.0, 1.0]).unwrap());
    let t = c(1.0, 0.0);
    // check_seed compares each line against the one seeded twice as far out
    let lines: Vec<Line> = (0..3).map(|j| f.subdominant_line(PoleRef::Infinity, j, t).unwrap()).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(line_distance(&lines[i], &lines[j]) > 1e-6);
        }
    }
}

#[test]
fn seed_doubling_is_stable() {
    let f = fam(&a1());
    let strict = OperFamily::new(&a1(), OperConfig { line_tol: 1e-7, ..OperConfig::default() }).unwrap();
    for j in 0..4 {
        assert!(strict.subdominant_line(PoleRef::Infinity, j, c(0.7, 0.1)).is_ok());
        assert!(f.subdominant_line(PoleRef::Infinity, j, c(0.7, 0.1)).is_ok());
    }
}

#[test]
fn a1_has_four_boundary_lines() {
    let s = fam(&a1()).framed_local_system(c(1.0, 0.0)).unwrap();
    assert_eq!(s.lines.len(), 4);
    assert!(s.lines.keys().all(|m| matches!(m, Mark::Boundary(_))));
}

#[test]
fn puncture_line_is_invariant_at_the_basepoint() {
    let f = fam(&punctured());
    let t = c(0.9, 0.2);
    let s = f.framed_local_system(t).unwrap();
    let l = s.lines[&Mark::Puncture(0)];
    let e = f.monodromy_eigendata(PoleRef::Finite(0), t, Some(s.base)).unwrap();
    let d = e.lines.iter().map(|m| line_distance(m, &l)).fold(f64::INFINITY, f64::min);
    assert!(d < 1e-7, "{d}");
}

fn point_line(z: C64) -> Line {
    [z, c(1.0, 0.0)]
}

#[test]
fn cross_ratio_normal_form() {
    let w = c(0.3, -1.7);
    let inf = [c(1.0, 0.0), c(0.0, 0.0)];
    let (l0, l1, lw) = (point_line(c(0.0, 0.0)), point_line(c(1.0, 0.0)), point_line(w));
    let y = cross_ratio([&l0, &l1, &inf, &lw]);
    assert!(close(y, -1.0 / w, 1e-14));
}

proptest! {
    #[test]
    fn cross_ratio_is_projectively_invariant(v in prop::array::uniform8(-2.0f64..2.0), m in prop::array::uniform8(-2.0f64..2.0)) {
        let ls: Vec<Line> = (0..4).map(|i| [c(v[2 * i], 1.0), c(v[2 * i + 1], -0.5)]).collect();
        let g = [[c(m[0], m[1]), c(m[2], m[3])], [c(m[4], m[5]), c(m[6], m[7])]];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        prop_assume!(det.norm() > 1e-2);
        for i in 0..4 { for j in i + 1..4 { prop_assume!(line_distance(&ls[i], &ls[j]) > 1e-2); } }
        let moved: Vec<Line> = ls.iter().map(|l| [g[0][0] * l[0] + g[0][1] * l[1], g[1][0] * l[0] + g[1][1] * l[1]]).collect();
        let y = cross_ratio([&ls[0], &ls[1], &ls[2], &ls[3]]);
        let y2 = cross_ratio([&moved[0], &moved[1], &moved[2], &moved[3]]);
        prop_assert!(close(y, y2, 1e-10));
        // the other ordering of the quadrilateral: start at c3
        let y3 = cross_ratio([&ls[2], &ls[3], &ls[0], &ls[1]]);
        prop_assert!(close(y, y3, 1e-10));
    }
}

#[test]
fn monomials() {
    let x = vec![c(2.0, 1.0), c(-0.5, 3.0)];
    assert_eq!(monomial(&x, &[0, 0]), c(1.0, 0.0));
    assert!(close(monomial(&x, &[1, 1]), monomial(&x, &[1, 0]) * monomial(&x, &[0, 1]), 1e-15));
    assert!(close(monomial(&x, &[-2, 1]), x[1] / (x[0] * x[0]), 1e-14));
}

#[test]
fn a2_y_function_is_monomial() {
    let phi = a2();
    let wkb = Foliation::new(&phi, FoliationConfig::default()).unwrap().wkb_triangulation(0.01).unwrap();
    let f = fam(&phi);
    let t = C64::from_polar(0.8, 0.01 * PI);
    let y1 = f.y_function(&wkb, &[1, 0], t).unwrap();
    let y2 = f.y_function(&wkb, &[0, 1], t).unwrap();
    let y12 = f.y_function(&wkb, &[1, 1], t).unwrap();
    assert!(close(y12, y1 * y2, 1e-12));
    assert_eq!(f.y_function(&wkb, &[0, 0], t).unwrap(), c(1.0, 0.0));
}

#[test]
fn a1_y_function_self_converges() {
    let phi = a1();
    let wkb = Foliation::new(&phi, FoliationConfig::default()).unwrap().wkb_triangulation(0.0).unwrap();
    let t = c(1.0, 0.0);
    let coarse = fam(&phi).y_function(&wkb, &[1], t).unwrap();
    let fine = OperFamily::new(&phi, OperConfig { ode_tol: 5e-13, ..OperConfig::default() })
        .unwrap()
        .y_function(&wkb, &[1], t)
        .unwrap();
    assert!(coarse.norm() > 0.0 && coarse.is_finite());
    assert!(close(coarse, fine, 1e-6));
}

#[test]
fn basepoint_cross_ratios_match_the_wkb_evaluation() {
    // two routes to the same coordinates: lines carried to a common basepoint,
    // and Wronskians taken at the zeros
    for phi in [a1(), a2()] {
        let theta = 0.013;
        let wkb = Foliation::new(&phi, FoliationConfig::default()).unwrap().wkb_triangulation(theta).unwrap();
        let mut f = fam(&phi);
        let t = C64::from_polar(1.3, PI * theta);
        let direct = f.wkb_coordinates(&wkb, t).unwrap();
        let at_base = fock_goncharov_eval(&f.framed_local_system(t).unwrap(), &wkb.triangulation).unwrap();
        f.base += c(0.4, -0.3);
        let moved = fock_goncharov_eval(&f.framed_local_system(t).unwrap(), &wkb.triangulation).unwrap();
        for j in 0..direct.len() {
            assert!(close(at_base[j], direct[j], 1e-8), "{j}: {} {}", at_base[j], direct[j]);
            assert!(close(moved[j], at_base[j], 1e-9));
        }
    }
}

#[test]
fn evaluation_is_deterministic() {
    let phi = a2();
    let wkb = Foliation::new(&phi, FoliationConfig::default()).unwrap().wkb_triangulation(0.01).unwrap();
    let f = fam(&phi);
    let t = C64::from_polar(0.5, 0.01 * PI);
    assert_eq!(f.wkb_coordinates(&wkb, t).unwrap(), f.wkb_coordinates(&wkb, t).unwrap());
}

#[test]
fn degenerate_quadrilateral_is_reported() {
    let phi = a1();
    let wkb = Foliation::new(&phi, FoliationConfig::default()).unwrap().wkb_triangulation(0.0).unwrap();
    let mut s = fam(&phi).framed_local_system(c(1.0, 0.0)).unwrap();
    let l = s.lines[&Mark::Boundary(0)];
    s.lines.insert(Mark::Boundary(1), l);
    s.lines.insert(Mark::Boundary(2), l);
    s.lines.insert(Mark::Boundary(3), l);
    assert!(matches!(fock_goncharov_eval(&s, &wkb.triangulation), Err(Error::DegenerateQuadrilateral(_))));
}
