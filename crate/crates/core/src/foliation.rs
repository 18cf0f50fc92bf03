//! Trajectories of phase theta (leaves where sqrt(phi) dz lies in
//! e^{i pi theta} R), saddle connections, WKB triangulations, hat bases and
//! BPS counts.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::differential::{nearest_root, PoleRef, QuadraticDifferential};
use crate::numerics::{dopri_step, poly_deriv, poly_eval};
use crate::surface::{ExchangeMatrix, IdealTriangulation, Mark, Side, TaggedTriangulation, Triangle};
use crate::{Error, Result, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoliationConfig {
    /// Phase grid points per unit phase.
    pub grid: usize,
    pub theta_tol: f64,
    /// Zero-hit distance relative to the scale of the critical set.
    pub hit_rel: f64,
    pub prong_rel: f64,
    pub budget_rel: f64,
    pub ode_tol: f64,
    pub h_max: Option<f64>,
    /// Phase window (lo, hi].
    pub window: (f64, f64),
    pub coeff_bound: i64,
}

impl Default for FoliationConfig {
    fn default() -> Self {
        FoliationConfig {
            grid: 400,
            theta_tol: 1e-10,
            hit_rel: 1e-6,
            prong_rel: 1e-4,
            budget_rel: 50.0,
            ode_tol: 1e-10,
            h_max: None,
            window: (0.0, 1.0),
            coeff_bound: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Zero(usize),
    PoleSector { pole: PoleRef, mark: u32 },
    DoublePole(PoleRef),
    SimplePole(PoleRef),
    Closed,
    Budget,
    /// Crossed segment `seg` of separatrix `prong` of zero `zero`.
    Crossed { zero: usize, prong: usize, seg: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub phase: f64,
    pub points: Vec<C64>,
    /// Tracked sqrt(phi) at each point.
    pub sqrts: Vec<C64>,
    pub termination: Termination,
    pub length: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaddleConnection {
    pub phase: f64,
    pub zeros: (usize, usize),
    pub path: Vec<C64>,
    pub class: Vec<i64>,
    pub period: C64,
    pub closed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RingDomain {
    pub phase: f64,
    pub pole: PoleRef,
    pub class: Option<Vec<i64>>,
    pub period: C64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub saddles: Vec<SaddleConnection>,
    pub rings: Vec<RingDomain>,
    pub grid: usize,
    pub h_max: f64,
    pub window: (f64, f64),
    /// Phase of the hat basis used for class coordinates.
    pub basis_phase: f64,
    pub basis_periods: Vec<C64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HatBasis {
    pub phase: f64,
    pub periods: Vec<C64>,
    pub skew: ExchangeMatrix,
}

/// One horizontal strip of a saddle-free foliation, i.e. one WKB arc.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Strip {
    /// (zero, side of its triangle) for the two zeros on the strip boundary;
    /// the first is where the vertical crossing starts.
    pub a: (usize, usize),
    pub b: (usize, usize),
    /// Polyline a -> vertical leaf -> crossing -> separatrix of b -> b.
    pub path: Vec<C64>,
    /// sqrt(phi) at the start of `path` tracking, matching `period`.
    pub sheet_ref: C64,
    pub period: C64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Wkb {
    pub phase: f64,
    pub zeros: Vec<C64>,
    /// Separatrices per zero, counterclockwise.
    pub separatrices: Vec<Vec<Trajectory>>,
    pub corners: Vec<[Mark; 3]>,
    pub triangulation: IdealTriangulation,
    pub signing: Vec<i8>,
    pub strips: Vec<Strip>,
    /// Pole behind each puncture label.
    pub punctures: Vec<PoleRef>,
    pub boundary_pole: Option<PoleRef>,
}

impl Wkb {
    pub fn tagged(&self) -> Result<TaggedTriangulation> {
        TaggedTriangulation::new(self.triangulation.clone(), self.signing.clone())
    }

    /// Period of the class attached to each arc. The interior edge of a
    /// self-folded triangle carries its strip plus the encircling strip.
    pub fn arc_periods(&self) -> Vec<C64> {
        (0..self.strips.len())
            .map(|j| match self.triangulation.self_folded_interior(j) {
                Some((Side::Arc(k), _)) => self.strips[j].period + self.strips[k].period,
                _ => self.strips[j].period,
            })
            .collect()
    }

    pub fn hat_basis(&self) -> HatBasis {
        HatBasis {
            phase: self.phase,
            periods: self.arc_periods(),
            skew: self.triangulation.exchange_matrix(),
        }
    }
}

struct PoleInfo {
    pref: PoleRef,
    z: Option<C64>,
    order: i32,
    /// Radius (finite) or |z| threshold (infinity) of the asymptotic region.
    radius: f64,
}

/// Foliation engine for one differential; immutable after construction.
pub struct Foliation {
    pub phi: QuadraticDifferential,
    pub zeros: Vec<C64>,
    pub cfg: FoliationConfig,
    scale: f64,
    big: f64,
    crit: Vec<C64>,
    max_order: i32,
    poles: Vec<PoleInfo>,
    zero_slopes: Vec<C64>,
    zero_gap: f64,
}

const GL8: [(f64, f64); 8] = [
    (-0.9602898564975363, 0.1012285362903763),
    (-0.7966664774136267, 0.2223810344533745),
    (-0.525_532_409_916_329, 0.3137066458778873),
    (-0.1834346424956498, 0.362_683_783_378_362),
    (0.1834346424956498, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.3137066458778873),
    (0.7966664774136267, 0.2223810344533745),
    (0.9602898564975363, 0.1012285362903763),
];

fn wrap_phase(theta: f64) -> f64 {
    // representative in (0, 1]
    let r = theta.rem_euclid(1.0);
    if !(1e-12..=1.0 - 1e-12).contains(&r) {
        1.0
    } else {
        r
    }
}

impl Foliation {
    pub fn new(phi: &QuadraticDifferential, cfg: FoliationConfig) -> Result<Self> {
        let zeros = phi.zeros()?;
        if phi.infinity_order() <= 0 {
            return Err(Error::UnsupportedTopology("infinity must be a pole".into()));
        }
        let scale = phi.scale();
        let mut crit = zeros.clone();
        crit.extend(phi.poles.iter().map(|p| p.z));
        let rc = crit.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let big = scale.max(rc);
        let max_order = phi.pole_refs().iter().map(|&p| phi.pole_order(p)).max().unwrap_or(2);
        let mut poles = Vec::new();
        for p in phi.pole_refs() {
            let order = phi.pole_order(p);
            let z = phi.pole_position(p);
            let radius = match z {
                Some(z) => {
                    let d = crit.iter().filter(|c| (*c - z).norm() > 1e-12).map(|c| (c - z).norm()).fold(f64::INFINITY, f64::min);
                    let d = if d.is_finite() { d } else { big };
                    if order >= 3 {
                        0.05 * d
                    } else {
                        0.01 * d
                    }
                }
                None => match order {
                    o if o >= 3 => 10.0 * big,
                    2 => 100.0 * big,
                    _ => 1e4 * big,
                },
            };
            poles.push(PoleInfo { pref: p, z, order, radius });
        }
        let dn = poly_deriv(&phi.numerator);
        let zero_slopes = zeros
            .iter()
            .map(|&a| {
                let mut v = poly_eval(&dn, a);
                for p in &phi.poles {
                    v /= (a - p.z).powu(p.order);
                }
                v
            })
            .collect();
        let mut zero_gap = f64::INFINITY;
        for (i, a) in zeros.iter().enumerate() {
            for b in &zeros[..i] {
                zero_gap = zero_gap.min((a - b).norm());
            }
        }
        if !zero_gap.is_finite() {
            zero_gap = scale;
        }
        Ok(Foliation { phi: phi.clone(), zeros, cfg, scale, big, crit, max_order, poles, zero_slopes, zero_gap })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn eps_hit(&self) -> f64 {
        self.cfg.hit_rel * self.scale
    }

    fn delta(&self) -> f64 {
        self.cfg.prong_rel * self.scale
    }

    /// Largest step that keeps sheet tracking unambiguous: a fraction of the
    /// distance to each critical point, smaller for higher pole orders.
    /// `skip` is a zero being left along a prong.
    fn step_cap(&self, z: C64, skip: Option<usize>) -> f64 {
        let nz = self.zeros.len();
        let mut cap = f64::INFINITY;
        for (i, c) in self.crit.iter().enumerate() {
            let d = (z - c).norm();
            let w = if i < nz {
                if Some(i) == skip {
                    1.25
                } else {
                    3.0
                }
            } else {
                2.0 + self.phi.poles[i - nz].order as f64
            };
            cap = cap.min(d / w);
        }
        cap
    }

    fn dist_crit(&self, z: C64) -> f64 {
        self.crit.iter().map(|c| (z - c).norm()).fold(f64::INFINITY, f64::min)
    }

    /// Integrates the leaf of phase theta through z0, leaving in the direction
    /// e^{i pi theta} / s0 (s0 picks the sheet).
    pub fn integrate(&self, z0: C64, s0: C64, theta: f64) -> Result<Trajectory> {
        self.trace(z0, s0, theta, None, self.cfg.ode_tol, &mut |_, _| None)
    }

    /// Public form with a direction sign instead of a sheet.
    pub fn integrate_trajectory(&self, z0: C64, theta: f64, direction: i8) -> Result<Trajectory> {
        if self.dist_crit(z0) < self.eps_hit() {
            return Err(Error::Invalid("start point is a critical point".into()));
        }
        let s0 = self.phi.eval(z0).sqrt() * direction as f64;
        self.integrate(z0, s0, theta)
    }

    fn trace(
        &self,
        z0: C64,
        s0: C64,
        theta: f64,
        start_zero: Option<usize>,
        tol: f64,
        extra: &mut dyn FnMut(C64, C64) -> Option<Termination>,
    ) -> Result<Trajectory> {
        let e = C64::from_polar(1.0, PI * theta);
        let phi = &self.phi;
        let eps_hit = self.eps_hit();
        let eps_close = 10.0 * eps_hit;
        let budget = self.cfg.budget_rel * self.big;
        let mut z = z0;
        let mut s = nearest_root(phi.eval(z0), s0);
        let start_tangent = e * s.conj() / s.norm();
        let mut points = vec![z];
        let mut sqrts = vec![s];
        let mut length = 0.0;
        let mut left_start = start_zero.is_none();
        let mut away = false;
        let leave_radius = 3.0 * self.delta();
        let marks: Vec<Vec<C64>> = self.poles.iter().map(|p| phi.marked_directions(p.pref, PI * theta)).collect();
        let mut h = self.dist_crit(z) / (2.0 + self.max_order as f64);
        let finish = |points: Vec<C64>, sqrts: Vec<C64>, termination, length| {
            Ok(Trajectory { phase: theta, points, sqrts, termination, length })
        };
        loop {
            if length > budget {
                return finish(points, sqrts, Termination::Budget, length);
            }
            let skip = start_zero.filter(|_| !left_start);
            let cap = self.step_cap(z, skip);
            h = h.min(cap);
            if h < 1e-14 * self.scale {
                return Err(Error::Stalled(format!("{z}")));
            }
            let sref = s;
            let mut f = |_t: f64, y: &[C64; 1]| -> [C64; 1] {
                let r = nearest_root(phi.eval(y[0]), sref);
                [e * r.conj() / r.norm()]
            };
            let (y, err) = dopri_step(&mut f, 0.0, &[z], h);
            let atol = tol * (self.scale + z.norm());
            let en = err[0].norm() / atol;
            if !en.is_finite() || en > 1.0 {
                h *= if en.is_finite() { (0.9 * en.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                continue;
            }
            let z1 = y[0];
            let s1 = nearest_root(phi.eval(z1), s);
            // a step must not flip the sheet: velocity continuity
            if (s1 / s).re <= 0.0 {
                h *= 0.25;
                continue;
            }
            // unit speed, so h is arc length
            length += h;
            let h_used = h;
            let prev = z;
            let s_prev = s;
            z = z1;
            s = s1;
            points.push(z);
            sqrts.push(s);
            h *= if en == 0.0 { 4.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 4.0) };

            if let Some(t) = extra(prev, z) {
                return finish(points, sqrts, t, length);
            }
            if !left_start {
                if let Some(a) = start_zero {
                    if (z - self.zeros[a]).norm() > leave_radius {
                        left_start = true;
                    }
                }
            }
            for (i, &a) in self.zeros.iter().enumerate() {
                if !left_start && Some(i) == start_zero {
                    continue;
                }
                if crate::differential::seg_dist(prev, z, a) < eps_hit {
                    points.push(a);
                    sqrts.push(C64::new(0.0, 0.0));
                    return finish(points, sqrts, Termination::Zero(i), length);
                }
            }
            for (pi, p) in self.poles.iter().enumerate() {
                let t = match (p.z, p.order) {
                    (Some(pz), o) if o >= 3 => {
                        let u = z - pz;
                        if u.norm() < p.radius && ((z - prev) * u.conj()).re < 0.0 {
                            nearest_mark(&marks[pi], u, o).map(|m| Termination::PoleSector { pole: p.pref, mark: m })
                        } else {
                            None
                        }
                    }
                    (Some(pz), 2) => ((z - pz).norm() < p.radius).then_some(Termination::DoublePole(p.pref)),
                    (Some(pz), _) => ((z - pz).norm() < eps_hit).then_some(Termination::SimplePole(p.pref)),
                    (None, o) if o >= 3 => {
                        if z.norm() > p.radius && ((z - prev) * z.conj()).re > 0.0 {
                            nearest_mark(&marks[pi], z, o).map(|m| Termination::PoleSector { pole: p.pref, mark: m })
                        } else {
                            None
                        }
                    }
                    (None, 2) => (z.norm() > p.radius).then_some(Termination::DoublePole(p.pref)),
                    (None, _) => (z.norm() > p.radius).then_some(Termination::SimplePole(p.pref)),
                };
                if let Some(t) = t {
                    return finish(points, sqrts, t, length);
                }
            }
            if start_zero.is_none() && away && crate::differential::seg_dist(prev, z, z0) < h_used {
                let tangent = e * s.conj() / s.norm();
                let v0 = e * s_prev.conj() / s_prev.norm();
                let (d, t) = hermite_dist(prev, v0, z, tangent, h_used, z0);
                if d < eps_close && (tangent * start_tangent.conj()).re > 0.9 {
                    *points.last_mut().unwrap() = z0;
                    *sqrts.last_mut().unwrap() = sqrts[0];
                    return finish(points, sqrts, Termination::Closed, length - (1.0 - t) * h_used);
                }
            }
            if !away && (z - z0).norm() > 100.0 * eps_close {
                away = true;
            }
        }
    }

    /// Directions of the three horizontal prongs at zero `a`, counterclockwise.
    pub fn prong_angles(&self, a: usize, theta: f64) -> [f64; 3] {
        let c = self.zero_slopes[a].sqrt();
        let base = 2.0 / 3.0 * (PI * theta - c.arg());
        [base, base + 2.0 * PI / 3.0, base + 4.0 * PI / 3.0]
    }

    /// Seed points at distance delta along the prongs.
    pub fn critical_prongs(&self, a: usize, theta: f64) -> [C64; 3] {
        let d = self.delta();
        self.prong_angles(a, theta).map(|al| self.zeros[a] + C64::from_polar(d, al))
    }

    fn outward_sheet(&self, z0: C64, theta: f64, dir: C64) -> C64 {
        let r = self.phi.eval(z0).sqrt();
        let v = C64::from_polar(1.0, PI * theta) * r.conj();
        if (v * dir.conj()).re >= 0.0 {
            r
        } else {
            -r
        }
    }

    /// Separatrix leaving zero `a` along prong k at phase theta.
    pub fn prong_trajectory(&self, a: usize, k: usize, theta: f64) -> Result<Trajectory> {
        self.prong_with_tol(a, k, theta, self.cfg.ode_tol)
    }

    fn prong_with_tol(&self, a: usize, k: usize, theta: f64, tol: f64) -> Result<Trajectory> {
        let al = self.prong_angles(a, theta)[k];
        let dir = C64::from_polar(1.0, al);
        let z0 = self.zeros[a] + dir * self.delta();
        let s0 = self.outward_sheet(z0, theta, dir);
        let mut t = self.trace(z0, s0, theta, Some(a), tol, &mut |_, _| None)?;
        t.points.insert(0, self.zeros[a]);
        t.sqrts.insert(0, C64::new(0.0, 0.0));
        Ok(t)
    }

    /// Polyline from zero a along `traj` (which starts at a) to the sample
    /// closest to zero b, then straight to b. Also returns the sqrt reference
    /// for the tracking start and the index of the closest sample.
    fn approach_path(&self, a: usize, traj: &Trajectory, b: usize, upto: Option<usize>) -> Option<(Vec<C64>, C64, usize, f64)> {
        let clear = 2.0 * self.phi.clearance();
        let za = self.zeros[a];
        let zb = self.zeros[b];
        let pts = &traj.points;
        let last = upto.unwrap_or(pts.len() - 1);
        let i0 = (1..=last).find(|&i| (pts[i] - za).norm() >= clear)?;
        let from = if a == b { (i0..=last).find(|&i| (pts[i] - za).norm() >= 10.0 * clear)? } else { i0 };
        let mut ic = from;
        let mut best = f64::INFINITY;
        for i in from..=last {
            let d = (pts[i] - zb).norm();
            if d < best {
                best = d;
                ic = i;
            }
        }
        if let Termination::Zero(z) = traj.termination {
            if z == b && upto.is_none() && (a != b || last >= from) {
                ic = last;
                best = 0.0;
            }
        }
        let mut ie = ic;
        while ie > i0 && (pts[ie] - zb).norm() < clear {
            ie -= 1;
        }
        if ie < i0 || (pts[ie] - zb).norm() < clear {
            return None;
        }
        let mut path = vec![za];
        path.extend_from_slice(&pts[i0..=ie]);
        path.push(zb);
        Some((path, traj.sqrts[i0], ie, best))
    }

    /// Signed transverse miss of the separatrix (a, k) against zero b at
    /// phase theta, measured in the distinguished coordinate; with the
    /// closest-approach distance.
    fn miss(&self, a: usize, traj: &Trajectory, b: usize, theta: f64) -> Option<(f64, f64)> {
        let (path, _, ie, dist) = self.approach_path(a, traj, b, None)?;
        if a != b && dist > 0.5 * self.zero_gap {
            return None;
        }
        let e = C64::from_polar(1.0, -PI * theta);
        // the leaf from a to the closest sample is horizontal, so only the
        // last leg to b contributes
        let ze = path[path.len() - 2];
        let zb = self.zeros[b];
        let d = ze - zb;
        // z = zb + d v^2, v from 1 down to 0, eight-point Gauss-Legendre
        let mut s = traj.sqrts[ie];
        let mut acc = C64::new(0.0, 0.0);
        for (x, w) in GL8.iter().rev() {
            let v = 0.5 * (1.0 + x);
            s = nearest_root(self.phi.eval(zb + d * v * v), s);
            acc += s * (2.0 * v) * (0.5 * w);
        }
        let tail = -acc * d;
        Some(((e * tail).im, dist))
    }

    fn full_half_period(&self, a: usize, traj: &Trajectory, b: usize) -> Option<(C64, Vec<C64>)> {
        let (path, sref, _, _) = self.approach_path(a, traj, b, None)?;
        let v = self.phi.period_tracked(&path, sref).ok()?;
        Some((v.z * 0.5, path))
    }

    /// Saddle connections and ring domains with phases in the window.
    pub fn find_saddles(&self) -> Result<SpectrumTable> {
        let basis_phase = self.reference_phase()?;
        let wkb = self.wkb_triangulation(basis_phase)?;
        let basis = wkb.hat_basis();
        self.find_saddles_with(&basis)
    }

    /// Saddle search against a given hat basis (used for class coordinates).
    pub fn find_saddles_with(&self, basis: &HatBasis) -> Result<SpectrumTable> {
        let raw = self.scan_raw()?;
        let h_max = self.cfg.h_max.unwrap_or_else(|| 10.0 * basis.periods.iter().map(|z| z.norm()).fold(0.0, f64::max));
        let mut saddles: Vec<SaddleConnection> = Vec::new();
        for (theta, a, b, half, path) in raw {
            let z = half * 2.0;
            if z.norm() > h_max {
                continue;
            }
            let class = decompose(z, &basis.periods, self.cfg.coeff_bound, 1e-7 * self.scale.max(z.norm()))?;
            if saddles.iter().any(|s| s.class == class && (s.phase - theta).abs() < 1e-7) {
                continue;
            }
            saddles.push(SaddleConnection { phase: theta, zeros: (a, b), path, class, period: z, closed: a == b });
        }
        saddles.sort_by(|x, y| x.phase.partial_cmp(&y.phase).unwrap().then(x.zeros.cmp(&y.zeros)));
        for w in saddles.windows(2) {
            if (w[1].phase - w[0].phase).abs() < 10.0 * self.cfg.theta_tol && w[0].class != w[1].class && w[0].zeros == w[1].zeros {
                return Err(Error::UnresolvedCrossing(w[0].phase));
            }
        }
        let rings = self.degenerate_rings(basis)?;
        Ok(SpectrumTable {
            saddles,
            rings,
            grid: self.cfg.grid,
            h_max,
            window: self.cfg.window,
            basis_phase: basis.phase,
            basis_periods: basis.periods.clone(),
        })
    }

    fn degenerate_rings(&self, basis: &HatBasis) -> Result<Vec<RingDomain>> {
        let mut out = vec![];
        for p in self.phi.pole_refs() {
            if self.phi.pole_order(p) != 2 {
                continue;
            }
            let r = self.phi.residue_at(p, 1)?.residue;
            // orient onto e^{i pi theta} R_+ with theta in (0, 1]
            let per = if in_h(r) { r } else { -r };
            let th = wrap_phase(per.arg() / PI);
            if !self.in_window(th) {
                continue;
            }
            let class = decompose(per, &basis.periods, self.cfg.coeff_bound, 1e-7 * self.scale.max(per.norm())).ok();
            out.push(RingDomain { phase: th, pole: p, class, period: per, degenerate: true });
        }
        Ok(out)
    }

    fn in_window(&self, th: f64) -> bool {
        let (lo, hi) = self.cfg.window;
        let span = hi - lo;
        if span >= 1.0 {
            return true;
        }
        let x = (th - lo).rem_euclid(1.0);
        x > 0.0 && x <= span + 1e-15
    }

    /// Validated saddles as (phase, a, b, half period, path).
    fn scan_raw(&self) -> Result<Vec<(f64, usize, usize, C64, Vec<C64>)>> {
        let (lo, hi) = self.cfg.window;
        let span = (hi - lo).min(1.0);
        let n = ((self.cfg.grid as f64 * span).ceil() as usize).max(4);
        let nz = self.zeros.len();
        let step = span / n as f64;
        // keep grid nodes off the window ends, where real or imaginary
        // periods of symmetric differentials sit
        let thetas: Vec<f64> = if span >= 1.0 {
            (0..=n).map(|g| lo + 0.3179 * step + step * g as f64).collect()
        } else {
            (0..=n + 1).map(|g| lo - 0.5 * step + step * g as f64).collect()
        };
        let n = thetas.len() - 1;
        // grid trajectories only need to locate sign changes
        let scan_tol = (self.cfg.ode_tol * 1e3).min(1e-6);
        // misses[g][(a*3+k)*nz + b]
        let misses: Vec<Vec<Option<(f64, f64)>>> = thetas
            .par_iter()
            .map(|&th| {
                let mut row = vec![None; nz * 3 * nz];
                for a in 0..nz {
                    for k in 0..3 {
                        if let Ok(t) = self.prong_with_tol(a, k, th, scan_tol) {
                            for b in 0..nz {
                                row[(a * 3 + k) * nz + b] = self.miss(a, &t, b, th);
                            }
                        }
                    }
                }
                row
            })
            .collect();
        let mut brackets = vec![];
        for g in 0..n {
            for idx in 0..nz * 3 * nz {
                if let (Some((m0, _)), Some((m1, _))) = (misses[g][idx], misses[g + 1][idx]) {
                    if m0 == 0.0 || m0.signum() != m1.signum() {
                        brackets.push((g, idx, m0));
                    }
                }
            }
        }
        let found: Vec<Option<(f64, usize, usize, C64, Vec<C64>)>> = brackets
            .par_iter()
            .map(|&(g, idx, m0)| {
                let a = idx / (3 * nz);
                let k = (idx / nz) % 3;
                let b = idx % nz;
                self.refine(a, k, b, thetas[g], thetas[g + 1], m0)
            })
            .collect();
        let mut out: Vec<(f64, usize, usize, C64, Vec<C64>)> = found.into_iter().flatten().collect();
        out.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then((x.1, x.2).cmp(&(y.1, y.2))));
        Ok(out)
    }

    fn refine(&self, a: usize, k: usize, b: usize, mut t0: f64, mut t1: f64, m0: f64) -> Option<(f64, usize, usize, C64, Vec<C64>)> {
        let mut s0 = m0.signum();
        for _ in 0..60 {
            if t1 - t0 < 1e-7 {
                break;
            }
            let tm = 0.5 * (t0 + t1);
            let t = self.prong_trajectory(a, k, tm).ok()?;
            if let Termination::Zero(z) = t.termination {
                if z == b {
                    t0 = tm;
                    t1 = tm;
                    break;
                }
            }
            let (m, _) = self.miss(a, &t, b, tm)?;
            if m.signum() == s0 || m == 0.0 {
                t0 = tm;
                s0 = m.signum();
            } else {
                t1 = tm;
            }
        }
        let mid = 0.5 * (t0 + t1);
        let t = self.prong_trajectory(a, k, mid).ok()?;
        let (half, _) = self.full_half_period(a, &t, b)?;
        // the leaf has phase arg(half)/pi; pick the representative nearest the bracket
        let mut th = half.arg() / PI;
        while th < mid - 0.5 {
            th += 1.0;
        }
        while th > mid + 0.5 {
            th -= 1.0;
        }
        if (th - mid).abs() > 1e-3 {
            return None;
        }
        for _ in 0..3 {
            let t = self.prong_trajectory(a, k, th).ok()?;
            if t.termination == Termination::Zero(b) {
                let (half, path) = self.full_half_period(a, &t, b)?;
                let th2 = {
                    let mut x = half.arg() / PI;
                    while x < th - 0.5 {
                        x += 1.0;
                    }
                    while x > th + 0.5 {
                        x -= 1.0;
                    }
                    x
                };
                if (th2 - th).abs() > 1e-6 {
                    return None;
                }
                let ph = wrap_phase(th2);
                if !self.in_window(ph) {
                    return None;
                }
                return Some((ph, a, b, half, path));
            }
            let (h2, _) = self.full_half_period(a, &t, b)?;
            let mut x = h2.arg() / PI;
            while x < th - 0.5 {
                x += 1.0;
            }
            while x > th + 0.5 {
                x -= 1.0;
            }
            if (x - th).abs() < 1e-15 {
                break;
            }
            th = x;
        }
        None
    }

    /// A phase near 0 where the foliation is saddle-free: 0 itself unless a
    /// prong there runs into a zero, otherwise a nearby probe.
    fn reference_phase(&self) -> Result<f64> {
        for k in 0..40 {
            let th = if k == 0 { 0.0 } else { (if k % 2 == 1 { 1.0 } else { -1.0 }) * 0.0123 * ((k + 1) / 2) as f64 };
            if self.wkb_triangulation(th).is_ok() {
                return Ok(th);
            }
        }
        Err(Error::UnsupportedTopology("no saddle-free reference phase found".into()))
    }

    /// True if no saddle has phase 0 (mod 1); the witness is the saddle
    /// nearest to it otherwise.
    pub fn is_saddle_free(&self) -> Result<(bool, Option<SaddleConnection>)> {
        let table = self.find_saddles()?;
        let tol = 1e3 * self.cfg.theta_tol;
        let w = table.saddles.into_iter().find(|s| s.phase < tol || s.phase > 1.0 - tol);
        Ok((w.is_none(), w))
    }

    /// Signed WKB triangulation of the foliation at phase theta.
    pub fn wkb_triangulation(&self, theta: f64) -> Result<Wkb> {
        let phi = &self.phi;
        let high: Vec<PoleRef> = phi.pole_refs().into_iter().filter(|&p| phi.pole_order(p) >= 3).collect();
        if phi.pole_refs().iter().any(|&p| phi.pole_order(p) == 1) {
            return Err(Error::UnsupportedTopology("simple poles".into()));
        }
        if high.len() != 1 {
            return Err(Error::UnsupportedTopology("need exactly one pole of order at least 3".into()));
        }
        let boundary_pole = high[0];
        let punctures: Vec<PoleRef> = phi.pole_refs().into_iter().filter(|&p| phi.pole_order(p) == 2).collect();
        let surface = phi.marked_bordered_surface();
        let nz = self.zeros.len();
        let seps: Vec<Vec<Trajectory>> = (0..nz)
            .into_par_iter()
            .map(|a| (0..3).map(|k| self.prong_trajectory(a, k, theta)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut corners = vec![];
        for (a, ts) in seps.iter().enumerate() {
            let mut c = [Mark::Boundary(0); 3];
            for (k, t) in ts.iter().enumerate() {
                c[k] = match t.termination {
                    Termination::PoleSector { pole, mark } if pole == boundary_pole => Mark::Boundary(mark),
                    Termination::DoublePole(p) => Mark::Puncture(punctures.iter().position(|&q| q == p).unwrap() as u32),
                    Termination::Zero(_) => return Err(Error::NotSaddleFree(theta)),
                    Termination::Budget => return Err(Error::Stalled(format!("separatrix of zero {a} exhausted its budget"))),
                    other => return Err(Error::UnsupportedTopology(format!("separatrix ends as {other:?}"))),
                };
            }
            corners.push(c);
        }
        let nseg: Vec<(usize, usize, C64, C64)> = seps
            .iter()
            .enumerate()
            .flat_map(|(a, ts)| {
                ts.iter().enumerate().flat_map(move |(k, t)| {
                    t.points.windows(2).enumerate().map(move |(i, w)| (a, k * 1_000_000 + i, w[0], w[1]))
                })
            })
            .collect();
        let mut sides: Vec<[Option<Side>; 3]> = vec![[None; 3]; nz];
        let mut strips: Vec<Strip> = vec![];
        // vertical probes, recording every separatrix segment they cross
        type Probe = (usize, usize, Trajectory, Vec<(usize, usize, usize, usize)>);
        let probes: Vec<Result<Probe>> = (0..nz)
            .into_par_iter()
            .flat_map(|a| (0..3).into_par_iter().map(move |k| (a, k)))
            .map(|(a, k)| {
                // a vertical leaf just off the bisector of sector k, so a
                // saddle at the vertical phase cannot swallow it
                let al = self.prong_angles(a, theta)[k] + PI / 3.0 + 0.2;
                let dir = C64::from_polar(1.0, al);
                let z0 = self.zeros[a] + dir * self.delta();
                let th = theta + 0.5;
                let s0 = self.outward_sheet(z0, th, dir);
                let za = self.zeros[a];
                let guard = 3.0 * self.delta();
                let mut hits = vec![];
                let mut step = 0usize;
                let t = self.trace(z0, s0, th, Some(a), self.cfg.ode_tol, &mut |p, q| {
                    for &(zz, tag, u, v) in &nseg {
                        if zz == a && ((u - za).norm() < guard || (p - za).norm() < guard) {
                            continue;
                        }
                        if segments_cross(p, q, u, v) {
                            hits.push((zz, tag / 1_000_000, tag % 1_000_000, step));
                        }
                    }
                    step += 1;
                    None
                })?;
                Ok((a, k, t, hits))
            })
            .collect();
        let mut verticals: Vec<Vec<Option<(Trajectory, Vec<(usize, usize, usize, usize)>)>>> = vec![vec![None, None, None]; nz];
        for r in probes {
            let (a, k, t, hits) = r?;
            verticals[a][k] = Some((t, hits));
        }
        let bmarks = surface.boundary_marks.first().copied().unwrap_or(0);
        for a in 0..nz {
            for k in 0..3 {
                if sides[a][k].is_some() {
                    continue;
                }
                let (t, hits) = verticals[a][k].as_ref().unwrap();
                let ca = (corners[a][k], corners[a][(k + 1) % 3]);
                if hits.is_empty() {
                    if !matches!(t.termination, Termination::PoleSector { .. }) {
                        return Err(Error::UnsupportedTopology(format!(
                            "vertical leaf from zero {a} ends as {:?}",
                            t.termination
                        )));
                    }
                    match ca {
                        (Mark::Boundary(s), Mark::Boundary(s1)) if (s + 1) % bmarks == s1 => {
                            sides[a][k] = Some(Side::Segment(s));
                        }
                        _ => {
                            return Err(Error::UnsupportedTopology(format!(
                                "half-plane sector of zero {a} has corners {:?}, {:?}",
                                ca.0, ca.1
                            )))
                        }
                    }
                    continue;
                }
                // the first crossing with matching ends is the far side of the strip
                let mut chosen = None;
                for &(b, kb, seg, step) in hits {
                    let sep = &seps[b][kb];
                    let (u, v) = (sep.points[seg], sep.points[seg + 1]);
                    let (p, q) = (t.points[step], t.points[step + 1]);
                    // the strip lies on the side the vertical came from
                    let ccw = cross(v - u, p - q) > 0.0;
                    let side_b = if ccw { kb } else { (kb + 2) % 3 };
                    let cb = (corners[b][side_b], corners[b][(side_b + 1) % 3]);
                    if ca.0 == cb.1 && ca.1 == cb.0 && (b, side_b) != (a, k) {
                        chosen = Some((b, kb, seg, step, side_b, intersection(p, q, u, v)));
                        break;
                    }
                }
                let Some((b, kb, seg, step, side_b, x)) = chosen else {
                    return Err(Error::UnsupportedTopology(format!("strip from zero {a} has mismatched ends")));
                };
                if let Some(other) = sides[b][side_b] {
                    return Err(Error::UnsupportedTopology(format!("side already assigned: {other:?}")));
                }
                let j = strips.len();
                sides[a][k] = Some(Side::Arc(j));
                sides[b][side_b] = Some(Side::Arc(j));
                // a -> vertical -> x -> back along b's separatrix -> b
                let sep = &seps[b][kb];
                let mut path = vec![self.zeros[a]];
                path.extend_from_slice(&t.points[..=step]);
                path.push(x);
                for i in (1..=seg).rev() {
                    path.push(sep.points[i]);
                }
                path.push(self.zeros[b]);
                let path = self.trim_path(&path);
                let v = self.phi.period_tracked(&path, t.sqrts[0])?;
                let rot = C64::from_polar(1.0, -PI * theta);
                let (period, sheet_ref) = if (v.z * rot).im >= 0.0 { (v.z, v.start_sqrt) } else { (-v.z, -v.start_sqrt) };
                strips.push(Strip { a: (a, k), b: (b, side_b), path, sheet_ref, period });
            }
        }
        let n = strips.len();
        let triangles: Vec<Triangle> = (0..nz)
            .map(|a| Triangle { corners: corners[a], sides: sides[a].map(|s| s.unwrap()) })
            .collect();
        let triangulation = IdealTriangulation::from_triangles(surface, triangles, n)
            .map_err(|e| Error::UnsupportedTopology(format!("WKB gluing failed: {e}")))?;
        let rotated = phi.rotate(PI * theta);
        let signing = punctures
            .iter()
            .map(|&p| {
                let r = rotated.signed_residue(p)?;
                Ok(if in_h(r) { 1 } else { -1 })
            })
            .collect::<Result<Vec<i8>>>()?;
        Ok(Wkb {
            phase: theta,
            zeros: self.zeros.clone(),
            separatrices: seps,
            corners,
            triangulation,
            signing,
            strips,
            punctures,
            boundary_pole: Some(boundary_pole),
        })
    }

    /// Drops interior points within twice the clearance of the two ends so
    /// the path is valid for period quadrature.
    fn trim_path(&self, path: &[C64]) -> Vec<C64> {
        let clear = 2.0 * self.phi.clearance();
        let a = path[0];
        let b = *path.last().unwrap();
        let mut out = vec![a];
        let n = path.len();
        for (i, &p) in path.iter().enumerate().take(n - 1).skip(1) {
            let near_a = (p - a).norm() < clear && path[..i].iter().all(|q| (q - a).norm() < clear);
            let near_b = (p - b).norm() < clear && path[i..].iter().all(|q| (q - b).norm() < clear);
            if !near_a && !near_b {
                out.push(p);
            }
        }
        out.push(b);
        out
    }

    pub fn hat_basis(&self) -> Result<HatBasis> {
        Ok(self.wkb_triangulation(0.0)?.hat_basis())
    }
}

/// Closest approach to c of the cubic Hermite curve through (p0, v0), (p1, v1)
/// over a step of length h.
fn hermite_dist(p0: C64, v0: C64, p1: C64, v1: C64, h: f64, c: C64) -> (f64, f64) {
    let d = |t: f64| {
        let (t2, t3) = (t * t, t * t * t);
        let p = p0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + v0 * (h * (t3 - 2.0 * t2 + t))
            + p1 * (-2.0 * t3 + 3.0 * t2)
            + v1 * (h * (t3 - t2));
        (p - c).norm()
    };
    let n = 32;
    let i = (0..=n).min_by(|&a, &b| d(a as f64 / n as f64).total_cmp(&d(b as f64 / n as f64))).unwrap();
    let (mut lo, mut hi) = ((i.max(1) - 1) as f64 / n as f64, ((i + 1).min(n)) as f64 / n as f64);
    for _ in 0..60 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if d(m1) < d(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t = 0.5 * (lo + hi);
    (d(t), t)
}

fn nearest_mark(dirs: &[C64], u: C64, order: i32) -> Option<u32> {
    let half = PI / (2.0 * (order - 2) as f64);
    let ud = u / u.norm();
    let (j, ang) = dirs
        .iter()
        .enumerate()
        .map(|(j, d)| (j, (ud * d.conj()).arg().abs()))
        .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())?;
    (ang < half).then_some(j as u32)
}

/// Whether z lies in the semi-closed upper half plane.
pub fn in_h(z: C64) -> bool {
    z.im > 0.0 || (z.im == 0.0 && z.re < 0.0)
}

fn cross(a: C64, b: C64) -> f64 {
    a.re * b.im - a.im * b.re
}

fn segments_cross(p: C64, q: C64, u: C64, v: C64) -> bool {
    let (minx, maxx) = (p.re.min(q.re), p.re.max(q.re));
    let (miny, maxy) = (p.im.min(q.im), p.im.max(q.im));
    if u.re.max(v.re) < minx || u.re.min(v.re) > maxx || u.im.max(v.im) < miny || u.im.min(v.im) > maxy {
        return false;
    }
    let d1 = cross(q - p, u - p);
    let d2 = cross(q - p, v - p);
    let d3 = cross(v - u, p - u);
    let d4 = cross(v - u, q - u);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn intersection(p: C64, q: C64, u: C64, v: C64) -> C64 {
    let r = q - p;
    let s = v - u;
    let t = cross(u - p, s) / cross(r, s);
    p + r * t
}

/// Hat bases at both ends of a family of differentials, with the classes of
/// the first written in the second (row i of `matrix` is class i).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussManin {
    pub start: HatBasis,
    pub end: HatBasis,
    pub matrix: Vec<Vec<i64>>,
}

/// Rows M_i with from_i = sum_j M_ij to_j, each unique within tol.
pub fn basis_change(from: &[C64], to: &[C64], bound: i64, tol: f64) -> Result<Vec<Vec<i64>>> {
    from.iter().map(|&z| decompose(z, to, bound, tol)).collect()
}

fn congruent(m: &[Vec<i64>], inner: &ExchangeMatrix, outer: &ExchangeMatrix) -> bool {
    let n = m.len();
    (0..n).all(|a| {
        (0..n).all(|b| {
            let mut s = 0;
            for i in 0..n {
                for j in 0..n {
                    s += m[a][i] * inner.0[i][j] * m[b][j];
                }
            }
            s == outer.0[a][b]
        })
    })
}

/// Smallest |sum c_j Z_j| over nonzero c with |c_j| <= bound.
fn lattice_gap(z: &[C64], bound: i64) -> f64 {
    let mut best = f64::INFINITY;
    let mut c = vec![-bound; z.len()];
    loop {
        if c.iter().any(|&x| x != 0) {
            let v: C64 = c.iter().zip(z).map(|(&a, b)| b * a as f64).sum();
            best = best.min(v.norm());
        }
        let mut i = 0;
        while i < c.len() && c[i] == bound {
            c[i] = -bound;
            i += 1;
        }
        if i == c.len() {
            return best;
        }
        c[i] += 1;
    }
}

/// Carries the hat basis at phase theta along s -> family(s), s in [0, 1],
/// identifying classes by continuity of their periods.
pub fn gauss_manin(
    family: &dyn Fn(f64) -> Result<QuadraticDifferential>,
    theta: f64,
    cfg: &FoliationConfig,
) -> Result<GaussManin> {
    let basis_at = |s: f64| -> Result<HatBasis> {
        Foliation::new(&family(s)?, cfg.clone())?.wkb_triangulation(theta).map(|w| w.hat_basis())
    };
    let start = basis_at(0.0)?;
    let n = start.periods.len();
    let mut tracked = start.periods.clone();
    let mut matrix: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as i64).collect()).collect();
    let mut current = start.clone();
    // tracked[i] is the period of start class i at the current s
    let (mut s, mut ds) = (0.0f64, 1.0 / 32.0);
    while s < 1.0 {
        if ds < 1e-6 {
            return Err(Error::Stalled(format!("period tracking at s = {s}")));
        }
        let s1 = (s + ds).min(1.0);
        let next = match basis_at(s1) {
            Ok(b) => b,
            Err(_) => {
                ds *= 0.5;
                continue;
            }
        };
        let b = (matrix.iter().flatten().map(|x| x.abs()).max().unwrap_or(1) + 1).clamp(2, cfg.coeff_bound);
        let tol = 0.45 * lattice_gap(&next.periods, 2 * b);
        let accepted = basis_change(&tracked, &next.periods, b, tol).ok().filter(|step| {
            let moved = (0..n).all(|i| {
                let z: C64 = (0..n).map(|j| next.periods[j] * step[i][j] as f64).sum();
                (z - tracked[i]).norm() < tol
            });
            moved && congruent(step, &next.skew, &start.skew)
        });
        match accepted {
            Some(step) => {
                matrix = step;
                tracked = (0..n).map(|i| (0..n).map(|j| next.periods[j] * matrix[i][j] as f64).sum()).collect();
                current = next;
                s = s1;
                ds *= 1.5;
            }
            None => ds *= 0.5,
        }
    }
    Ok(GaussManin { start, end: current, matrix })
}

/// Integer coordinates c with |c_j| <= bound and sum c_j Z_j = z within tol.
/// Errors when no or several such vectors exist.
pub fn decompose(z: C64, basis: &[C64], bound: i64, tol: f64) -> Result<Vec<i64>> {
    let n = basis.len();
    let mut found: Vec<Vec<i64>> = vec![];
    let mags: Vec<f64> = basis.iter().map(|b| b.norm()).collect();
    // remaining reach after fixing the first i coordinates
    let mut reach = vec![0.0; n + 1];
    for i in (0..n).rev() {
        reach[i] = reach[i + 1] + bound as f64 * mags[i];
    }
    let mut cur = vec![0i64; n];
    fn rec(
        i: usize,
        acc: C64,
        z: C64,
        basis: &[C64],
        bound: i64,
        tol: f64,
        reach: &[f64],
        cur: &mut Vec<i64>,
        found: &mut Vec<Vec<i64>>,
    ) {
        if found.len() > 1 {
            return;
        }
        if (z - acc).norm() > reach[i] + tol {
            return;
        }
        if i == basis.len() {
            found.push(cur.clone());
            return;
        }
        for c in -bound..=bound {
            cur[i] = c;
            rec(i + 1, acc + basis[i] * c as f64, z, basis, bound, tol, reach, cur, found);
        }
        cur[i] = 0;
    }
    rec(0, C64::new(0.0, 0.0), z, basis, bound, tol, &reach, &mut cur, &mut found);
    match found.len() {
        1 => Ok(found.pop().unwrap()),
        0 => Err(Error::ClassMatch(format!("no integer combination of the basis gives {z}"))),
        _ => Err(Error::ClassMatch(format!("period {z} is ambiguous in the basis"))),
    }
}

/// Omega per class, from a spectrum table, completed symmetrically.
pub fn bps_invariants(table: &SpectrumTable) -> BTreeMap<Vec<i64>, i64> {
    let mut om: BTreeMap<Vec<i64>, i64> = BTreeMap::new();
    for s in &table.saddles {
        if s.closed {
            continue;
        }
        *om.entry(s.class.clone()).or_default() += 1;
    }
    for r in &table.rings {
        if r.degenerate {
            continue;
        }
        if let Some(c) = &r.class {
            *om.entry(c.clone()).or_default() -= 2;
        }
    }
    let keys: Vec<Vec<i64>> = om.keys().cloned().collect();
    for k in keys {
        let v = om[&k];
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        om.insert(neg, v);
    }
    om.retain(|k, v| *v != 0 && k.iter().any(|&x| x != 0));
    om
}

/// False if two classes with non-proportional coordinates have periods on
/// a common real line.
pub fn is_generic(table: &SpectrumTable, ang_tol: f64) -> bool {
    let mut classes: Vec<(Vec<i64>, C64)> = table.saddles.iter().map(|s| (s.class.clone(), s.period)).collect();
    for r in &table.rings {
        if let Some(c) = &r.class {
            classes.push((c.clone(), r.period));
        }
    }
    for i in 0..classes.len() {
        for j in 0..i {
            let (ci, zi) = &classes[i];
            let (cj, zj) = &classes[j];
            if proportional(ci, cj) {
                continue;
            }
            if (zi * zj.conj()).im.abs() < ang_tol * zi.norm() * zj.norm() {
                return false;
            }
        }
    }
    true
}

fn proportional(a: &[i64], b: &[i64]) -> bool {
    for i in 0..a.len() {
        for j in 0..a.len() {
            if a[i] * b[j] != a[j] * b[i] {
                return false;
            }
        }
    }
    true
}
