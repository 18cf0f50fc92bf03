//! Rational quadratic differentials phi = N(z)/D(z) dz^2 on the sphere.
//!
//! Infinity is never stored. Its order comes from degree bookkeeping and all
//! local data there is computed in the chart w = 1/z, phi -> w^-4 phi(1/w).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numerics::{integrate, poly_deriv, poly_eval, poly_roots, poly_trim};
use crate::surface::MarkedBorderedSurface;
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub z: C64,
    pub order: u32,
    #[serde(default = "plus_one")]
    pub sign: i8,
}

fn plus_one() -> i8 {
    1
}

/// Where a pole sits: one of the stored finite poles, or infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PoleRef {
    Finite(usize),
    Infinity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticDifferential {
    /// Ascending coefficients of N.
    pub numerator: Vec<C64>,
    pub poles: Vec<Pole>,
    /// Signing of infinity when it is a double pole.
    #[serde(default = "plus_one")]
    pub infinity_sign: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoints {
    pub zeros: Vec<C64>,
    pub poles: Vec<(C64, u32)>,
    /// Positive: pole order; negative: zero order; 0: regular point.
    pub infinity_order: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidueDatum {
    /// None for infinity.
    pub pole: Option<C64>,
    pub r: C64,
    pub residue: C64,
}

/// Polyline between finite critical points. `sheet` picks the branch of
/// sqrt(phi) at the point where tracking starts (the first waypoint, or the
/// point 5% into the first segment when the path starts at a zero):
/// +1 is the principal root there, -1 its negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodPath {
    pub waypoints: Vec<C64>,
    pub sheet: i8,
}

#[derive(Clone, Copy, Debug)]
pub struct PeriodValue {
    pub z: C64,
    pub error: f64,
    /// sqrt(phi) where tracking ended (last waypoint, or 5% before it).
    pub end_sqrt: C64,
    pub start_sqrt: C64,
}

const ENDPOINT_FRACTION: f64 = 0.05;

impl QuadraticDifferential {
    pub fn new(numerator: Vec<C64>, poles: Vec<Pole>) -> Result<Self> {
        let q = QuadraticDifferential { numerator, poles, infinity_sign: 1 };
        q.validate()?;
        Ok(q)
    }

    /// Polynomial differential with real coefficients (ascending).
    pub fn polynomial(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().map(|&c| C64::new(c, 0.0)).collect(), vec![])
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let q: QuadraticDifferential =
            serde_json::from_str(s).map_err(|e| Error::Invalid(format!("line {} column {}: {e}", e.line(), e.column())))?;
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let n = poly_trim(&self.numerator);
        if n.is_empty() {
            return Err(Error::Invalid("numerator is zero".into()));
        }
        if n.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite coefficient".into()));
        }
        for (i, p) in self.poles.iter().enumerate() {
            if p.order == 0 {
                return Err(Error::Invalid(format!("pole {i} has order 0")));
            }
            if p.sign != 1 && p.sign != -1 {
                return Err(Error::Invalid(format!("pole {i} has sign {}", p.sign)));
            }
            if !p.z.is_finite() {
                return Err(Error::Invalid(format!("pole {i} is not finite")));
            }
            for q in &self.poles[..i] {
                if (q.z - p.z).norm() < 1e-12 {
                    return Err(Error::Invalid(format!("pole {i} repeated")));
                }
            }
            if poly_eval(&n, p.z).norm() < 1e-14 * n.iter().map(|c| c.norm()).sum::<f64>() {
                return Err(Error::Invalid(format!("numerator vanishes at pole {i}")));
            }
        }
        if self.infinity_sign != 1 && self.infinity_sign != -1 {
            return Err(Error::Invalid("infinity_sign must be +1 or -1".into()));
        }
        if self.infinity_order() <= 0 && self.poles.is_empty() {
            return Err(Error::Invalid("differential has no pole".into()));
        }
        Ok(())
    }

    pub fn degree(&self) -> usize {
        poly_trim(&self.numerator).len().saturating_sub(1)
    }

    pub fn infinity_order(&self) -> i32 {
        self.degree() as i32 + 4 - self.poles.iter().map(|p| p.order as i32).sum::<i32>()
    }

    pub fn eval(&self, z: C64) -> C64 {
        let mut v = poly_eval(&self.numerator, z);
        for p in &self.poles {
            v /= (z - p.z).powu(p.order);
        }
        v
    }

    /// phi and phi'/phi at z.
    pub fn eval_log_deriv(&self, z: C64) -> (C64, C64) {
        let n = poly_eval(&self.numerator, z);
        let dn = poly_eval(&poly_deriv(&self.numerator), z);
        let mut ld = dn / n;
        for p in &self.poles {
            ld -= p.order as f64 / (z - p.z);
        }
        (self.eval(z), ld)
    }

    /// phi(z) / (z - z0), computed by deflating N at z0. Accurate near a zero z0.
    pub fn eval_deflated(&self, z: C64, z0: C64) -> C64 {
        let n = poly_trim(&self.numerator);
        let d = n.len() - 1;
        // synthetic division: N(z) = (z - z0) M(z) + N(z0)
        let mut m = vec![C64::new(0.0, 0.0); d];
        let mut acc = C64::new(0.0, 0.0);
        for k in (1..=d).rev() {
            acc = acc * z0 + n[k];
            m[k - 1] = acc;
        }
        let rem = acc * z0 + n[0];
        let mut v = poly_eval(&m, z) + rem / (z - z0);
        for p in &self.poles {
            v /= (z - p.z).powu(p.order);
        }
        v
    }

    pub fn rotate(&self, theta: f64) -> Self {
        let f = C64::from_polar(1.0, -2.0 * theta);
        QuadraticDifferential {
            numerator: self.numerator.iter().map(|c| c * f).collect(),
            poles: self.poles.clone(),
            infinity_sign: self.infinity_sign,
        }
    }

    /// The same differential written in w = 1/z. Finite poles at 0 move to
    /// infinity of the new chart and vice versa.
    pub fn at_infinity_chart(&self) -> Self {
        let n = poly_trim(&self.numerator);
        let mut num: Vec<C64> = n.iter().rev().cloned().collect();
        let e = -self.infinity_order();
        let mut poles = Vec::new();
        let mut scale = C64::new(1.0, 0.0);
        for p in &self.poles {
            if p.z.norm() == 0.0 {
                continue;
            }
            scale *= (-p.z).powu(p.order);
            poles.push(Pole { z: 1.0 / p.z, order: p.order, sign: p.sign });
        }
        if e >= 0 {
            let mut shifted = vec![C64::new(0.0, 0.0); e as usize];
            shifted.extend(num);
            num = shifted;
        } else {
            poles.push(Pole { z: C64::new(0.0, 0.0), order: (-e) as u32, sign: self.infinity_sign });
        }
        let num = num.iter().map(|c| c / scale).collect();
        let infinity_sign = self.poles.iter().find(|p| p.z.norm() == 0.0).map_or(1, |p| p.sign);
        QuadraticDifferential { numerator: num, poles, infinity_sign }
    }

    pub fn pole_refs(&self) -> Vec<PoleRef> {
        let mut v: Vec<PoleRef> = (0..self.poles.len()).map(PoleRef::Finite).collect();
        if self.infinity_order() > 0 {
            v.push(PoleRef::Infinity);
        }
        v
    }

    pub fn pole_order(&self, p: PoleRef) -> i32 {
        match p {
            PoleRef::Finite(i) => self.poles[i].order as i32,
            PoleRef::Infinity => self.infinity_order(),
        }
    }

    pub fn pole_sign(&self, p: PoleRef) -> i8 {
        match p {
            PoleRef::Finite(i) => self.poles[i].sign,
            PoleRef::Infinity => self.infinity_sign,
        }
    }

    pub fn set_pole_sign(&mut self, p: PoleRef, s: i8) {
        match p {
            PoleRef::Finite(i) => self.poles[i].sign = s,
            PoleRef::Infinity => self.infinity_sign = s,
        }
    }

    /// Position of a finite pole, None at infinity.
    pub fn pole_position(&self, p: PoleRef) -> Option<C64> {
        match p {
            PoleRef::Finite(i) => Some(self.poles[i].z),
            PoleRef::Infinity => None,
        }
    }

    pub fn find_pole(&self, z: Option<C64>) -> Option<PoleRef> {
        match z {
            None => (self.infinity_order() > 0).then_some(PoleRef::Infinity),
            Some(z) => self.poles.iter().position(|p| (p.z - z).norm() < 1e-9).map(PoleRef::Finite),
        }
    }

    /// Leading Laurent coefficient a0 in the local coordinate (u = z - p, or
    /// u = 1/z at infinity): phi = a0 u^-m (1 + ...) du^2.
    pub fn leading_coefficient(&self, p: PoleRef) -> C64 {
        match p {
            PoleRef::Finite(i) => {
                let z = self.poles[i].z;
                let mut v = poly_eval(&self.numerator, z);
                for (j, q) in self.poles.iter().enumerate() {
                    if j != i {
                        v /= (z - q.z).powu(q.order);
                    }
                }
                v
            }
            PoleRef::Infinity => *poly_trim(&self.numerator).last().unwrap(),
        }
    }

    pub fn zeros(&self) -> Result<Vec<C64>> {
        let n = poly_trim(&self.numerator);
        let roots = poly_roots(&n);
        let scale = 1.0 + roots.iter().map(|r| r.norm()).fold(0.0, f64::max);
        for (i, r) in roots.iter().enumerate() {
            for s in &roots[..i] {
                if (r - s).norm() < 1e-6 * scale {
                    return Err(Error::NonSimpleZero(format!("{r}")));
                }
            }
        }
        if self.infinity_order() < -1 {
            return Err(Error::NonSimpleZero("infinity".into()));
        }
        let mut roots = roots;
        roots.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        Ok(roots)
    }

    pub fn critical_points(&self) -> Result<CriticalPoints> {
        Ok(CriticalPoints {
            zeros: self.zeros()?,
            poles: self.poles.iter().map(|p| (p.z, p.order)).collect(),
            infinity_order: self.infinity_order(),
        })
    }

    /// Length scale of the finite critical set, used for tolerances.
    pub fn scale(&self) -> f64 {
        let mut pts: Vec<C64> = self.zeros().unwrap_or_default();
        pts.extend(self.poles.iter().map(|p| p.z));
        let mut d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                d = d.max((a - b).norm());
            }
        }
        if d > 1e-12 {
            d
        } else {
            pts.iter().map(|p| p.norm()).fold(1.0, f64::max)
        }
    }

    pub fn residue_at(&self, p: PoleRef, sign: i8) -> Result<ResidueDatum> {
        if self.pole_order(p) != 2 {
            return Err(Error::NotDoublePole(match p {
                PoleRef::Finite(i) => format!("{}", self.poles[i].z),
                PoleRef::Infinity => "infinity".into(),
            }));
        }
        let r = self.leading_coefficient(p);
        let residue = C64::new(0.0, 4.0 * PI) * r.sqrt() * sign as f64;
        Ok(ResidueDatum { pole: self.pole_position(p), r, residue })
    }

    /// Residue at the double pole located at z (None = infinity).
    pub fn residue(&self, z: Option<C64>, sign: i8) -> Result<ResidueDatum> {
        let p = self.find_pole(z).ok_or_else(|| Error::NotDoublePole(format!("{z:?}")))?;
        self.residue_at(p, sign)
    }

    /// Residue with the stored signing applied.
    pub fn signed_residue(&self, p: PoleRef) -> Result<C64> {
        Ok(self.residue_at(p, self.pole_sign(p))?.residue)
    }

    /// Unit directions (in the z-plane, pointing away from a finite pole or
    /// towards infinity) of the m-2 asymptotic horizontal directions of the
    /// differential rotated by `alpha`, i.e. e^{-2 i alpha} phi. Label j
    /// increases clockwise in the local coordinate.
    pub fn marked_directions(&self, p: PoleRef, alpha: f64) -> Vec<C64> {
        let m = self.pole_order(p);
        if m < 3 {
            return vec![];
        }
        let a0 = self.leading_coefficient(p);
        let k = (m - 2) as f64;
        (0..m - 2)
            .map(|j| {
                let arg_u = (a0.arg() - 2.0 * alpha - 2.0 * PI * j as f64) / k;
                match p {
                    PoleRef::Finite(_) => C64::from_polar(1.0, arg_u),
                    PoleRef::Infinity => C64::from_polar(1.0, -arg_u),
                }
            })
            .collect()
    }

    pub fn asymptotic_directions(&self, p: PoleRef) -> Vec<C64> {
        self.marked_directions(p, 0.0)
    }

    pub fn marked_bordered_surface(&self) -> MarkedBorderedSurface {
        let mut boundary = Vec::new();
        let mut punctures = 0;
        for p in self.pole_refs() {
            let m = self.pole_order(p);
            if m > 2 {
                boundary.push((m - 2) as u32);
            } else {
                punctures += 1;
            }
        }
        MarkedBorderedSurface { genus: 0, boundary_marks: boundary, punctures }
    }

    /// True when no pole is simple.
    pub fn is_complete(&self) -> bool {
        self.pole_refs().iter().all(|&p| self.pole_order(p) >= 2)
    }

    fn finite_critical(&self) -> Vec<C64> {
        let mut v = self.zeros().unwrap_or_default();
        v.extend(self.poles.iter().map(|p| p.z));
        v
    }

    pub fn clearance(&self) -> f64 {
        1e-3 * self.scale()
    }

    pub fn period(&self, path: &PeriodPath) -> Result<C64> {
        Ok(self.period_detailed(path)?.z)
    }

    pub fn period_detailed(&self, path: &PeriodPath) -> Result<PeriodValue> {
        let wps = &path.waypoints;
        if wps.len() < 2 {
            return Err(Error::Invalid("period path needs two waypoints".into()));
        }
        let start = self.tracking_start(wps);
        let s0 = self.eval(start).sqrt() * path.sheet as f64;
        self.period_tracked(wps, s0)
    }

    fn zero_at(&self, z: C64) -> Option<C64> {
        let tol = 1e-9 * self.scale();
        self.zeros().ok()?.into_iter().find(|r| (r - z).norm() < tol)
    }

    fn tracking_start(&self, wps: &[C64]) -> C64 {
        match self.zero_at(wps[0]) {
            Some(z0) => z0 + (wps[1] - z0) * ENDPOINT_FRACTION,
            None => wps[0],
        }
    }

    /// 2 * integral of sqrt(phi) along the polyline, with the branch at the
    /// tracking start chosen nearest to `s0`.
    pub fn period_tracked(&self, wps: &[C64], s0: C64) -> Result<PeriodValue> {
        let n = wps.len();
        let clearance = self.clearance();
        let crit = self.finite_critical();
        let start_zero = self.zero_at(wps[0]);
        let end_zero = self.zero_at(wps[n - 1]);
        // clearance check
        for k in 0..n - 1 {
            let (a, b) = (wps[k], wps[k + 1]);
            for c in &crit {
                if (k == 0 && start_zero.is_some_and(|z| (z - c).norm() < 1e-12))
                    || (k == n - 2 && end_zero.is_some_and(|z| (z - c).norm() < 1e-12))
                {
                    continue;
                }
                if seg_dist(a, b, *c) < clearance {
                    return Err(Error::SheetAmbiguity(format!("{c}")));
                }
            }
        }
        let mut total = C64::new(0.0, 0.0);
        let mut err = 0.0;
        let first = self.tracking_start(wps);
        let mut s = nearest_root(self.eval(first), s0);
        let start_sqrt = s;
        if let Some(z0) = start_zero {
            // piece from the zero out to `first`, integrated in u with z = z0 + u^2
            let (v, e) = self.endpoint_piece(z0, first, s);
            total += v;
            err += e;
        }
        let mut cur = first;
        for k in 0..n - 1 {
            let b = wps[k + 1];
            let seg_end = if k == n - 2 {
                match end_zero {
                    Some(z0) => z0 + (cur - z0) * ENDPOINT_FRACTION,
                    None => b,
                }
            } else {
                b
            };
            let (v, e, s_end) = self.segment(cur, seg_end, s, &crit)?;
            total += v;
            err += e;
            s = s_end;
            cur = seg_end;
        }
        let end_sqrt = s;
        if let Some(z0) = end_zero {
            let (v, e) = self.endpoint_piece(z0, cur, s);
            total -= v;
            err += e;
        }
        Ok(PeriodValue { z: total * 2.0, error: 2.0 * err, end_sqrt, start_sqrt })
    }

    /// Integral of sqrt(phi) from zero z0 to ze, whose branch at ze is s_e.
    fn endpoint_piece(&self, z0: C64, ze: C64, s_e: C64) -> (C64, f64) {
        let ue = (ze - z0).sqrt();
        let g = |u: C64| self.eval_deflated(z0 + u * u, z0);
        // q^2 = g, q(ue) = s_e / ue; track q from ue to 0
        let qe = s_e / ue;
        let anchors = track_anchors(&|tau: f64| g(ue * (1.0 - tau)), qe, 0.0, 1.0, &|_| f64::INFINITY);
        let mut f = |tau: f64| {
            let u = ue * (1.0 - tau);
            let q = branch_at(&anchors, tau, g(u));
            // integrand 2 u^2 q du, du = -ue dtau
            u * u * q * 2.0 * (-ue)
        };
        let (v, e) = integrate(&mut f, 0.0, 1.0, 1e-13);
        // that integral runs ze -> z0
        (-v, e)
    }

    fn segment(&self, a: C64, b: C64, s: C64, crit: &[C64]) -> Result<(C64, f64, C64)> {
        let d = b - a;
        if d.norm() == 0.0 {
            return Ok((C64::new(0.0, 0.0), 0.0, s));
        }
        let phi = |tau: f64| self.eval(a + d * tau);
        let len = d.norm();
        let step_cap = |tau: f64| {
            let z = a + d * tau;
            crit.iter().map(|c| (z - c).norm()).fold(f64::INFINITY, f64::min) * 0.25 / len
        };
        let anchors = track_anchors(&phi, s, 0.0, 1.0, &step_cap);
        if anchors.is_empty() {
            return Err(Error::SheetAmbiguity(format!("{a}")));
        }
        let mut f = |tau: f64| branch_at(&anchors, tau, phi(tau)) * d;
        let (v, e) = integrate(&mut f, 0.0, 1.0, 1e-13);
        let s_end = anchors.last().unwrap().1;
        Ok((v, e, s_end))
    }
}

pub(crate) fn nearest_root(v: C64, reference: C64) -> C64 {
    let r = v.sqrt();
    if (r - reference).norm() <= (r + reference).norm() {
        r
    } else {
        -r
    }
}

/// Anchor points (tau, sqrt f(tau)) along [t0, t1] close enough that the
/// nearest-root rule continues the branch unambiguously between them.
fn track_anchors(
    f: &dyn Fn(f64) -> C64,
    s0: C64,
    t0: f64,
    t1: f64,
    cap: &dyn Fn(f64) -> f64,
) -> Vec<(f64, C64)> {
    let mut out = vec![(t0, nearest_root(f(t0), s0))];
    let mut tau = t0;
    let mut fv = f(t0);
    let mut h = ((t1 - t0) / 16.0).min(cap(t0));
    while tau < t1 {
        h = h.min(t1 - tau).min(cap(tau));
        if h <= 1e-15 {
            return vec![];
        }
        let fn_ = f(tau + h);
        if (fn_ / fv - 1.0).norm() > 0.25 {
            h *= 0.5;
            continue;
        }
        tau += h;
        fv = fn_;
        let prev = out.last().unwrap().1;
        out.push((tau, nearest_root(fv, prev)));
        h *= 1.5;
    }
    out
}

fn branch_at(anchors: &[(f64, C64)], tau: f64, v: C64) -> C64 {
    let k = match anchors.binary_search_by(|a| a.0.partial_cmp(&tau).unwrap()) {
        Ok(k) => k,
        Err(0) => 0,
        Err(k) => k - 1,
    };
    nearest_root(v, anchors[k].1)
}

/// Distance from c to the segment [a, b].
pub fn seg_dist(a: C64, b: C64, c: C64) -> f64 {
    let d = b - a;
    let l2 = d.norm_sqr();
    if l2 == 0.0 {
        return (c - a).norm();
    }
    let t = (((c - a) * d.conj()).re / l2).clamp(0.0, 1.0);
    (a + d * t - c).norm()
}
