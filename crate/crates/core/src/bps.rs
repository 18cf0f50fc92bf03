//! BPS structures, DT invariants, ray diagrams, the twisted torus and the
//! wall-crossing automorphisms S(l) and S(Delta).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::exact::{q, Q};
use crate::foliation::{bps_invariants, is_generic, HatBasis, SpectrumTable};
use crate::surface::ExchangeMatrix;
use crate::{Error, Result, C64};

pub type Class = Vec<i64>;

/// Angular tolerance (radians) for two periods to lie on one ray.
pub const RAY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpsStructure {
    pub rank: usize,
    /// Entry (i, j) is the pairing of basis classes e_i and e_j.
    pub skew: ExchangeMatrix,
    pub z: Vec<C64>,
    /// Nonzero values only, both signs of every class stored.
    pub omega: BTreeMap<Class, Q>,
}

/// Pairing on the lattice spanned by the WKB arcs, read off from the
/// exchange matrix of the WKB triangulation.
pub fn skew_from_exchange(eps: &ExchangeMatrix) -> ExchangeMatrix {
    eps.transpose()
}

impl BpsStructure {
    pub fn new(skew: ExchangeMatrix, z: Vec<C64>, omega: BTreeMap<Class, Q>) -> Result<Self> {
        let rank = z.len();
        if skew.n() != rank || !skew.is_skew() {
            return Err(Error::Invalid("skew form must be a skew matrix of the lattice rank".into()));
        }
        let mut om = BTreeMap::new();
        for (g, v) in omega {
            if g.len() != rank {
                return Err(Error::Invalid(format!("class {g:?} has the wrong length")));
            }
            if v.is_zero() {
                continue;
            }
            if g.iter().all(|&a| a == 0) {
                return Err(Error::Invalid("Omega(0) must vanish".into()));
            }
            let neg: Class = g.iter().map(|a| -a).collect();
            if let Some(w) = om.get(&neg) {
                if *w != v {
                    return Err(Error::Invalid(format!("Omega is not symmetric at {g:?}")));
                }
            }
            om.insert(neg, v.clone());
            om.insert(g, v);
        }
        let s = BpsStructure { rank, skew, z, omega: om };
        for g in s.omega.keys() {
            if s.central_charge(g).norm() == 0.0 {
                return Err(Error::Invalid(format!("active class {g:?} has zero central charge")));
            }
        }
        Ok(s)
    }

    /// Assembles (Gamma, Z, Omega) from the hat basis and the spectrum of a
    /// generic differential.
    pub fn from_differential(basis: &HatBasis, table: &SpectrumTable) -> Result<Self> {
        if !is_generic(table, RAY_TOL) {
            return Err(Error::NotGeneric("two non-proportional classes share a ray".into()));
        }
        let omega = bps_invariants(table).into_iter().map(|(k, v)| (k, q(v, 1))).collect();
        Self::new(skew_from_exchange(&basis.skew), basis.periods.clone(), omega)
    }

    /// The same structure in another lattice basis; row i of `m` holds old
    /// basis class i in the new coordinates and `skew` is the new pairing.
    pub fn change_basis(&self, m: &[Vec<i64>], skew: ExchangeMatrix) -> Result<Self> {
        let n = self.rank;
        // solve m z_new = z_old
        let mut a: Vec<Vec<C64>> = (0..n)
            .map(|i| {
                let mut row: Vec<C64> = m[i].iter().map(|&x| C64::new(x as f64, 0.0)).collect();
                row.push(self.z[i]);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&x, &y| a[x][col].norm().total_cmp(&a[y][col].norm())).unwrap();
            if a[piv][col].norm() < 1e-12 {
                return Err(Error::Invalid("basis change is singular".into()));
            }
            a.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for k in col..=n {
                        let v = a[col][k];
                        a[r][k] -= f * v;
                    }
                }
            }
        }
        let z = (0..n).map(|i| a[i][n] / a[i][i]).collect();
        let omega = self
            .omega
            .iter()
            .map(|(g, w)| ((0..n).map(|j| (0..n).map(|i| g[i] * m[i][j]).sum()).collect(), w.clone()))
            .collect();
        let out = BpsStructure::new(skew, z, omega)?;
        for i in 0..n {
            for j in 0..n {
                let mut e = vec![0; n];
                e[i] = 1;
                let mut f = vec![0; n];
                f[j] = 1;
                if out.pair(&m[i], &m[j]) != self.pair(&e, &f) {
                    return Err(Error::Invalid("basis change does not preserve the pairing".into()));
                }
            }
        }
        Ok(out)
    }

    pub fn central_charge(&self, g: &[i64]) -> C64 {
        g.iter().zip(&self.z).map(|(&a, z)| z * a as f64).sum()
    }

    pub fn pair(&self, a: &[i64], b: &[i64]) -> i64 {
        let mut s = 0;
        for i in 0..self.rank {
            for j in 0..self.rank {
                s += a[i] * self.skew.0[i][j] * b[j];
            }
        }
        s
    }

    pub fn omega_of(&self, g: &[i64]) -> Q {
        self.omega.get(g).cloned().unwrap_or_else(|| q(0, 1))
    }

    /// A constant C with |Z(g)| > C |g| on the active classes (sup norm).
    pub fn support_constant(&self) -> f64 {
        let m = self
            .omega
            .keys()
            .map(|g| self.central_charge(g).norm() / g.iter().map(|a| a.abs()).max().unwrap() as f64)
            .fold(f64::INFINITY, f64::min);
        if m.is_finite() {
            0.5 * m
        } else {
            1.0
        }
    }

    pub fn dt(&self, max_mult: i64) -> BTreeMap<Class, Q> {
        dt_from_bps(&self.omega, max_mult)
    }
}

fn gcd_all(g: &[i64]) -> i64 {
    g.iter().fold(0i64, |mut a, &b| {
        let mut b = b.abs();
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    })
}

fn mobius(mut n: i64) -> i64 {
    let mut r = 1;
    let mut p = 2;
    while p * p <= n {
        if n % p == 0 {
            n /= p;
            if n % p == 0 {
                return 0;
            }
            r = -r;
        }
        p += 1;
    }
    if n > 1 {
        r = -r;
    }
    r
}

/// DT(g) = sum over g = m a of Omega(a) / m^2, evaluated on every multiple
/// k p (k <= max_mult) of the primitive parts p of the support.
pub fn dt_from_bps(omega: &BTreeMap<Class, Q>, max_mult: i64) -> BTreeMap<Class, Q> {
    let mut keys = std::collections::BTreeSet::new();
    for g in omega.keys() {
        let d = gcd_all(g);
        if d == 0 {
            continue;
        }
        let p: Class = g.iter().map(|a| a / d).collect();
        for k in 1..=max_mult.max(d) {
            keys.insert(p.iter().map(|a| a * k).collect::<Class>());
        }
    }
    let mut out = BTreeMap::new();
    for g in keys {
        let d = gcd_all(&g);
        let mut acc = q(0, 1);
        for m in 1..=d {
            if d % m != 0 {
                continue;
            }
            let a: Class = g.iter().map(|x| x / m).collect();
            if let Some(w) = omega.get(&a) {
                acc += w / q(m * m, 1);
            }
        }
        if !acc.is_zero() {
            out.insert(g, acc);
        }
    }
    out
}

/// Inverse of `dt_from_bps`: Omega(g) = sum over m | g of mu(m) DT(g/m) / m^2.
pub fn bps_from_dt(dt: &BTreeMap<Class, Q>) -> BTreeMap<Class, Q> {
    let mut out = BTreeMap::new();
    for g in dt.keys() {
        let d = gcd_all(g);
        let mut acc = q(0, 1);
        for m in 1..=d {
            if d % m != 0 {
                continue;
            }
            let mu = mobius(m);
            if mu == 0 {
                continue;
            }
            let a: Class = g.iter().map(|x| x / m).collect();
            if let Some(w) = dt.get(&a) {
                acc += w * q(mu, m * m);
            }
        }
        if !acc.is_zero() {
            out.insert(g.clone(), acc);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    /// arg Z / pi in (-1, 1].
    pub phase: f64,
    pub classes: Vec<(Class, Q)>,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayDiagram {
    /// Clockwise from just counterclockwise of the positive real axis.
    pub rays: Vec<Ray>,
}

fn ray_phase(z: C64) -> f64 {
    let p = z.arg() / PI;
    if p <= -1.0 {
        1.0
    } else {
        p
    }
}

/// Clockwise angle from the reference direction 0+ to the phase, in [0, 2).
fn clockwise_key(phase: f64) -> f64 {
    let k = (-phase).rem_euclid(2.0);
    if k == 0.0 {
        2.0
    } else {
        k
    }
}

fn same_phase(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(2.0);
    d.min(2.0 - d) * PI < RAY_TOL
}

pub fn ray_diagram(bps: &BpsStructure, h_max: f64) -> RayDiagram {
    let mut rays: Vec<Ray> = vec![];
    for (g, w) in &bps.omega {
        let z = bps.central_charge(g);
        if z.norm() >= h_max {
            continue;
        }
        let ph = ray_phase(z);
        match rays.iter_mut().find(|r| same_phase(r.phase, ph)) {
            Some(r) => {
                r.classes.push((g.clone(), w.clone()));
                r.height = r.height.min(z.norm());
            }
            None => rays.push(Ray { phase: ph, classes: vec![(g.clone(), w.clone())], height: z.norm() }),
        }
    }
    rays.sort_by(|a, b| clockwise_key(a.phase).total_cmp(&clockwise_key(b.phase)));
    RayDiagram { rays }
}

impl RayDiagram {
    /// Height of the ray at this phase; infinite when not active.
    pub fn height(&self, phase: f64) -> f64 {
        self.rays.iter().find(|r| same_phase(r.phase, phase)).map_or(f64::INFINITY, |r| r.height)
    }

    pub fn is_active(&self, phase: f64) -> bool {
        self.height(phase).is_finite()
    }
}

/// A point of the twisted torus, stored by its values on the basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistedTorusPoint {
    pub values: Vec<C64>,
    pub skew: ExchangeMatrix,
}

impl TwistedTorusPoint {
    pub fn new(values: Vec<C64>, skew: ExchangeMatrix) -> Result<Self> {
        if values.len() != skew.n() || values.iter().any(|v| v.norm() == 0.0 || !v.is_finite()) {
            return Err(Error::Invalid("twisted torus values must be finite, nonzero, one per basis class".into()));
        }
        Ok(TwistedTorusPoint { values, skew })
    }

    /// Sign of the quadratic refinement, (-1)^{sum_{i<j} a_i a_j <e_i,e_j>}.
    pub fn twist(&self, g: &[i64]) -> f64 {
        let n = g.len();
        let mut e = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                e += g[i] * g[j] * self.skew.0[i][j];
            }
        }
        if e.rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn eval(&self, g: &[i64]) -> C64 {
        let mut v = C64::new(self.twist(g), 0.0);
        for (x, &a) in self.values.iter().zip(g) {
            v *= x.powi(a as i32);
        }
        v
    }
}

/// The basepoint xi: -1 on non-closed saddle classes, +1 on closed ones.
pub fn xi_basepoint(skew: &ExchangeMatrix, non_closed: &[bool], closed: &[bool]) -> Result<TwistedTorusPoint> {
    let mut vals = vec![];
    for j in 0..skew.n() {
        let (a, b) = (non_closed.get(j).copied().unwrap_or(false), closed.get(j).copied().unwrap_or(false));
        if a && b {
            return Err(Error::ConflictingFlags(j));
        }
        vals.push(C64::new(if b { 1.0 } else { -1.0 }, 0.0));
    }
    TwistedTorusPoint::new(vals, skew.clone())
}

/// S(l) for one ray, as a point map of the twisted torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayMap {
    pub phase: f64,
    pub classes: Vec<(Class, Q)>,
}

impl RayMap {
    pub fn eval(&self, g: &TwistedTorusPoint) -> Result<TwistedTorusPoint> {
        let n = g.values.len();
        let mut out = g.values.clone();
        for (gam, w) in &self.classes {
            let om = w.to_integer().to_i64().filter(|_| w.is_integer()).ok_or_else(|| {
                Error::Invalid(format!("Omega({gam:?}) = {w} is not an integer"))
            })?;
            let x = g.eval(gam);
            let f = C64::new(1.0, 0.0) - x;
            for (b, o) in out.iter_mut().enumerate() {
                let pairing: i64 = (0..n).map(|j| g.skew.0[b][j] * gam[j]).sum();
                let k = om * pairing;
                if k == 0 {
                    continue;
                }
                if f.norm() < 1e-14 * (1.0 + x.norm()) {
                    return Err(Error::PoleOfMap(format!("x_{gam:?} = 1")));
                }
                *o *= f.powi(k as i32);
            }
        }
        TwistedTorusPoint::new(out, g.skew.clone())
    }
}

pub fn bps_automorphism(bps: &BpsStructure, phase: f64) -> RayMap {
    let classes = bps
        .omega
        .iter()
        .filter(|(g, _)| same_phase(ray_phase(bps.central_charge(g)), phase))
        .map(|(g, w)| (g.clone(), w.clone()))
        .collect();
    RayMap { phase, classes }
}

/// S(Delta) = S(l_1) o ... o S(l_k), rays in clockwise order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorMap {
    pub rays: Vec<RayMap>,
    pub max_height: f64,
}

impl SectorMap {
    pub fn eval(&self, g: &TwistedTorusPoint) -> Result<TwistedTorusPoint> {
        let mut p = g.clone();
        for r in self.rays.iter().rev() {
            p = r.eval(&p)?;
        }
        Ok(p)
    }
}

/// Sector swept clockwise from the ray at `phase_minus` to the ray at
/// `phase_plus` (phases in units of pi).
pub fn sector_composition(bps: &BpsStructure, phase_minus: f64, phase_plus: f64, h: f64) -> Result<SectorMap> {
    let diagram = ray_diagram(bps, h);
    for p in [phase_minus, phase_plus] {
        if ray_diagram(bps, f64::INFINITY).is_active(p) {
            return Err(Error::ActiveBoundary(p));
        }
    }
    let width = (phase_minus - phase_plus).rem_euclid(2.0);
    let mut inside: Vec<(f64, RayMap)> = diagram
        .rays
        .iter()
        .filter_map(|r| {
            let from_minus = (phase_minus - r.phase).rem_euclid(2.0);
            (from_minus > 0.0 && from_minus < width).then(|| (from_minus, RayMap { phase: r.phase, classes: r.classes.clone() }))
        })
        .collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0));
    let max_height = diagram.rays.iter().map(|r| r.height).fold(0.0, f64::max);
    Ok(SectorMap { rays: inside.into_iter().map(|x| x.1).collect(), max_height })
}
