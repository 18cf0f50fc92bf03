//! The family y'' = Q(z, t) y with Q = phi / t^2 + Q_corr: transport along
//! paths, monodromy at double poles, subdominant solutions in Stokes sectors
//! and Fock-Goncharov coordinates of the resulting framed local systems.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::differential::{seg_dist, PoleRef, QuadraticDifferential};
use crate::foliation::{in_h, Termination, Wkb};
use crate::numerics::dopri_integrate;
use crate::surface::{IdealTriangulation, Mark, Side};
use crate::{Error, Result, C64};

/// A line in C^2, stored by a representative vector.
pub type Line = [C64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperConfig {
    pub ode_tol: f64,
    pub line_tol: f64,
    /// Seed radius at infinity relative to the farthest point the solution
    /// is carried to.
    pub r_big: f64,
    pub check_seed: bool,
    pub max_steps: usize,
    /// Sides of the polygon used for loops around double poles.
    pub loop_sides: usize,
}

impl Default for OperConfig {
    fn default() -> Self {
        OperConfig { ode_tol: 1e-12, line_tol: 1e-7, r_big: 1.5, check_seed: true, max_steps: 5_000_000, loop_sides: 64 }
    }
}

/// c / ((z - p1)(z - p2))
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct CorrTerm {
    c: f64,
    p1: C64,
    p2: C64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperFamily {
    pub phi: QuadraticDifferential,
    pub cfg: OperConfig,
    pub base: C64,
    corr: Vec<CorrTerm>,
    size: f64,
}

/// Transport matrix, true value exp(log_scale) * m.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transport {
    pub m: [[C64; 2]; 2],
    pub log_scale: f64,
}

impl Transport {
    pub fn matrix(&self) -> [[C64; 2]; 2] {
        let s = self.log_scale.exp();
        self.m.map(|r| r.map(|x| x * s))
    }

    pub fn det(&self) -> C64 {
        let m = self.matrix();
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eigendata {
    /// Eigenvalues from the trace and determinant of the loop transport.
    pub lambda: [C64; 2],
    pub lines: [Line; 2],
    /// Where the loop starts and the lines live.
    pub base: C64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramedLineSet {
    pub base: C64,
    pub lines: BTreeMap<Mark, Line>,
}

pub fn line_distance(a: &Line, b: &Line) -> f64 {
    let d = a[0] * b[1] - a[1] * b[0];
    d.norm() / (norm2(a) * norm2(b))
}

fn norm2(v: &Line) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
}

fn det(a: &Line, b: &Line) -> C64 {
    a[0] * b[1] - a[1] * b[0]
}

/// (z1 - z2)(z3 - z4) / ((z2 - z3)(z1 - z4)) for the four lines.
pub fn cross_ratio(v: [&Line; 4]) -> C64 {
    det(v[0], v[1]) * det(v[2], v[3]) / (det(v[1], v[2]) * det(v[0], v[3]))
}

impl OperFamily {
    pub fn new(phi: &QuadraticDifferential, cfg: OperConfig) -> Result<Self> {
        phi.validate()?;
        let mut corr = vec![];
        let doubles: Vec<C64> = phi.poles.iter().filter(|p| p.order == 2).map(|p| p.z).collect();
        for &p in &doubles {
            corr.push(CorrTerm { c: -0.25, p1: p, p2: p });
        }
        if phi.infinity_order() <= 2 {
            if phi.infinity_order() != 2 {
                return Err(Error::UnsupportedTopology("infinity must be a pole of order at least two".into()));
            }
            // make the correction behave as -1/(4 w^2) in w = 1/z as well
            let c = (doubles.len() as f64 - 1.0) / 4.0;
            if c != 0.0 {
                let high = phi.poles.iter().find(|p| p.order >= 3).map(|p| (p.z, p.z));
                let pair = if doubles.len() >= 2 { Some((doubles[0], doubles[1])) } else { high };
                let (p1, p2) = pair.ok_or_else(|| Error::UnsupportedTopology("no pole to carry the correction at infinity".into()))?;
                corr.push(CorrTerm { c, p1, p2 });
            }
        }
        let mut pts = phi.zeros()?;
        pts.extend(phi.poles.iter().map(|p| p.z));
        let size = pts.iter().map(|p| p.norm()).fold(phi.scale(), f64::max);
        let mut fam = OperFamily { phi: phi.clone(), cfg, base: C64::new(0.0, 0.0), corr, size };
        fam.base = fam.pick_base(&pts);
        Ok(fam)
    }

    fn pick_base(&self, pts: &[C64]) -> C64 {
        let s = self.phi.scale();
        let mut best = (f64::NEG_INFINITY, C64::new(0.0, 0.0));
        for k in 0..64 {
            let z = C64::from_polar(0.05 * s * (k / 8) as f64, 2.0 * PI * (k % 8) as f64 / 8.0 + 0.37);
            let d = pts.iter().map(|p| (p - z).norm()).fold(f64::INFINITY, f64::min);
            if d > best.0 + 1e-12 * s {
                best = (d, z);
            }
            if d > 0.2 * s {
                return z;
            }
        }
        best.1
    }

    pub fn potential(&self, z: C64, t: C64) -> C64 {
        let mut q = self.phi.eval(z) / (t * t);
        for c in &self.corr {
            q += c.c / ((z - c.p1) * (z - c.p2));
        }
        q
    }

    fn potential_deriv(&self, z: C64, t: C64) -> C64 {
        let (f, ld) = self.phi.eval_log_deriv(z);
        let mut d = f * ld / (t * t);
        for c in &self.corr {
            let (u, v) = (z - c.p1, z - c.p2);
            d -= c.c * (1.0 / u + 1.0 / v) / (u * v);
        }
        d
    }

    fn check_path(&self, path: &[C64]) -> Result<()> {
        let tol = 1e-9 * self.phi.scale();
        for w in path.windows(2) {
            for p in &self.phi.poles {
                if seg_dist(w[0], w[1], p.z) < tol {
                    return Err(Error::SingularityOnPath(format!("{} passes through the pole {}", w[0], p.z)));
                }
            }
        }
        Ok(())
    }

    /// Transports several (y, y') columns along a polyline; returns the
    /// normalized columns and the common log scale.
    fn transport_cols<const N: usize>(&self, path: &[C64], t: C64, y0: [C64; N]) -> Result<([C64; N], f64)> {
        self.check_path(path)?;
        let mut y = y0;
        let mut log_scale = 0.0;
        for w in path.windows(2) {
            let (za, d) = (w[0], w[1] - w[0]);
            if d.norm() == 0.0 {
                continue;
            }
            let mut f = |s: f64, v: &[C64; N]| -> [C64; N] {
                let z = za + d * s;
                let q = self.potential(z, t);
                let mut out = [C64::new(0.0, 0.0); N];
                for k in 0..N / 2 {
                    out[2 * k] = v[2 * k + 1] * d;
                    out[2 * k + 1] = q * v[2 * k] * d;
                }
                out
            };
            let rate = self.potential(za, t).norm().sqrt() * d.norm() + 1e-300;
            let h0 = (0.05 / rate).min(0.1);
            let mut renorm = |v: &mut [C64; N]| {
                let m = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
                if m > 1e50 || (m < 1e-50 && m > 0.0) {
                    for x in v.iter_mut() {
                        *x /= m;
                    }
                    log_scale += m.ln();
                }
            };
            let (yn, _) = dopri_integrate(&mut f, y, self.cfg.ode_tol, h0, self.cfg.max_steps, &mut renorm)
                .ok_or_else(|| Error::Stalled(format!("transport from {za} to {}", w[1])))?;
            y = yn;
            let m = y.iter().map(|x| x.norm()).fold(0.0, f64::max);
            if m > 0.0 {
                for x in y.iter_mut() {
                    *x /= m;
                }
                log_scale += m.ln();
            }
        }
        Ok((y, log_scale))
    }

    /// Transport matrix along a polyline: columns are the solutions with
    /// initial data (1, 0) and (0, 1).
    pub fn transport(&self, path: &[C64], t: C64) -> Result<Transport> {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let (y, log_scale) = self.transport_cols(path, t, [one, zero, zero, one])?;
        Ok(Transport { m: [[y[0], y[2]], [y[1], y[3]]], log_scale })
    }

    pub fn transport_line(&self, path: &[C64], t: C64, v: Line) -> Result<Line> {
        Ok(self.transport_cols(path, t, v)?.0)
    }

    fn loop_around(&self, center: C64, start: C64) -> Vec<C64> {
        let r = start - center;
        let n = self.cfg.loop_sides;
        (0..=n).map(|k| center + r * C64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64)).collect()
    }

    fn dist_to_others(&self, z: C64) -> f64 {
        let mut pts = self.phi.zeros().unwrap_or_default();
        pts.extend(self.phi.poles.iter().map(|p| p.z));
        pts.iter().map(|p| (p - z).norm()).filter(|&d| d > 1e-12 * self.size).fold(f64::INFINITY, f64::min)
    }

    /// Counterclockwise monodromy around the finite double pole p, based at
    /// `base` (default: p + 0.3 times the distance to the nearest other
    /// critical point). Lines are ordered like `predicted_eigenvalues`.
    pub fn monodromy_eigendata(&self, p: PoleRef, t: C64, base: Option<C64>) -> Result<Eigendata> {
        let PoleRef::Finite(i) = p else {
            return Err(Error::UnsupportedTopology("monodromy around infinity".into()));
        };
        if self.phi.pole_order(p) != 2 {
            return Err(Error::NotDoublePole(format!("{}", self.phi.poles[i].z)));
        }
        let c = self.phi.poles[i].z;
        let base = base.unwrap_or_else(|| c + C64::new(0.3 * self.dist_to_others(c).min(self.size), 0.0));
        let tr = self.transport(&self.loop_around(c, base), t)?;
        let predicted = self.predicted_eigenvalues(p, t)?;
        // M = e^s m with m normalized; work with m so nothing overflows
        let (m, s) = (tr.m, tr.log_scale);
        let trace = m[0][0] + m[1][1];
        let det_m = C64::new((-2.0 * s).exp(), 0.0);
        let disc = (trace * trace - 4.0 * det_m).sqrt();
        // the larger root is accurate; the smaller comes from det M = 1, since
        // a computed determinant would have lost |lambda|^2 against rounding
        let roots = [(trace + disc) / 2.0, (trace - disc) / 2.0];
        let mu = if roots[0].norm() >= roots[1].norm() { roots[0] } else { roots[1] };
        let big = mu * s.exp();
        let small = 1.0 / big;
        // a Jordan block splits by the square root of the integration error,
        // so the predicted pair is consulted too
        let collide = |l: [C64; 2]| (l[0] - l[1]).norm() < 1e-8 * l[0].norm().max(1.0);
        if collide([big, small]) || collide(predicted) {
            return Err(Error::ApparentSingularity(format!("eigenvalues collide at t = {t}")));
        }
        // columns of M - small and adj(M) - small span the two eigenlines,
        // and neither subtraction cancels
        let sm = det_m / mu;
        let unit = |v: Line| {
            let n = norm2(&v);
            [v[0] / n, v[1] / n]
        };
        let larger = |a: Line, b: Line| unit(if norm2(&a) >= norm2(&b) { a } else { b });
        let l_big = larger([m[0][0] - sm, m[1][0]], [m[0][1], m[1][1] - sm]);
        let l_small = larger([m[1][1] - sm, -m[1][0]], [-m[0][1], m[0][0] - sm]);
        let (mut lam, mut lines) = ([big, small], [l_big, l_small]);
        let by_size = (predicted[0].norm() / predicted[1].norm()).ln().abs() > 1.0;
        let swap = if by_size {
            predicted[0].norm() < predicted[1].norm()
        } else {
            (lam[0] - predicted[0]).norm() + (lam[1] - predicted[1]).norm()
                > (lam[1] - predicted[0]).norm() + (lam[0] - predicted[1]).norm()
        };
        if swap {
            lam.swap(0, 1);
            lines.swap(0, 1);
        }
        Ok(Eigendata { lambda: lam, lines, base })
    }

    /// -exp(+Res/(2t)) and -exp(-Res/(2t)) for the residue with the stored signing.
    pub fn predicted_eigenvalues(&self, p: PoleRef, t: C64) -> Result<[C64; 2]> {
        let r = self.phi.signed_residue(p)?;
        Ok([-(r / (2.0 * t)).exp(), -(-r / (2.0 * t)).exp()])
    }

    fn far_size(&self) -> f64 {
        self.size
    }

    /// Seed point and outward direction for the subdominant solution in
    /// sector j of pole p at radius factor k, beyond radius `reach`.
    fn seed_point(&self, p: PoleRef, j: usize, t: C64, reach: f64, k: f64) -> Result<(C64, C64)> {
        let m = self.phi.pole_order(p);
        if m < 3 {
            return Err(Error::Invalid("Stokes sectors need a pole of order at least 3".into()));
        }
        let dirs = self.phi.marked_directions(p, t.arg());
        let d = *dirs.get(j).ok_or_else(|| Error::Invalid(format!("sector {j} out of range")))?;
        // far enough out that the WKB exponent is large across the seed
        let stiff = |z: C64, r: f64| self.potential(z, t).norm().sqrt() * r > 40.0;
        Ok(match p {
            PoleRef::Infinity => {
                let mut r = (self.cfg.r_big * reach).max(self.far_size());
                while !stiff(d * r, r) && r < 1e8 * self.far_size() {
                    r *= 2.0;
                }
                (d * (k * r), d)
            }
            PoleRef::Finite(i) => {
                let c = self.phi.poles[i].z;
                let mut r = self.dist_to_others(c) / 5.0;
                while !stiff(c + d * r, r) && r > 1e-8 * self.far_size() {
                    r *= 0.5;
                }
                (c + d * (r / k), -d)
            }
        })
    }

    fn seed(&self, z: C64, out: C64, t: C64) -> Line {
        let q = self.potential(z, t);
        let mut s = q.sqrt();
        if (s * out).re < 0.0 {
            s = -s;
        }
        let ld = -s - self.potential_deriv(z, t) / (4.0 * q);
        [C64::new(1.0, 0.0), ld]
    }

    fn subdominant_once(&self, p: PoleRef, j: usize, t: C64, route: &[C64], k: f64) -> Result<Line> {
        let reach = route.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let (z, out) = self.seed_point(p, j, t, reach, k)?;
        let mut path = vec![z];
        path.extend_from_slice(route);
        self.transport_line(&path, t, self.seed(z, out, t))
    }

    /// The solution decaying into sector j of the pole p, carried from its
    /// seed to route[0] in a straight line and then along `route`.
    pub fn subdominant_along(&self, p: PoleRef, j: usize, t: C64, route: &[C64]) -> Result<Line> {
        let k = 1.0;
        let v = self.subdominant_once(p, j, t, route, k)?;
        if self.cfg.check_seed {
            let w = self.subdominant_once(p, j, t, route, 2.0 * k)?;
            let d = line_distance(&v, &w);
            if d > self.cfg.line_tol {
                return Err(Error::SeedUnstable(d));
            }
        }
        Ok(v)
    }

    /// Subdominant line of sector j at the basepoint.
    pub fn subdominant_line(&self, p: PoleRef, j: usize, t: C64) -> Result<Line> {
        self.subdominant_along(p, j, t, &[self.base])
    }

    /// One line per marked point at the basepoint, carried along straight
    /// segments: subdominant lines at boundary marks, and at punctures the
    /// eigenline of -exp(R/(2t)), R the residue rotated into the half plane
    /// of arg t.
    pub fn framed_local_system(&self, t: C64) -> Result<FramedLineSet> {
        let mut lines = BTreeMap::new();
        let surface = self.phi.marked_bordered_surface();
        let high: Vec<PoleRef> = self.phi.pole_refs().into_iter().filter(|&p| self.phi.pole_order(p) >= 3).collect();
        if high.len() > 1 {
            return Err(Error::UnsupportedTopology("more than one boundary component".into()));
        }
        if let Some(&p) = high.first() {
            let n = surface.boundary_marks.first().copied().unwrap_or(0) as usize;
            for j in 0..n {
                lines.insert(Mark::Boundary(j as u32), self.subdominant_line(p, j, t)?);
            }
        }
        let punctures: Vec<PoleRef> = self.phi.pole_refs().into_iter().filter(|&p| self.phi.pole_order(p) == 2).collect();
        for (i, &p) in punctures.iter().enumerate() {
            let PoleRef::Finite(k) = p else {
                return Err(Error::UnsupportedTopology("double pole at infinity".into()));
            };
            let c = self.phi.poles[k].z;
            let dir = (self.base - c) / (self.base - c).norm();
            let near = c + dir * (0.3 * self.dist_to_others(c).min((self.base - c).norm()));
            let line = self.puncture_line(p, t, near, t.arg())?;
            lines.insert(Mark::Puncture(i as u32), self.transport_line(&[near, self.base], t, line)?);
        }
        Ok(FramedLineSet { base: self.base, lines })
    }

    /// Eigenline at `near` for the eigenvalue -exp(R/(2t)), where R is the
    /// residue with e^{-i alpha} R in the upper half plane.
    fn puncture_line(&self, p: PoleRef, t: C64, near: C64, alpha: f64) -> Result<Line> {
        let (e, i) = self.puncture_eigen(p, t, near, alpha)?;
        Ok(e.lines[i])
    }

    /// Fock-Goncharov coordinates of the framed local system at t in the
    /// WKB triangulation `wkb`.
    pub fn wkb_coordinates(&self, wkb: &Wkb, t: C64) -> Result<Vec<C64>> {
        Ok(self.wkb_log_coordinates(wkb, t)?.into_iter().map(|l| l.exp()).collect())
    }

    /// Logarithms of the WKB coordinates. Each Wronskian of the cross ratio
    /// is taken at the zero whose triangle holds both corners, with the
    /// solutions carried in along that zero's separatrices, so that no two
    /// lines are compared where they are exponentially close. Scales are
    /// tracked as complex logs.
    pub fn wkb_log_coordinates(&self, wkb: &Wkb, t: C64) -> Result<Vec<C64>> {
        let nz = wkb.zeros.len();
        let alpha = PI * wkb.phase;
        // route from the end of separatrix k of zero a to the zero
        let mut routes: Vec<[Vec<C64>; 3]> = Vec::with_capacity(nz);
        for a in 0..nz {
            let mut rs: [Vec<C64>; 3] = Default::default();
            for (k, r) in rs.iter_mut().enumerate() {
                let sep = &wkb.separatrices[a][k];
                let mut pts: &[C64] = &sep.points;
                if matches!(sep.termination, Termination::PoleSector { pole: PoleRef::Infinity, .. }) {
                    // the far part of the leaf adds nothing but stiffness
                    if let Some(i) = pts.iter().position(|z| z.norm() > 1.5 * self.size) {
                        pts = &pts[..=i];
                    }
                }
                *r = pts.iter().rev().copied().collect();
                r.push(wkb.zeros[a]);
            }
            routes.push(rs);
        }

        let zero = C64::new(0.0, 0.0);
        let mut at_zero: Vec<[(Line, C64); 3]> = vec![[([zero; 2], zero); 3]; nz];
        // boundary sectors: one seed per sector shared by all its routes
        let mut sectors: BTreeMap<(PoleRef, u32), Vec<(usize, usize)>> = BTreeMap::new();
        for (a, seps) in wkb.separatrices.iter().enumerate() {
            for (k, sep) in seps.iter().enumerate() {
                match sep.termination {
                    Termination::PoleSector { pole, mark } => sectors.entry((pole, mark)).or_default().push((a, k)),
                    Termination::DoublePole(_) => {}
                    other => return Err(Error::UnsupportedTopology(format!("separatrix ends as {other:?}"))),
                }
            }
        }
        for ((pole, mark), members) in &sectors {
            let j = *mark as usize;
            let kr = 1.0;
            let reach = members.iter().flat_map(|&(a, k)| routes[a][k].iter()).map(|z| z.norm()).fold(0.0, f64::max);
            let (z, out) = self.seed_point(*pole, j, t, reach, kr)?;
            let y0 = self.seed(z, out, t);
            for (i, &(a, k)) in members.iter().enumerate() {
                let mut path = vec![z];
                path.extend_from_slice(&routes[a][k]);
                let (v, l) = self.transport_cols(&path, t, y0)?;
                if i == 0 && self.cfg.check_seed {
                    let w = self.subdominant_once(*pole, j, t, &routes[a][k], 2.0 * kr)?;
                    let d = line_distance(&v, &w);
                    if d > self.cfg.line_tol {
                        return Err(Error::SeedUnstable(d));
                    }
                }
                at_zero[a][k] = (v, C64::new(l, 0.0));
            }
        }
        // punctures: the framing eigenline at the separatrix end, unit scale there
        let mut eigen: BTreeMap<(usize, usize), (PoleRef, Eigendata, usize)> = BTreeMap::new();
        for a in 0..nz {
            for k in 0..3 {
                if let Termination::DoublePole(p) = wkb.separatrices[a][k].termination {
                    let q = routes[a][k][0];
                    let (e, i) = self.puncture_eigen(p, t, q, alpha)?;
                    let (v, l) = self.transport_cols(&routes[a][k], t, e.lines[i])?;
                    at_zero[a][k] = (v, C64::new(l, 0.0));
                    eigen.insert((a, k), (p, e, i));
                }
            }
        }

        let wr = |u: &(Line, C64), v: &(Line, C64)| -> Result<C64> {
            let d = det(&u.0, &v.0);
            if d.norm() < 1e-300 {
                return Err(Error::DegenerateQuadrilateral(0));
            }
            Ok(d.ln() + u.1 + v.1)
        };
        let n = wkb.strips.len();
        let mut y = vec![zero; n];
        for (j, s) in wkb.strips.iter().enumerate() {
            let (a, sa) = s.a;
            let (b, sb) = s.b;
            let c1a = at_zero[a][sa];
            let c3a = at_zero[a][(sa + 1) % 3];
            let c4 = at_zero[a][(sa + 2) % 3];
            let c2 = at_zero[b][(sb + 2) % 3];
            // the shared corners as seen from b, on the same solutions as at a
            let shared = |ka: usize, kb: usize| -> Result<(Line, C64)> {
                let (v, l) = at_zero[b][kb];
                let Some((p, ea, ia)) = eigen.get(&(a, ka)) else {
                    return Ok((v, l));
                };
                let (_, eb, ib) = &eigen[&(b, kb)];
                let scale = self.carry_eigen(*p, t, ea, *ia, &routes[a][ka], &s.path, &routes[b][kb], eb, *ib)?;
                Ok((v, l + scale))
            };
            let c1b = shared(sa, (sb + 1) % 3)?;
            let c3b = shared((sa + 1) % 3, sb)?;
            let lw = wr(&c1b, &c2).and_then(|w12| Ok(w12 + wr(&c3a, &c4)? - wr(&c2, &c3b)? - wr(&c1a, &c4)?));
            y[j] = lw.map_err(|_| Error::DegenerateQuadrilateral(j))?;
        }
        Ok((0..n)
            .map(|j| match wkb.triangulation.self_folded_interior(j) {
                Some((Side::Arc(k), _)) => y[j] + y[k],
                _ => y[j],
            })
            .collect())
    }

    /// Monodromy eigendata at `near` and the index of the eigenvalue
    /// -exp(R/(2t)), R the residue with e^{-i alpha} R in the upper half plane.
    fn puncture_eigen(&self, p: PoleRef, t: C64, near: C64, alpha: f64) -> Result<(Eigendata, usize)> {
        let r0 = self.phi.residue_at(p, 1)?.residue;
        let r = if in_h(r0 * C64::from_polar(1.0, -alpha)) { r0 } else { -r0 };
        let e = self.monodromy_eigendata(p, t, Some(near))?;
        // lines follow the order of predicted_eigenvalues, which uses the signed residue
        let rs = self.phi.signed_residue(p)?;
        let i = usize::from((r - rs).norm() > (r + rs).norm());
        Ok((e, i))
    }

    /// Complex log of the factor c with u = c e_b, where u is the eigen
    /// solution ea.lines[ia] at the start of `route_a`, continued to the start of
    /// `route_b` the way route_a, the strip and route_b go around p. The
    /// continuation runs along an arc close to p.
    fn carry_eigen(
        &self,
        p: PoleRef,
        t: C64,
        ea: &Eigendata,
        ia: usize,
        route_a: &[C64],
        strip: &[C64],
        route_b: &[C64],
        eb: &Eigendata,
        ib: usize,
    ) -> Result<C64> {
        let PoleRef::Finite(i) = p else {
            return Err(Error::UnsupportedTopology("double pole at infinity".into()));
        };
        let c = self.phi.poles[i].z;
        let (qa, qb) = (route_a[0], route_b[0]);
        let long = route_a.iter().chain(strip).chain(route_b.iter().rev());
        let mut sweep = 0.0;
        let mut prev = qa;
        for &z in long {
            sweep += ((z - c) / (prev - c)).arg();
            prev = z;
        }
        let (ra, rb) = ((qa - c).norm(), (qb - c).norm());
        let phi_a = (qa - c).arg();
        let m = ((sweep.abs() / (2.0 * PI)) * self.cfg.loop_sides as f64).ceil().max(2.0) as usize;
        let mut arc: Vec<C64> = (0..=m)
            .map(|k| {
                let s = k as f64 / m as f64;
                c + C64::from_polar(ra.powf(1.0 - s) * rb.powf(s), phi_a + s * sweep)
            })
            .collect();
        arc[0] = qa;
        arc[m] = qb;
        // carry whichever end makes the eigen solution the growing one:
        // rounding along the other eigenline is what spoils the projection
        let split = |v: Line, e: Line, f: Line| (det(&v, &f) / det(&e, &f), det(&v, &e) / det(&f, &e));
        let (v, l) = self.transport_cols(&arc, t, ea.lines[ia])?;
        let (cf, df) = split(v, eb.lines[ib], eb.lines[1 - ib]);
        let back: Vec<C64> = arc.iter().rev().copied().collect();
        let (w, lw) = self.transport_cols(&back, t, eb.lines[ib])?;
        let (cb, db) = split(w, ea.lines[ia], ea.lines[1 - ia]);
        Ok(if df.norm() / cf.norm() <= db.norm() / cb.norm() { cf.ln() + l } else { -(cb.ln() + lw) })
    }

    /// Y-function: the monomial in the WKB coordinates of phase `theta`.
    pub fn y_function(&self, wkb: &Wkb, gamma: &[i64], t: C64) -> Result<C64> {
        let x = self.wkb_coordinates(wkb, t)?;
        Ok(monomial(&x, gamma))
    }
}

pub fn monomial(x: &[C64], gamma: &[i64]) -> C64 {
    x.iter().zip(gamma).map(|(v, &a)| v.powi(a as i32)).product()
}

fn self_folded_rule(tri: &IdealTriangulation, y: &[C64]) -> Vec<C64> {
    (0..y.len())
        .map(|j| match tri.self_folded_interior(j) {
            Some((Side::Arc(k), _)) => y[j] * y[k],
            _ => y[j],
        })
        .collect()
}

/// Cross ratios of lines at a common basepoint for every arc of T. The
/// lines are taken as the values at the quadrilateral corners, which is
/// exact when the surface minus the marked points is simply connected.
pub fn fock_goncharov_eval(lines: &FramedLineSet, tri: &IdealTriangulation) -> Result<Vec<C64>> {
    let n = tri.n();
    let mut y = vec![C64::new(0.0, 0.0); n];
    for (j, yj) in y.iter_mut().enumerate() {
        let mut sides = vec![];
        for (ti, tr) in tri.triangles.iter().enumerate() {
            for i in 0..3 {
                if tr.sides[i] == Side::Arc(j) {
                    sides.push((ti, i));
                }
            }
        }
        let [(t1, i1), (t2, i2)] = sides[..] else {
            return Err(Error::Invalid(format!("arc {j} does not bound two triangle sides")));
        };
        let c = &tri.triangles[t1].corners;
        let apex = tri.triangles[t2].corners[(i2 + 2) % 3];
        let get = |m: &Mark| lines.lines.get(m).ok_or_else(|| Error::Invalid(format!("no line for {m:?}")));
        let q = [get(&c[i1])?, get(&apex)?, get(&c[(i1 + 1) % 3])?, get(&c[(i1 + 2) % 3])?];
        for u in 0..4 {
            for v in u + 1..4 {
                if line_distance(q[u], q[v]) < 1e-12 {
                    return Err(Error::DegenerateQuadrilateral(j));
                }
            }
        }
        *yj = cross_ratio(q);
    }
    Ok(self_folded_rule(tri, &y))
}
