//! Solutions X_r(t) of the Riemann-Hilbert problem built from Y-functions
//! of rotated differentials, and numerical checks of the jump, the t -> 0
//! limit and the polynomial-growth diagnostic.

use std::f64::consts::PI;
use std::ops::Sub;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::fg_flip_law;
use crate::bps::{ray_diagram, sector_composition, BpsStructure, TwistedTorusPoint};
use crate::differential::QuadraticDifferential;
use crate::foliation::{basis_change, Foliation, FoliationConfig, HatBasis, SpectrumTable, Wkb};
use crate::opers::{OperConfig, OperFamily};
use crate::{Error, Result, C64};

pub struct RhProblem {
    pub bps: BpsStructure,
    pub xi: TwistedTorusPoint,
    /// Hat basis the BPS classes are written in.
    pub basis: HatBasis,
    pub foliation: Foliation,
    pub oper: OperFamily,
}

/// The WKB triangulation of a ray together with the reference classes
/// written in its hat basis (row i is reference class e_i).
pub struct Chart {
    pub phase: f64,
    pub wkb: Wkb,
    pub classes: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhSample {
    pub phase: f64,
    pub t: C64,
    /// X_{r, e_i}(t) on the reference basis.
    pub values: Vec<C64>,
    /// Logarithms of the values (any branch).
    pub log_values: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rh1Report {
    pub phase_minus: f64,
    pub phase_plus: f64,
    pub ts: Vec<C64>,
    /// Max relative deviation per basis class over the samples.
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
    /// Smallest tolerance of the ladder (1e-3, 1e-4) met, if any.
    pub tier: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rh2Report {
    pub phase: f64,
    pub gamma: Vec<i64>,
    pub ts: Vec<C64>,
    pub errors: Vec<f64>,
    pub eventually_decreasing: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rh3Report {
    pub phase: f64,
    pub gamma: Vec<i64>,
    pub ts: Vec<C64>,
    pub log_abs: Vec<f64>,
    pub slope: f64,
    pub residual: f64,
    /// Advisory only.
    pub weak_pass: bool,
}

/// Flip law between the WKB coordinates on the two sides of a ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub phase_minus: f64,
    pub phase_plus: f64,
    /// Arc of the triangulation at phase_minus that is flipped.
    pub arc: usize,
    pub ts: Vec<C64>,
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
}

/// Least-squares slope and rms residual of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let res = (x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum::<f64>() / n).sqrt();
    (slope, res)
}

impl RhProblem {
    /// Spectrum, BPS structure and basepoint xi of a differential, with
    /// the BPS classes written in the hat basis at the reference phase.
    pub fn new(phi: &QuadraticDifferential, fcfg: FoliationConfig, ocfg: OperConfig) -> Result<Self> {
        let foliation = Foliation::new(phi, fcfg)?;
        let table = foliation.find_saddles()?;
        Self::from_table(foliation, &table, ocfg)
    }

    pub fn from_table(foliation: Foliation, table: &SpectrumTable, ocfg: OperConfig) -> Result<Self> {
        let basis = foliation.wkb_triangulation(table.basis_phase)?.hat_basis();
        let bps = BpsStructure::from_differential(&basis, table)?;
        // every WKB basis class is the class of a non-closed saddle connection
        let n = bps.rank;
        let xi = crate::bps::xi_basepoint(&bps.skew, &vec![true; n], &vec![false; n])?;
        let oper = OperFamily::new(&foliation.phi, ocfg)?;
        Ok(RhProblem { bps, xi, basis, foliation, oper })
    }

    pub fn chart(&self, phase: f64) -> Result<Chart> {
        if ray_diagram(&self.bps, f64::INFINITY).is_active(phase) {
            return Err(Error::ActiveRay(phase));
        }
        let wkb = self.foliation.wkb_triangulation(phase)?;
        let periods = wkb.arc_periods();
        let tol = 1e-6 * self.basis.periods.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let classes = basis_change(&self.basis.periods, &periods, self.foliation.cfg.coeff_bound, tol)?;
        Ok(Chart { phase, wkb, classes })
    }

    /// X_{r, e_i}(t) for the reference basis classes.
    pub fn sample(&self, chart: &Chart, t: C64) -> Result<RhSample> {
        if (t * C64::from_polar(1.0, -PI * chart.phase)).re <= 0.0 {
            return Err(Error::Invalid(format!("t = {t} is outside the half plane of the ray {}", chart.phase)));
        }
        let lx = self.oper.wkb_log_coordinates(&chart.wkb, t)?;
        let log_values: Vec<C64> = chart
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| self.xi.values[i].ln() + c.iter().zip(&lx).map(|(&a, l)| l * a as f64).sum::<C64>())
            .collect();
        let values = log_values.iter().map(|l| l.exp()).collect();
        Ok(RhSample { phase: chart.phase, t, values, log_values })
    }

    /// log X_{r, gamma}(t) from a sample, up to 2 pi i.
    pub fn log_eval(&self, s: &RhSample, gamma: &[i64]) -> C64 {
        let twist = self.twist_sign(gamma);
        let l: C64 = gamma.iter().zip(&s.log_values).map(|(&a, l)| l * a as f64).sum();
        if twist < 0.0 {
            l + C64::new(0.0, PI)
        } else {
            l
        }
    }

    fn twist_sign(&self, gamma: &[i64]) -> f64 {
        let ones = vec![C64::new(1.0, 0.0); self.bps.rank];
        TwistedTorusPoint { values: ones, skew: self.bps.skew.clone() }.eval(gamma).re
    }

    /// X_{r, gamma}(t) for a class in reference coordinates.
    pub fn x_function(&self, phase: f64, gamma: &[i64], t: C64) -> Result<C64> {
        let chart = self.chart(phase)?;
        let s = self.sample(&chart, t)?;
        Ok(TwistedTorusPoint::new(s.values, self.bps.skew.clone())?.eval(gamma))
    }

    /// Default modulus of t for the jump check.
    pub fn small_t(&self) -> f64 {
        let zmax = self.basis.periods.iter().map(|z| z.norm()).fold(0.0, f64::max);
        0.05 * PI / zmax
    }

    /// n arguments of t spread over the middle 80% of the overlap of the
    /// two half planes, dropping those where some |Re(Z(e_i)/t)| exceeds
    /// `max_exp`. Near the edges the subdominant seeds sit close to a
    /// Stokes line and lose accuracy.
    pub fn rh1_samples(&self, phase_minus: f64, phase_plus: f64, modulus: f64, n: usize, max_exp: f64) -> Vec<C64> {
        let lo = PI * (phase_minus - 0.5);
        let hi = PI * (phase_plus + 0.5);
        (0..n)
            .map(|k| {
                let f = if n == 1 { 0.5 } else { 0.1 + 0.8 * k as f64 / (n - 1) as f64 };
                C64::from_polar(modulus, lo + (hi - lo) * f)
            })
            .filter(|t| self.basis.periods.iter().all(|z| (z / t).re.abs() <= max_exp))
            .collect()
    }

    /// Compares X_{r-}(t) with S(Delta) applied to X_{r+}(t), Delta swept
    /// clockwise from r- to r+.
    pub fn check_rh1(&self, phase_minus: f64, phase_plus: f64, ts: &[C64]) -> Result<Rh1Report> {
        let cm = self.chart(phase_minus)?;
        let cp = self.chart(phase_plus)?;
        let s = sector_composition(&self.bps, phase_minus, phase_plus, f64::INFINITY)?;
        let n = self.bps.rank;
        let devs: Vec<Vec<f64>> = ts
            .par_iter()
            .map(|&t| -> Result<Vec<f64>> {
                let xm = self.sample(&cm, t)?;
                let xp = self.sample(&cp, t)?;
                let img = s.eval(&TwistedTorusPoint::new(xp.values, self.bps.skew.clone())?)?;
                Ok((0..n).map(|i| (img.values[i] - xm.values[i]).norm() / xm.values[i].norm()).collect())
            })
            .collect::<Result<_>>()?;
        let deviation: Vec<f64> = (0..n).map(|i| devs.iter().map(|d| d[i]).fold(0.0, f64::max)).collect();
        let max_deviation = deviation.iter().copied().fold(0.0, f64::max);
        let tier = [1e-4, 1e-3].into_iter().find(|&tol| max_deviation < tol);
        Ok(Rh1Report { phase_minus, phase_plus, ts: ts.to_vec(), deviation, max_deviation, tier })
    }

    /// Coordinates of the same oper in the WKB triangulations at two
    /// phases one flip apart, compared through the flip law.
    pub fn check_flip(&self, phase_minus: f64, phase_plus: f64, ts: &[C64]) -> Result<FlipReport> {
        let wm = self.foliation.wkb_triangulation(phase_minus)?;
        let wp = self.foliation.wkb_triangulation(phase_plus)?;
        let (tm, tp) = (&wm.triangulation, &wp.triangulation);
        let gone: Vec<usize> = (0..tm.n()).filter(|&i| !tp.arcs.contains(&tm.arcs[i])).collect();
        let &[k] = &gone[..] else {
            return Err(Error::Invalid(format!("{} arcs differ between the two triangulations", gone.len())));
        };
        let flipped = tm.flip(k)?;
        let perm: Vec<usize> = flipped
            .arcs
            .iter()
            .map(|a| tp.arcs.iter().position(|b| b == a))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Invalid("triangulations are not one flip apart".into()))?;
        let law = fg_flip_law(&tm.exchange_matrix(), k);
        let deviation: Vec<f64> = ts
            .par_iter()
            .map(|&t| -> Result<f64> {
                let xm = self.oper.wkb_coordinates(&wm, t)?;
                let xp = self.oper.wkb_coordinates(&wp, t)?;
                let img = law.eval(&xm)?;
                Ok(perm.iter().enumerate().map(|(i, &j)| (img[i] - xp[j]).norm() / xp[j].norm()).fold(0.0, f64::max))
            })
            .collect::<Result<_>>()?;
        let max_deviation = deviation.iter().copied().fold(0.0, f64::max);
        Ok(FlipReport { phase_minus, phase_plus, arc: k, ts: ts.to_vec(), deviation, max_deviation })
    }

    /// e_k = |exp(Z(gamma)/t_k) X_{r,gamma}(t_k) - xi(gamma)| along t_k = |t_k| e^{i pi r}.
    pub fn check_rh2(&self, phase: f64, gamma: &[i64], moduli: &[f64], tol: f64) -> Result<Rh2Report> {
        let chart = self.chart(phase)?;
        let ts: Vec<C64> = moduli.iter().map(|&m| C64::from_polar(m, PI * phase)).collect();
        let z = self.bps.central_charge(gamma);
        let target = self.xi.eval(gamma);
        let errors: Vec<f64> = ts
            .par_iter()
            .map(|&t| -> Result<f64> {
                let s = self.sample(&chart, t)?;
                Ok(((z / t) + self.log_eval(&s, gamma)).exp().sub(target).norm())
            })
            .collect::<Result<_>>()?;
        let eventually_decreasing = eventually_decreasing(&errors);
        let pass = eventually_decreasing && errors.last().is_some_and(|&e| e < tol);
        Ok(Rh2Report { phase, gamma: gamma.to_vec(), ts, errors, eventually_decreasing, pass })
    }

    /// Slope of log|X_{r,gamma}| against log|t| for large |t| on the ray.
    pub fn check_rh3(&self, phase: f64, gamma: &[i64], moduli: &[f64]) -> Result<Rh3Report> {
        let chart = self.chart(phase)?;
        let ts: Vec<C64> = moduli.iter().map(|&m| C64::from_polar(m, PI * phase)).collect();
        let log_abs: Vec<f64> = ts
            .par_iter()
            .map(|&t| -> Result<f64> {
                let s = self.sample(&chart, t)?;
                Ok(self.log_eval(&s, gamma).re)
            })
            .collect::<Result<_>>()?;
        let lx: Vec<f64> = moduli.iter().map(|m| m.ln()).collect();
        let (slope, residual) = fit_slope(&lx, &log_abs);
        Ok(Rh3Report { phase, gamma: gamma.to_vec(), ts, log_abs, slope, residual, weak_pass: slope.abs() < 10.0 })
    }
}

/// Non-increasing over the second half of the sequence, or already at
/// rounding level there.
pub fn eventually_decreasing(e: &[f64]) -> bool {
    let tail = &e[e.len() / 2..];
    tail.windows(2).all(|w| w[1] <= w[0] || w[1] < 1e-9)
}
