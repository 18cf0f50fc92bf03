//! Cluster Poisson tori, the gluing maps iota, kappa and mu = iota . kappa,
//! and the Fock-Goncharov flip law.
//!
//! A map is a list of elementary steps. Every step is written once over a
//! generic field so the same code evaluates at complex points and composes
//! exactly over Q(x_1, .., x_n).

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::RatFn;
use crate::surface::{matrix_mutation, ExchangeMatrix};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub labels: Vec<String>,
    /// Entry (i, j) is the pairing of basis vectors e_i and e_j.
    pub skew: ExchangeMatrix,
}

impl Seed {
    pub fn new(skew: ExchangeMatrix) -> Result<Self> {
        if !skew.is_skew() {
            return Err(Error::Invalid("form is not skew-symmetric".into()));
        }
        let labels = (1..=skew.n()).map(|i| format!("e{i}")).collect();
        Ok(Seed { labels, skew })
    }

    pub fn rank(&self) -> usize {
        self.skew.n()
    }

    pub fn pair(&self, a: &[i64], b: &[i64]) -> i64 {
        let n = self.rank();
        let mut s = 0;
        for i in 0..n {
            for j in 0..n {
                s += a[i] * self.skew.0[i][j] * b[j];
            }
        }
        s
    }
}

pub type TorusPoint = Vec<C64>;

/// Arithmetic needed to run a step.
pub trait Field: Clone {
    fn one_like(&self) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn inv(&self) -> Result<Self>;
    fn powi(&self, k: i64) -> Result<Self> {
        let mut r = self.one_like();
        for _ in 0..k.unsigned_abs() {
            r = r.mul(self);
        }
        if k < 0 {
            r.inv()
        } else {
            Ok(r)
        }
    }
}

impl Field for C64 {
    fn one_like(&self) -> Self {
        C64::new(1.0, 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn inv(&self) -> Result<Self> {
        if self.norm() < 1e-300 {
            return Err(Error::PoleOfMap("division by zero".into()));
        }
        Ok(1.0 / self)
    }
    fn powi(&self, k: i64) -> Result<Self> {
        if k < 0 && self.norm() < 1e-300 {
            return Err(Error::PoleOfMap("division by zero".into()));
        }
        Ok(self.powi(k as i32))
    }
}

impl Field for RatFn {
    fn one_like(&self) -> Self {
        RatFn::constant(self.num.nvars(), 1)
    }
    fn add(&self, o: &Self) -> Self {
        RatFn::add(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        RatFn::mul(self, o)
    }
    fn inv(&self) -> Result<Self> {
        RatFn::inv(self).ok_or_else(|| Error::PoleOfMap("zero rational function".into()))
    }
}

/// One elementary birational map between cluster tori.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    /// Monomial map X_j -> X_j X_k^{max(<e_k,e_j>,0)}, X_k -> 1/X_k.
    Iota { skew: ExchangeMatrix, k: usize },
    /// X_j -> X_j (1 + X_k)^{<e_j,e_k>}.
    Kappa { skew: ExchangeMatrix, k: usize },
    /// X_k -> 1/X_k, X_j -> X_j (1 + X_k^{-sgn eps_jk})^{-eps_jk}.
    FgFlip { eps: ExchangeMatrix, k: usize },
}

fn pole_guard<F: Field>(x: &F, check: &dyn Fn(&F) -> bool) -> Result<()> {
    if check(x) {
        Err(Error::PoleOfMap("factor vanishes".into()))
    } else {
        Ok(())
    }
}

impl Step {
    pub fn apply<F: Field>(&self, x: &[F], vanishes: &dyn Fn(&F) -> bool) -> Result<Vec<F>> {
        let n = x.len();
        match self {
            Step::Iota { skew, k } => {
                let k = *k;
                let mut out = Vec::with_capacity(n);
                for j in 0..n {
                    if j == k {
                        out.push(x[k].inv()?);
                    } else {
                        let e = skew.0[k][j].max(0);
                        out.push(x[j].mul(&x[k].powi(e)?));
                    }
                }
                Ok(out)
            }
            Step::Kappa { skew, k } => {
                let k = *k;
                let f = x[k].one_like().add(&x[k]);
                pole_guard(&f, vanishes)?;
                (0..n).map(|j| Ok(x[j].mul(&f.powi(skew.0[j][k])?))).collect()
            }
            Step::FgFlip { eps, k } => {
                let k = *k;
                let mut out = Vec::with_capacity(n);
                for j in 0..n {
                    if j == k {
                        out.push(x[k].inv()?);
                        continue;
                    }
                    let e = eps.0[j][k];
                    if e == 0 {
                        out.push(x[j].clone());
                        continue;
                    }
                    let f = x[k].one_like().add(&x[k].powi(-e.signum())?);
                    pole_guard(&f, vanishes)?;
                    out.push(x[j].mul(&f.powi(-e)?));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BirationalTorusMap {
    pub rank: usize,
    pub steps: Vec<Step>,
}

/// Tolerance for declaring a numeric factor zero.
const POLE_TOL: f64 = 1e-14;

impl BirationalTorusMap {
    pub fn identity(rank: usize) -> Self {
        Self { rank, steps: vec![] }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &BirationalTorusMap) -> Self {
        let mut steps = self.steps.clone();
        steps.extend(next.steps.iter().cloned());
        Self { rank: self.rank, steps }
    }

    pub fn eval(&self, p: &[C64]) -> Result<TorusPoint> {
        if p.len() != self.rank || p.iter().any(|z| z.norm() == 0.0) {
            return Err(Error::Invalid("torus point must have nonzero entries of the right length".into()));
        }
        let mut x = p.to_vec();
        for s in &self.steps {
            x = s.apply(&x, &|f: &C64| f.norm() < POLE_TOL)?;
        }
        Ok(x)
    }

    /// Exact composite as rational functions over Q, for rank <= 3.
    pub fn exact(&self) -> Result<Vec<RatFn>> {
        if self.rank > 3 {
            return Err(Error::Invalid("exact form only for rank <= 3".into()));
        }
        let mut x: Vec<RatFn> = (0..self.rank).map(|i| RatFn::var(self.rank, i)).collect();
        for s in &self.steps {
            x = s.apply(&x, &|f: &RatFn| f.is_zero())?;
        }
        Ok(x)
    }

    pub fn is_exact_identity(&self) -> Result<bool> {
        let e = self.exact()?;
        Ok(e.iter().enumerate().all(|(i, f)| *f == RatFn::var(self.rank, i)))
    }
}

pub fn monomial_map_iota(seed: &Seed, k: usize) -> BirationalTorusMap {
    BirationalTorusMap { rank: seed.rank(), steps: vec![Step::Iota { skew: seed.skew.clone(), k }] }
}

pub fn cluster_automorphism_kappa(seed: &Seed, k: usize) -> BirationalTorusMap {
    BirationalTorusMap { rank: seed.rank(), steps: vec![Step::Kappa { skew: seed.skew.clone(), k }] }
}

/// mu_k = iota_k . kappa_k together with the mutated seed.
pub fn mutation_map(seed: &Seed, k: usize) -> (Seed, BirationalTorusMap) {
    let map = cluster_automorphism_kappa(seed, k).then(&monomial_map_iota(seed, k));
    let new = Seed { labels: seed.labels.clone(), skew: matrix_mutation(&seed.skew, k) };
    (new, map)
}

pub fn fg_flip_law(eps: &ExchangeMatrix, k: usize) -> BirationalTorusMap {
    BirationalTorusMap { rank: eps.n(), steps: vec![Step::FgFlip { eps: eps.clone(), k }] }
}

/// Seed whose mutation map coincides with the flip law for `eps`: the form
/// is the transpose, <e_i, e_j> = eps_ji.
pub fn seed_for_flip_law(eps: &ExchangeMatrix) -> Seed {
    Seed::new(eps.transpose()).expect("exchange matrices are skew")
}

/// Alternating mutation sequence mu_{k1}, mu_{k2}, ... starting at `seed`.
pub fn mutation_sequence(seed: &Seed, ks: &[usize]) -> (Seed, BirationalTorusMap) {
    let mut s = seed.clone();
    let mut map = BirationalTorusMap::identity(seed.rank());
    for &k in ks {
        let (s2, m) = mutation_map(&s, k);
        map = map.then(&m);
        s = s2;
    }
    (s, map)
}

/// Random torus point with moduli in [0.2, 5] and arguments away from pi.
pub fn random_point<R: Rng>(rng: &mut R, n: usize) -> TorusPoint {
    (0..n)
        .map(|_| {
            let r = (rng.gen_range(0.2f64.ln()..5f64.ln())).exp();
            let a = rng.gen_range(-0.9..0.9) * std::f64::consts::PI;
            C64::from_polar(r, a)
        })
        .collect()
}

/// Log-canonical bracket of two functions at `p`, by central differences.
pub fn bracket(
    skew: &ExchangeMatrix,
    f: &dyn Fn(&[C64]) -> Result<C64>,
    g: &dyn Fn(&[C64]) -> Result<C64>,
    p: &[C64],
) -> Result<C64> {
    let n = p.len();
    let grad = |h: &dyn Fn(&[C64]) -> Result<C64>| -> Result<Vec<C64>> {
        let mut out = vec![];
        for i in 0..n {
            // derivative in log coordinates: X_i d/dX_i
            let step: f64 = 1e-5;
            let mut a = p.to_vec();
            let mut b = p.to_vec();
            a[i] *= step.exp();
            b[i] *= (-step).exp();
            let mut a2 = p.to_vec();
            let mut b2 = p.to_vec();
            a2[i] *= (2.0 * step).exp();
            b2[i] *= (-2.0 * step).exp();
            // fourth-order central difference
            let d = (8.0 * (h(&a)? - h(&b)?) - (h(&a2)? - h(&b2)?)) / (12.0 * step);
            out.push(d);
        }
        Ok(out)
    };
    let gf = grad(f)?;
    let gg = grad(g)?;
    let mut s = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            s += skew.0[i][j] as f64 * gf[i] * gg[j];
        }
    }
    Ok(s)
}

/// Largest relative deviation of the pushed-forward brackets from the
/// log-canonical form of the target seed.
pub fn poisson_defect(source: &Seed, target: &Seed, map: &BirationalTorusMap, p: &[C64]) -> Result<f64> {
    let n = source.rank();
    let image = map.eval(p)?;
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let fa = |x: &[C64]| map.eval(x).map(|y| y[a]);
            let fb = |x: &[C64]| map.eval(x).map(|y| y[b]);
            let lhs = bracket(&source.skew, &fa, &fb, p)?;
            let rhs = target.skew.0[a][b] as f64 * image[a] * image[b];
            let scale = (image[a] * image[b]).norm();
            worst = worst.max((lhs - rhs).norm() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a2() -> Seed {
        Seed::new(ExchangeMatrix(vec![vec![0, 1], vec![-1, 0]])).unwrap()
    }

    #[test]
    fn kappa_example() {
        let m = cluster_automorphism_kappa(&a2(), 1);
        let y = m.eval(&[C64::new(2.0, 0.0), C64::new(3.0, 0.0)]).unwrap();
        assert!((y[0] - C64::new(8.0, 0.0)).norm() < 1e-14);
        assert!((y[1] - C64::new(3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn flip_law_example() {
        let e = ExchangeMatrix(vec![vec![0, 1], vec![-1, 0]]);
        let y = fg_flip_law(&e, 0).eval(&[C64::new(2.0, 0.0), C64::new(3.0, 0.0)]).unwrap();
        assert!((y[0] - C64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((y[1] - C64::new(9.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn iota_inverts_k() {
        let y = monomial_map_iota(&a2(), 0).eval(&[C64::new(2.0, 0.0), C64::new(3.0, 0.0)]).unwrap();
        assert!((y[0] - C64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((y[1] - C64::new(6.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn a1_mutation_inverts() {
        let s = Seed::new(ExchangeMatrix(vec![vec![0]])).unwrap();
        let (_, m) = mutation_map(&s, 0);
        let e = m.exact().unwrap();
        assert_eq!(e[0], RatFn::var(1, 0).inv().unwrap());
    }

    #[test]
    fn kappa_pole() {
        let m = cluster_automorphism_kappa(&a2(), 0);
        assert!(matches!(m.eval(&[C64::new(-1.0, 0.0), C64::new(3.0, 0.0)]), Err(Error::PoleOfMap(_))));
    }
}
