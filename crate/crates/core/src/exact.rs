//! Multivariate polynomials and rational functions over Q, with a recursive
//! primitive-remainder-sequence gcd. Meant for small variable counts.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

pub type Q = BigRational;

#[derive(Clone, PartialEq, Eq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Q>,
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .rev()
            .map(|(e, c)| {
                let mono: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| d > 0)
                    .map(|(i, &d)| if d == 1 { format!("x{}", i + 1) } else { format!("x{}^{}", i + 1, d) })
                    .collect();
                if mono.is_empty() {
                    format!("{c}")
                } else {
                    format!("{c}*{}", mono.join("*"))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: Q) -> Self {
        let mut p = Self::zero(nvars);
        if !c.is_zero() {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, Q::one())
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(e, Q::one());
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Q)> {
        self.terms.iter()
    }

    fn add_term(&mut self, e: Vec<u32>, c: Q) {
        if c.is_zero() {
            return;
        }
        let slot = self.terms.entry(e.clone()).or_insert_with(Q::zero);
        *slot += c;
        if slot.is_zero() {
            self.terms.remove(&e);
        }
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut r = self.clone();
        for (e, c) in &o.terms {
            r.add_term(e.clone(), c.clone());
        }
        r
    }

    pub fn neg(&self) -> Poly {
        Poly { nvars: self.nvars, terms: self.terms.iter().map(|(e, c)| (e.clone(), -c)).collect() }
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.neg())
    }

    pub fn scale(&self, s: &Q) -> Poly {
        if s.is_zero() {
            return Poly::zero(self.nvars);
        }
        Poly { nvars: self.nvars, terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect() }
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &o.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                r.add_term(e, c1 * c2);
            }
        }
        r
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut r = Poly::one(self.nvars);
        for _ in 0..k {
            r = r.mul(self);
        }
        r
    }

    pub fn deg(&self, v: usize) -> u32 {
        self.terms.keys().map(|e| e[v]).max().unwrap_or(0)
    }

    /// Coefficient of v^d, as a polynomial free of v.
    pub fn coeff(&self, v: usize, d: u32) -> Poly {
        let mut r = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[v] == d {
                let mut e2 = e.clone();
                e2[v] = 0;
                r.terms.insert(e2, c.clone());
            }
        }
        r
    }

    fn shift(&self, v: usize, d: u32) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    let mut e2 = e.clone();
                    e2[v] += d;
                    (e2, c.clone())
                })
                .collect(),
        }
    }

    fn lead(&self) -> Option<(&Vec<u32>, &Q)> {
        self.terms.iter().next_back()
    }

    fn top_var(&self) -> Option<usize> {
        (0..self.nvars).rev().find(|&v| self.deg(v) > 0)
    }

    /// Exact division; None if `d` does not divide `self`.
    pub fn div_exact(&self, d: &Poly) -> Option<Poly> {
        let (de, dc) = d.lead()?;
        let (de, dc) = (de.clone(), dc.clone());
        let mut rem = self.clone();
        let mut quo = Poly::zero(self.nvars);
        while let Some((re, rc)) = rem.lead() {
            if re.iter().zip(&de).any(|(a, b)| a < b) {
                return None;
            }
            let e: Vec<u32> = re.iter().zip(&de).map(|(a, b)| a - b).collect();
            let c = rc / &dc;
            let mut t = Poly::zero(self.nvars);
            t.terms.insert(e, c);
            rem = rem.sub(&t.mul(d));
            quo = quo.add(&t);
        }
        Some(quo)
    }

    /// Scales so the leading (lex-largest) coefficient is one.
    pub fn monic(&self) -> Poly {
        match self.lead() {
            Some((_, c)) => {
                let inv = c.recip();
                self.scale(&inv)
            }
            None => self.clone(),
        }
    }

    fn prem(&self, b: &Poly, v: usize) -> Poly {
        let db = b.deg(v);
        let lb = b.coeff(v, db);
        let mut r = self.clone();
        while !r.is_zero() && r.deg(v) >= db {
            let d = r.deg(v);
            let lr = r.coeff(v, d);
            r = lb.mul(&r).sub(&lr.mul(&b.shift(v, d - db)));
        }
        r
    }

    fn content(&self, v: usize) -> Poly {
        let mut g = Poly::zero(self.nvars);
        for d in 0..=self.deg(v) {
            let c = self.coeff(v, d);
            if !c.is_zero() {
                g = gcd(&g, &c);
            }
        }
        g
    }

    fn primitive(&self, v: usize) -> Poly {
        let c = self.content(v);
        self.div_exact(&c).expect("content divides")
    }

    pub fn eval(&self, x: &[Q]) -> Q {
        let mut s = Q::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (i, &d) in e.iter().enumerate() {
                for _ in 0..d {
                    t *= &x[i];
                }
            }
            s += t;
        }
        s
    }
}

/// Monic greatest common divisor.
pub fn gcd(a: &Poly, b: &Poly) -> Poly {
    if a.is_zero() {
        return b.monic();
    }
    if b.is_zero() {
        return a.monic();
    }
    let n = a.nvars;
    let v = match (a.top_var(), b.top_var()) {
        (None, _) | (_, None) => return Poly::one(n),
        (Some(x), Some(y)) => x.max(y),
    };
    if a.deg(v) == 0 {
        return gcd(a, &b.content(v));
    }
    if b.deg(v) == 0 {
        return gcd(&a.content(v), b);
    }
    let c = gcd(&a.content(v), &b.content(v));
    let mut p = a.primitive(v);
    let mut q = b.primitive(v);
    let g = loop {
        if p.deg(v) < q.deg(v) {
            std::mem::swap(&mut p, &mut q);
        }
        let r = p.prem(&q, v);
        if r.is_zero() {
            break q;
        }
        if r.deg(v) == 0 {
            break Poly::one(n);
        }
        p = q;
        q = r.primitive(v);
    };
    c.mul(&g.primitive(v)).monic()
}

/// Reduced rational function num/den with monic denominator.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RatFn {
    pub num: Poly,
    pub den: Poly,
}

impl RatFn {
    pub fn new(num: Poly, den: Poly) -> Option<Self> {
        if den.is_zero() {
            return None;
        }
        if num.is_zero() {
            return Some(RatFn { den: Poly::one(num.nvars), num });
        }
        let g = gcd(&num, &den);
        let num = num.div_exact(&g)?;
        let den = den.div_exact(&g)?;
        let lc = den.lead().map(|(_, c)| c.clone()).unwrap_or_else(Q::one);
        Some(RatFn { num: num.scale(&lc.recip()), den: den.scale(&lc.recip()) })
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        RatFn { num: Poly::var(nvars, i), den: Poly::one(nvars) }
    }

    pub fn constant(nvars: usize, c: i64) -> Self {
        RatFn { num: Poly::constant(nvars, Q::from_integer(BigInt::from(c))), den: Poly::one(nvars) }
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn mul(&self, o: &RatFn) -> RatFn {
        RatFn::new(self.num.mul(&o.num), self.den.mul(&o.den)).expect("nonzero denominators")
    }

    pub fn add(&self, o: &RatFn) -> RatFn {
        RatFn::new(self.num.mul(&o.den).add(&o.num.mul(&self.den)), self.den.mul(&o.den))
            .expect("nonzero denominators")
    }

    pub fn inv(&self) -> Option<RatFn> {
        RatFn::new(self.den.clone(), self.num.clone())
    }

    pub fn eval(&self, x: &[Q]) -> Option<Q> {
        let d = self.den.eval(x);
        if d.is_zero() {
            None
        } else {
            Some(self.num.eval(x) / d)
        }
    }

    /// Total degree of numerator plus denominator, a size measure.
    pub fn size(&self) -> usize {
        self.num.terms.len() + self.den.terms.len()
    }
}

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn q_to_f64(x: &Q) -> f64 {
    num_traits::ToPrimitive::to_f64(x).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcd_recovers_common_factor() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        let one = Poly::one(2);
        let f = x.add(&y).add(&one); // 1 + x + y
        let a = f.mul(&x.sub(&y));
        let b = f.mul(&x.mul(&y).add(&one));
        assert_eq!(gcd(&a, &b), f.monic());
        let r = RatFn::new(a, b).unwrap();
        assert_eq!(r.num, x.sub(&y));
    }

    #[test]
    fn gcd_three_vars() {
        let v: Vec<Poly> = (0..3).map(|i| Poly::var(3, i)).collect();
        let one = Poly::one(3);
        let f = v[0].mul(&v[2]).add(&one);
        let a = f.mul(&f).mul(&v[1].add(&one));
        let b = f.mul(&v[1].sub(&v[2]));
        assert_eq!(gcd(&a, &b), f.monic());
    }
}
