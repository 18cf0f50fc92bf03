//! Small numerical kernels: complex polynomials, adaptive Gauss-Kronrod
//! quadrature and a Dormand-Prince 5(4) stepper.

use num_complex::Complex64 as C64;

/// Horner evaluation, coefficients in ascending degree.
pub fn poly_eval(c: &[C64], z: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &a| acc * z + a)
}

pub fn poly_deriv(c: &[C64]) -> Vec<C64> {
    c.iter().enumerate().skip(1).map(|(k, &a)| a * k as f64).collect()
}

pub fn poly_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut out = vec![C64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Drops trailing coefficients that are exactly zero.
pub fn poly_trim(c: &[C64]) -> Vec<C64> {
    let mut v = c.to_vec();
    while v.last().is_some_and(|x| x.norm() == 0.0) {
        v.pop();
    }
    v
}

/// All roots by Aberth-Ehrlich iteration followed by Newton polishing.
pub fn poly_roots(c: &[C64]) -> Vec<C64> {
    let c = poly_trim(c);
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return vec![];
    }
    let lead = c[n];
    let monic: Vec<C64> = c.iter().map(|a| a / lead).collect();
    let d = poly_deriv(&monic);
    // Cauchy bound for the initial circle
    let radius = 1.0 + monic[..n].iter().map(|a| a.norm()).fold(0.0, f64::max);
    let mut z: Vec<C64> = (0..n)
        .map(|k| C64::from_polar(radius * 0.5, 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4))
        .collect();
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for i in 0..n {
            let p = poly_eval(&monic, z[i]);
            let dp = poly_eval(&d, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let s: C64 = (0..n).filter(|&j| j != i).map(|j| 1.0 / (z[i] - z[j])).sum();
            let w = ratio / (1.0 - ratio * s);
            z[i] -= w;
            moved = moved.max(w.norm() / (1.0 + z[i].norm()));
        }
        if moved < 1e-15 {
            break;
        }
    }
    for r in z.iter_mut() {
        for _ in 0..3 {
            let dp = poly_eval(&d, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let step = poly_eval(&monic, *r) / dp;
            if !step.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    z
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut dyn FnMut(f64) -> C64, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        k += (f1 + f2) * WGK[j];
        if j % 2 == 1 {
            g += (f1 + f2) * WG[j / 2];
        }
    }
    ((k * h), ((k - g) * h).norm())
}

/// Globally adaptive G7-K15 quadrature of a complex function on [a, b].
/// Returns the integral and an error estimate.
pub fn integrate(f: &mut dyn FnMut(f64) -> C64, a: f64, b: f64, tol: f64) -> (C64, f64) {
    let mut pieces = vec![{
        let (v, e) = gk15(f, a, b);
        (a, b, v, e)
    }];
    for _ in 0..2000 {
        let total: C64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if err <= tol * total.norm().max(1.0) {
            break;
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (lo, hi, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            pieces.push((lo, hi, C64::new(0.0, 0.0), 0.0));
            break;
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    (pieces.iter().map(|p| p.2).sum(), pieces.iter().map(|p| p.3).sum())
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// differences between the fifth and fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[C64; N], terms: &[(f64, &[C64; N])], h: f64) -> [C64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += k[i] * (c * h);
        }
    }
    out
}

/// One Dormand-Prince step. Returns the fifth-order solution and the
/// componentwise error estimate vector.
pub fn dopri_step<const N: usize>(
    f: &mut dyn FnMut(f64, &[C64; N]) -> [C64; N],
    s: f64,
    y: &[C64; N],
    h: f64,
) -> ([C64; N], [C64; N]) {
    let k1 = f(s, y);
    let k2 = f(s + C2 * h, &axpy(y, &[(A21, &k1)], h));
    let k3 = f(s + C3 * h, &axpy(y, &[(A31, &k1), (A32, &k2)], h));
    let k4 = f(s + C4 * h, &axpy(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
    let k5 = f(s + C5 * h, &axpy(y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h));
    let k6 = f(s + h, &axpy(y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h));
    let y5 = axpy(y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
    let k7 = f(s + h, &y5);
    let mut err = [C64::new(0.0, 0.0); N];
    for i in 0..N {
        err[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
    }
    (y5, err)
}

/// Integrates y' = f(s, y) over [0, 1] with relative tolerance `rtol`
/// measured against the state norm. `renorm` is called after every accepted
/// step and may rescale the state (for linear systems).
pub fn dopri_integrate<const N: usize>(
    f: &mut dyn FnMut(f64, &[C64; N]) -> [C64; N],
    y0: [C64; N],
    rtol: f64,
    h0: f64,
    max_steps: usize,
    renorm: &mut dyn FnMut(&mut [C64; N]),
) -> Option<([C64; N], usize)> {
    let mut s = 0.0;
    let mut y = y0;
    let mut h = h0.min(1.0);
    let mut steps = 0;
    while s < 1.0 {
        if steps >= max_steps {
            return None;
        }
        if s + h > 1.0 {
            h = 1.0 - s;
        }
        let (y5, err) = dopri_step(f, s, &y, h);
        let scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max).max(y5.iter().map(|v| v.norm()).fold(0.0, f64::max));
        let e = err.iter().map(|v| v.norm()).fold(0.0, f64::max) / (rtol * scale.max(1e-300));
        if !e.is_finite() {
            h *= 0.2;
            steps += 1;
            if h < 1e-16 {
                return None;
            }
            continue;
        }
        if e <= 1.0 {
            s += h;
            y = y5;
            renorm(&mut y);
            steps += 1;
            let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            h *= (0.9 * e.powf(-0.2)).clamp(0.1, 0.9);
            steps += 1;
            if h < 1e-16 {
                return None;
            }
        }
    }
    Some((y, steps))
}
