//! Extended-precision reference values shared by the integration tests.
//! Products are formed term by term in double-double arithmetic (about 32
//! significant digits) and truncated once `|q|^k < 1e−40`, independently of
//! the library's log-domain evaluation.
#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: e }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

impl Dd {
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    pub const PI: Dd = Dd {
        hi: std::f64::consts::PI,
        lo: 1.2246467991473532e-16,
    };

    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::from(0.0);
        }
        // one Newton step from the double approximation doubles the precision
        let x = Dd::from(self.hi.sqrt());
        x + (self - x * x) / (x * Dd::from(2.0))
    }

    pub fn powi(self, n: u32) -> Self {
        (0..n).fold(Dd::ONE, |acc, _| acc * self)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let v = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(v.hi, v.lo + t.lo)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + Dd::from(q3)
    }
}

/// Powers `q^k` for `k = 0, 1, …` while `|q|^k ≥ 1e−40`.
fn powers(q: f64) -> Vec<Dd> {
    let mut out = vec![Dd::ONE];
    let qd = Dd::from(q);
    loop {
        let next = *out.last().unwrap() * qd;
        if next.hi.abs() < 1e-40 {
            break;
        }
        out.push(next);
    }
    out
}

/// `(a;q)_∞`.
pub fn qpochhammer(a: f64, q: f64) -> f64 {
    powers(q)
        .iter()
        .fold(Dd::ONE, |acc, qk| acc * (Dd::ONE - Dd::from(a) * *qk))
        .to_f64()
}

fn qq_inf(q: f64) -> Dd {
    powers(q)
        .iter()
        .skip(1)
        .fold(Dd::ONE, |acc, qk| acc * (Dd::ONE - *qk))
}

/// `α_q = (1−q)^{3/2}/(18π²) · Π_{k≥1} (1−q^k)⁷/(1+q^k)⁴`.
pub fn alpha(q: f64) -> f64 {
    let one_minus = Dd::ONE - Dd::from(q);
    let pref = one_minus * one_minus.sqrt() / (Dd::from(18.0) * Dd::PI * Dd::PI);
    powers(q)
        .iter()
        .skip(1)
        .fold(pref, |acc, qk| {
            acc * (Dd::ONE - *qk).powi(7) / (Dd::ONE + *qk).powi(4)
        })
        .to_f64()
}

/// Stationary density in its product form.
pub fn marginal(q: f64, x: f64) -> f64 {
    let one_minus = Dd::ONE - Dd::from(q);
    let xx = Dd::from(x) * Dd::from(x);
    let w = one_minus * xx;
    let pref = one_minus.sqrt() * qq_inf(q) / (Dd::from(2.0) * Dd::PI) * (Dd::from(4.0) - w).sqrt();
    powers(q)
        .iter()
        .skip(1)
        .fold(pref, |acc, qk| {
            let a = Dd::ONE + *qk;
            acc * (a * a - w * *qk)
        })
        .to_f64()
}

/// Kolmogorov distance between sorted samples and a continuous CDF.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov distance for large samples: the CDF is evaluated on `knots`
/// sorted points and interpolated linearly in between; the returned value is
/// a valid upper bound up to the interpolation error of `cdf`.
pub fn ks_statistic_knots(sorted: &[f64], knots: &[(f64, f64)]) -> f64 {
    let interp = |x: f64| -> f64 {
        let j = knots.partition_point(|k| k.0 <= x);
        if j == 0 {
            return knots[0].1;
        }
        if j == knots.len() {
            return knots[j - 1].1;
        }
        let (x0, f0) = knots[j - 1];
        let (x1, f1) = knots[j];
        f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    };
    ks_statistic(sorted, interp)
}
