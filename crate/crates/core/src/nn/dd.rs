//! Minimal double-double arithmetic (about 106 significant bits).
//!
//! Only what the finite-difference oracle needs: +, −, ×, ÷ and `exp`.
//! Error-free transforms follow the classic Dekker/Knuth constructions;
//! multiplication relies on a fused multiply-add.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

#[allow(clippy::excessive_precision)]
const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_558e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    /// Exact sum of two doubles.
    #[inline]
    pub fn sum_exact(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, b);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, b: f64) -> Self {
        let (p1, p2) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p1, p2 + self.lo * b);
        Dd { hi, lo }
    }

    #[inline]
    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        const SQUARINGS: i32 = 10;
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).scale_pow2(-SQUARINGS);
        // Taylor series; |r| < 3.5e-4 so 12 terms are far below 1e-32
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..=12 {
            term = (term * r) / Dd::from_f64(n as f64);
            sum = sum + term;
        }
        for _ in 0..SQUARINGS {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, b.hi);
        let p2 = p2 + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_matches_reference_digits() {
        // exp(1) and exp(-11.3) to ~32 digits
        let e = Dd::ONE.exp();
        let e_ref = Dd {
            hi: std::f64::consts::E,
            lo: 1.445_646_891_729_250_2e-16,
        };
        assert!(((e - e_ref).hi / e.hi).abs() < 1e-28, "{:?}", e - e_ref);
        // exp(a)·exp(-a) = 1
        for a in [0.3, -2.7, 5.1, -11.3, 40.0] {
            let p = Dd::from_f64(a).exp() * Dd::from_f64(-a).exp();
            assert!((p - Dd::ONE).hi.abs() < 1e-27, "{a}: {:?}", p);
        }
    }

    #[test]
    fn division_round_trips() {
        let a = Dd::from_f64(1.0) / Dd::from_f64(3.0);
        let back = a * Dd::from_f64(3.0);
        assert!((back - Dd::ONE).hi.abs() < 1e-31);
    }
}
