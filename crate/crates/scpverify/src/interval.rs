//! Closed-interval arithmetic used for bound derivation.
//!
//! Every big-M constant and McCormick envelope in this crate is derived from
//! variable bounds through these operations, so the rules here must be
//! conservative: the result interval always contains the exact image.

use std::ops::{Add, Mul, Neg, Sub};

/// A closed interval `[lo, hi]`. Bounds may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub const ZERO: Interval = Interval::point(0.0);

    pub fn whole() -> Self {
        Interval::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_with_tol(&self, v: f64, tol: f64) -> bool {
        self.lo - tol <= v && v <= self.hi + tol
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn scale(&self, a: f64) -> Interval {
        if a >= 0.0 {
            Interval::new(a * self.lo, a * self.hi)
        } else {
            Interval::new(a * self.hi, a * self.lo)
        }
    }

    /// Interval of `v*v` for `v` in `self` (tighter than generic product).
    pub fn square(&self) -> Interval {
        let a = self.lo * self.lo;
        let b = self.hi * self.hi;
        let lo = if self.contains(0.0) { 0.0 } else { a.min(b) };
        Interval::new(lo, a.max(b))
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::new(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::new(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        // 0 * inf treated as 0: a zero coefficient kills an unbounded operand.
        fn m(a: f64, b: f64) -> f64 {
            if a == 0.0 || b == 0.0 {
                0.0
            } else {
                a * b
            }
        }
        let c = [
            m(self.lo, rhs.lo),
            m(self.lo, rhs.hi),
            m(self.hi, rhs.lo),
            m(self.hi, rhs.hi),
        ];
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_straddling_zero() {
        let i = Interval::new(-1.0, 2.0).square();
        assert_eq!(i, Interval::new(0.0, 4.0));
    }

    #[test]
    fn product_signs() {
        let a = Interval::new(-1.0, 2.0);
        let b = Interval::new(-3.0, 0.5);
        let p = a * b;
        assert_eq!(p.lo, -6.0);
        assert_eq!(p.hi, 3.0);
    }

    #[test]
    fn zero_times_unbounded_is_zero() {
        let z = Interval::point(0.0);
        let w = Interval::whole();
        assert_eq!(z * w, Interval::ZERO);
    }
}
