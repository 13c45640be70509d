//! Scalar types the expression evaluator is generic over.
//!
//! `f64` gives plain values. [`Dual`] carries one directional derivative and
//! [`HyperDual`] carries two directional derivatives plus their mixed second
//! derivative, so seeding `e1 = e_i`, `e2 = e_j` yields `∂_i∂_j f` exactly.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic and elementary functions needed by the expression evaluator.
///
/// Functions with restricted domains return `None` when the argument (or a
/// derivative of it) would leave the domain.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn re(&self) -> f64;

    /// Apply a scalar function given its value and first two derivatives at `re()`.
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self;

    fn sin(self) -> Self {
        let a = self.re();
        self.chain(a.sin(), a.cos(), -a.sin())
    }
    fn cos(self) -> Self {
        let a = self.re();
        self.chain(a.cos(), -a.sin(), -a.cos())
    }
    fn exp(self) -> Self {
        let e = self.re().exp();
        self.chain(e, e, e)
    }
    fn tanh(self) -> Self {
        let t = self.re().tanh();
        let s = 1.0 - t * t;
        self.chain(t, s, -2.0 * t * s)
    }
    fn abs(self) -> Self {
        let a = self.re();
        let s = if a > 0.0 {
            1.0
        } else if a < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(a.abs(), s, 0.0)
    }
    fn ln(self) -> Option<Self> {
        let a = self.re();
        if a > 0.0 {
            Some(self.chain(a.ln(), 1.0 / a, -1.0 / (a * a)))
        } else {
            None
        }
    }
    fn sqrt(self) -> Option<Self>;
    fn powf(self, p: f64) -> Option<Self>;
    fn checked_div(self, rhs: Self) -> Option<Self> {
        if rhs.re() == 0.0 {
            None
        } else {
            Some(self / rhs)
        }
    }
}

pub(crate) fn pow_parts(a: f64, p: f64) -> Option<(f64, f64, f64)> {
    let int = p.fract() == 0.0 && p.abs() < 2.0e9;
    if a == 0.0 && p < 0.0 {
        return None;
    }
    if !int && a < 0.0 {
        return None;
    }
    if int {
        let n = p as i32;
        let f0 = a.powi(n);
        let f1 = if n == 0 { 0.0 } else { p * a.powi(n - 1) };
        let f2 = if n == 0 || n == 1 {
            0.0
        } else {
            p * (p - 1.0) * a.powi(n - 2)
        };
        Some((f0, f1, f2))
    } else {
        Some((
            a.powf(p),
            p * a.powf(p - 1.0),
            p * (p - 1.0) * a.powf(p - 2.0),
        ))
    }
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn chain(self, f0: f64, _f1: f64, _f2: f64) -> Self {
        f0
    }
    fn sqrt(self) -> Option<Self> {
        (self >= 0.0).then(|| f64::sqrt(self))
    }
    fn powf(self, p: f64) -> Option<Self> {
        pow_parts(self, p).map(|(f0, _, _)| f0)
    }
}

/// First-order dual number `re + eps·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}
impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}
impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}
impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        Self::new(self.re * inv, (self.eps - self.re * inv * o.eps) * inv)
    }
}
impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Self::new(v, 0.0)
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn chain(self, f0: f64, f1: f64, _f2: f64) -> Self {
        Self::new(f0, f1 * self.eps)
    }
    fn sqrt(self) -> Option<Self> {
        if self.re > 0.0 {
            let s = self.re.sqrt();
            Some(self.chain(s, 0.5 / s, 0.0))
        } else if self.re == 0.0 && self.eps == 0.0 {
            Some(self)
        } else {
            None
        }
    }
    fn powf(self, p: f64) -> Option<Self> {
        let (f0, f1, f2) = pow_parts(self.re, p)?;
        Some(self.chain(f0, f1, f2))
    }
}

/// Hyper-dual number `re + e1·ε₁ + e2·ε₂ + e12·ε₁ε₂` with `ε₁² = ε₂² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub fn new(re: f64, e1: f64, e2: f64, e12: f64) -> Self {
        Self { re, e1, e2, e12 }
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.re + o.re,
            self.e1 + o.e1,
            self.e2 + o.e2,
            self.e12 + o.e12,
        )
    }
}
impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(
            self.re - o.re,
            self.e1 - o.e1,
            self.e2 - o.e2,
            self.e12 - o.e12,
        )
    }
}
impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re,
            self.re * o.e1 + self.e1 * o.re,
            self.re * o.e2 + self.e2 * o.re,
            self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        )
    }
}
impl Div for HyperDual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        // a / b = a * (1/b); 1/b via chain rule with f = 1/t.
        let b = o.re;
        let inv = o.chain(1.0 / b, -1.0 / (b * b), 2.0 / (b * b * b));
        self * inv
    }
}
impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.e1, -self.e2, -self.e12)
    }
}

impl Scalar for HyperDual {
    fn constant(v: f64) -> Self {
        Self::new(v, 0.0, 0.0, 0.0)
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        Self::new(
            f0,
            f1 * self.e1,
            f1 * self.e2,
            f1 * self.e12 + f2 * self.e1 * self.e2,
        )
    }
    fn sqrt(self) -> Option<Self> {
        if self.re > 0.0 {
            let s = self.re.sqrt();
            Some(self.chain(s, 0.5 / s, -0.25 / (s * self.re)))
        } else if self.re == 0.0 && self.e1 == 0.0 && self.e2 == 0.0 && self.e12 == 0.0 {
            Some(self)
        } else {
            None
        }
    }
    fn powf(self, p: f64) -> Option<Self> {
        let (f0, f1, f2) = pow_parts(self.re, p)?;
        Some(self.chain(f0, f1, f2))
    }
}
