//! Forward-mode dual numbers used to differentiate the flatness maps.
//!
//! [`Grad`] carries a fixed-size gradient and is used for Jacobians with
//! respect to derivative-stack entries. [`Tangent`] carries a single
//! directional derivative over any [`Scalar`]; the flatness code uses it to
//! push a flat-output derivative stack one order forward in time, which is
//! how angular accelerations are obtained from snap.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    /// Real (value) part.
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }

    /// Absolute value; the derivative at zero is taken as zero.
    fn abs(self) -> Self {
        let r = self.re();
        if r > 0.0 {
            self
        } else if r < 0.0 {
            -self
        } else {
            self.scale(0.0)
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Value plus a gradient with respect to `N` seeded inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grad<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Grad<N> {
    pub fn var(re: f64, index: usize) -> Self {
        let mut eps = [0.0; N];
        eps[index] = 1.0;
        Self { re, eps }
    }

    #[inline]
    fn chain(self, re: f64, d: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= d;
        }
        Self { re, eps }
    }
}

impl<const N: usize> Add for Grad<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Grad<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Grad<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<const N: usize> Div for Grad<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl<const N: usize> Neg for Grad<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.re, -1.0)
    }
}

impl<const N: usize> Scalar for Grad<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self {
            re: v,
            eps: [0.0; N],
        }
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, 0.5 / r)
    }
    #[inline]
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self.chain(self.re * k, k)
    }
}

/// Value and one directional derivative, both over an inner scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Tangent<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }
}

impl<T: Scalar> Add for Tangent<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl<T: Scalar> Sub for Tangent<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl<T: Scalar> Mul for Tangent<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.re * rhs.re, self.eps * rhs.re + self.re * rhs.eps)
    }
}

impl<T: Scalar> Div for Tangent<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        Self::new(q, (self.eps - q * rhs.eps) / rhs.re)
    }
}

impl<T: Scalar> Neg for Tangent<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Tangent<T> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::new(T::cst(v), T::cst(0.0))
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re.re()
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Self::new(r, self.eps / r.scale(2.0))
    }
    #[inline]
    fn sin(self) -> Self {
        Self::new(self.re.sin(), self.eps * self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Self::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Self::new(self.re.scale(k), self.eps.scale(k))
    }
}
