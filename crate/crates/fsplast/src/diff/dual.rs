//! Forward-mode dual numbers over a fixed-capacity direction array.
//!
//! Constants carry an empty derivative vector, so lifting parameters into a
//! seeded evaluation costs nothing. The scalar component is itself a
//! [`Scalar`], which allows nesting (dual-over-dual for second derivatives,
//! dual-over-tape for potential derivatives inside a recorded step).

use super::Scalar;
use arrayvec::ArrayVec;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Debug)]
pub struct Dual<S: Scalar, const N: usize> {
    pub v: S,
    pub d: ArrayVec<S, N>,
}

impl<S: Scalar, const N: usize> Dual<S, N> {
    pub fn constant(v: S) -> Self {
        Dual {
            v,
            d: ArrayVec::new(),
        }
    }

    /// Independent variable `i` of `n`: unit derivative in direction `i`.
    pub fn seeded(v: impl Into<S>, i: usize, n: usize) -> Self
    where
        S: From<f64>,
    {
        let mut d = ArrayVec::new();
        for j in 0..n {
            d.push(if j == i { S::one() } else { S::zero() });
        }
        Dual { v: v.into(), d }
    }

    pub fn seeded_s(v: S, i: usize, n: usize) -> Self {
        let mut d = ArrayVec::new();
        for j in 0..n {
            d.push(if j == i { S::one() } else { S::zero() });
        }
        Dual { v, d }
    }

    fn deriv(&self, i: usize) -> S {
        self.d.get(i).cloned().unwrap_or_else(S::zero)
    }

    /// First `n` derivative values (missing entries are zero).
    pub fn derivs(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.deriv(i).value()).collect()
    }

    pub fn deriv_scalars(&self, n: usize) -> Vec<S> {
        (0..n).map(|i| self.deriv(i)).collect()
    }

    fn binary(a: &Self, b: &Self, v: S, df: impl Fn(S, S) -> S) -> Self {
        let n = a.d.len().max(b.d.len());
        let mut d = ArrayVec::new();
        for i in 0..n {
            d.push(df(a.deriv(i), b.deriv(i)));
        }
        Dual { v, d }
    }

    fn unary(a: &Self, v: S, df: impl Fn(S) -> S) -> Self {
        let mut d = ArrayVec::new();
        for x in a.d.iter() {
            d.push(df(x.clone()));
        }
        Dual { v, d }
    }
}

impl<S: Scalar, const N: usize> Add for Dual<S, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let v = self.v.clone() + rhs.v.clone();
        Self::binary(&self, &rhs, v, |a, b| a + b)
    }
}

impl<S: Scalar, const N: usize> Sub for Dual<S, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let v = self.v.clone() - rhs.v.clone();
        Self::binary(&self, &rhs, v, |a, b| a - b)
    }
}

impl<S: Scalar, const N: usize> Mul for Dual<S, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let v = self.v.clone() * rhs.v.clone();
        let (av, bv) = (self.v.clone(), rhs.v.clone());
        Self::binary(&self, &rhs, v, move |a, b| a * bv.clone() + b * av.clone())
    }
}

impl<S: Scalar, const N: usize> Div for Dual<S, N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        // (a/b)' = (a' - (a/b) b') / b
        let q = self.v.clone() / rhs.v.clone();
        let bv = rhs.v.clone();
        let qc = q.clone();
        Self::binary(&self, &rhs, q, move |a, b| {
            (a - qc.clone() * b) / bv.clone()
        })
    }
}

impl<S: Scalar, const N: usize> Neg for Dual<S, N> {
    type Output = Self;
    fn neg(self) -> Self {
        let v = -self.v.clone();
        Self::unary(&self, v, |a| -a)
    }
}

impl<S: Scalar, const N: usize> Scalar for Dual<S, N> {
    fn from_f64(v: f64) -> Self {
        Self::constant(S::from_f64(v))
    }

    fn value(&self) -> f64 {
        self.v.value()
    }

    fn exp(self) -> Self {
        let e = self.v.clone().exp();
        let ec = e.clone();
        Self::unary(&self, e, move |a| a * ec.clone())
    }

    fn ln(self) -> Self {
        let v = self.v.clone().ln();
        let x = self.v.clone();
        Self::unary(&self, v, move |a| a / x.clone())
    }

    fn ln_1p(self) -> Self {
        let v = self.v.clone().ln_1p();
        let den = S::one() + self.v.clone();
        Self::unary(&self, v, move |a| a / den.clone())
    }

    fn sqrt(self) -> Self {
        let r = self.v.clone().sqrt();
        let two_r = S::from_f64(2.0) * r.clone();
        Self::unary(&self, r, move |a| a / two_r.clone())
    }

    fn max0(self) -> Self {
        if self.v.value() > 0.0 {
            self
        } else {
            Self::from_f64(0.0)
        }
    }
}
