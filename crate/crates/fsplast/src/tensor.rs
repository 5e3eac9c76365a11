//! Dense 3x3 second-order tensors, generic over the differentiation scalar.
//!
//! Row-major storage. Inverse is closed-form via the adjugate; the matrix
//! exponential uses scaling-and-squaring with a truncated series, which stays
//! valid under dual and tape scalars so the Newton solver can differentiate
//! straight through it.

use crate::diff::Scalar;
use crate::error::{Error, Result};

pub const SINGULAR_DET: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct Tensor2<S: Scalar>(pub [S; 9]);

impl<S: Scalar> Tensor2<S> {
    pub fn zero() -> Self {
        Tensor2(std::array::from_fn(|_| S::zero()))
    }

    pub fn identity() -> Self {
        Tensor2(std::array::from_fn(|i| {
            if i % 4 == 0 {
                S::one()
            } else {
                S::zero()
            }
        }))
    }

    pub fn from_f64s(a: &[f64; 9]) -> Self {
        Tensor2(std::array::from_fn(|i| S::from_f64(a[i])))
    }

    pub fn diag(a: S, b: S, c: S) -> Self {
        let mut t = Self::zero();
        t.0[0] = a;
        t.0[4] = b;
        t.0[8] = c;
        t
    }

    pub fn at(&self, i: usize, j: usize) -> &S {
        &self.0[3 * i + j]
    }

    pub fn values(&self) -> [f64; 9] {
        std::array::from_fn(|i| self.0[i].value())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.value().is_finite())
    }

    pub fn add(&self, o: &Self) -> Self {
        Tensor2(std::array::from_fn(|i| {
            self.0[i].clone() + o.0[i].clone()
        }))
    }

    pub fn sub(&self, o: &Self) -> Self {
        Tensor2(std::array::from_fn(|i| {
            self.0[i].clone() - o.0[i].clone()
        }))
    }

    pub fn scale(&self, s: S) -> Self {
        Tensor2(std::array::from_fn(|i| self.0[i].clone() * s.clone()))
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = S::zero();
                for k in 0..3 {
                    acc = acc + self.0[3 * i + k].clone() * o.0[3 * k + j].clone();
                }
                out.0[3 * i + j] = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = self.clone();
        for i in 0..3 {
            for j in (i + 1)..3 {
                out.0.swap(3 * i + j, 3 * j + i);
            }
        }
        out
    }

    pub fn trace(&self) -> S {
        self.0[0].clone() + self.0[4].clone() + self.0[8].clone()
    }

    /// Deviator A - I tr(A)/3.
    pub fn dev(&self) -> Self {
        let third = self.trace() * S::from_f64(1.0 / 3.0);
        let mut out = self.clone();
        out.0[0] = out.0[0].clone() - third.clone();
        out.0[4] = out.0[4].clone() - third.clone();
        out.0[8] = out.0[8].clone() - third;
        out
    }

    /// Double contraction sum_ij A_ij B_ij.
    pub fn ddot(&self, o: &Self) -> S {
        let mut acc = S::zero();
        for i in 0..9 {
            acc = acc + self.0[i].clone() * o.0[i].clone();
        }
        acc
    }

    pub fn norm(&self) -> S {
        self.ddot(self).sqrt()
    }

    pub fn det(&self) -> S {
        let a = &self.0;
        a[0].clone() * (a[4].clone() * a[8].clone() - a[5].clone() * a[7].clone())
            - a[1].clone() * (a[3].clone() * a[8].clone() - a[5].clone() * a[6].clone())
            + a[2].clone() * (a[3].clone() * a[7].clone() - a[4].clone() * a[6].clone())
    }

    pub fn inv(&self) -> Result<Self> {
        let d = self.det();
        if d.value().abs() <= SINGULAR_DET {
            return Err(Error::SingularTensor { det: d.value() });
        }
        let a = &self.0;
        let cof = |p: usize, q: usize, r: usize, s: usize| {
            a[p].clone() * a[q].clone() - a[r].clone() * a[s].clone()
        };
        // adjugate transpose / det
        let inv_d = S::one() / d;
        let out = [
            cof(4, 8, 5, 7),
            cof(2, 7, 1, 8),
            cof(1, 5, 2, 4),
            cof(5, 6, 3, 8),
            cof(0, 8, 2, 6),
            cof(2, 3, 0, 5),
            cof(3, 7, 4, 6),
            cof(1, 6, 0, 7),
            cof(0, 4, 1, 3),
        ];
        Ok(Tensor2(std::array::from_fn(|i| {
            out[i].clone() * inv_d.clone()
        })))
    }

    /// Matrix exponential by scaling-and-squaring with a truncated power
    /// series. The argument is halved until its Frobenius norm is below 0.5,
    /// the series is summed until the term norm drops under 1e-16, and the
    /// result is squared back up.
    pub fn expm(&self) -> Result<Self> {
        let norm = self.norm().value();
        if !norm.is_finite() {
            return Err(Error::NonFinite("expm argument"));
        }
        let mut squarings = 0u32;
        let mut scale = 1.0f64;
        while norm * scale > 0.5 {
            scale *= 0.5;
            squarings += 1;
            if squarings > 64 {
                return Err(Error::NonFinite("expm scaling"));
            }
        }
        let x = self.scale(S::from_f64(scale));
        let mut sum = Self::identity();
        let mut term = Self::identity();
        for k in 1..=30 {
            term = term.matmul(&x).scale(S::from_f64(1.0 / k as f64));
            sum = sum.add(&term);
            if term.norm().value() < 1e-16 {
                break;
            }
        }
        for _ in 0..squarings {
            sum = sum.matmul(&sum);
        }
        if !sum.is_finite() {
            return Err(Error::NonFinite("expm result"));
        }
        Ok(sum)
    }
}
