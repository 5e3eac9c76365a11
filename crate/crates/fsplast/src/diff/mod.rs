//! Differentiation engine: a scalar abstraction shared by the plain `f64`
//! path, forward-mode dual numbers (return-map Jacobians, potential
//! derivatives) and a reverse-mode tape (training gradients).
//!
//! Everything downstream (tensors, potentials, the constitutive update) is
//! generic over [`Scalar`], so one implementation of the physics serves all
//! three evaluation modes, including nested ones such as dual-over-dual for
//! second derivatives or dual-over-tape for potential derivatives inside a
//! recorded training step.

mod dual;
mod tape;

pub use dual::Dual;
pub use tape::{Tape, Var};

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic closed under the chain rule. `value()` exposes the primal for
/// branching; branches are frozen with respect to differentiation, which is
/// the subgradient choice for the Macaulay bracket (`max0` at 0 returns the
/// zero branch).
pub trait Scalar:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Sized
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// ln(1 + x), accurate near x = 0.
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    /// Macaulay bracket max(x, 0) with derivative 0 at the kink.
    fn max0(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    /// x^e for x > 0, via exp(e ln x) so the exponent may be a variable.
    fn powf(self, e: Self) -> Self {
        (e * self.ln()).exp()
    }
    fn powi(self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = acc * self.clone();
        }
        acc
    }
    /// Numerically stable softplus ln(1 + e^x).
    fn softplus(self) -> Self {
        if self.value() > 0.0 {
            self.clone() + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn max0(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
}

/// Lift an `f64` slice into any scalar type as constants.
pub fn lift<S: Scalar>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&x| S::from_f64(x)).collect()
}

/// Maximum number of simultaneous forward directions. Covers the coupled
/// uniaxial step system (lateral stretch + return-map unknowns) up to two
/// backstresses, with headroom.
pub const MAX_DIRS: usize = 40;

/// Gradient of a scalar function of `n` reals by forward-mode duals.
pub fn grad<F>(f: F, x: &[f64]) -> Vec<f64>
where
    F: Fn(&[Dual<f64, MAX_DIRS>]) -> Dual<f64, MAX_DIRS>,
{
    assert!(x.len() <= MAX_DIRS, "too many independent variables");
    let seeded: Vec<_> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::seeded(v, i, x.len()))
        .collect();
    let out = f(&seeded);
    out.derivs(x.len())
}

/// Dense Jacobian of an m-vector residual with m inputs, forward-mode.
/// Row-major `m x m`.
pub fn jacobian<F>(f: F, x: &[f64]) -> Vec<f64>
where
    F: Fn(&[Dual<f64, MAX_DIRS>]) -> Vec<Dual<f64, MAX_DIRS>>,
{
    let n = x.len();
    assert!(n <= MAX_DIRS, "too many independent variables");
    let seeded: Vec<_> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::seeded(v, i, n))
        .collect();
    let rows = f(&seeded);
    assert_eq!(rows.len(), n, "jacobian requires a square system");
    let mut j = vec![0.0; n * n];
    for (r, out) in rows.iter().enumerate() {
        let d = out.derivs(n);
        j[r * n..(r + 1) * n].copy_from_slice(&d);
    }
    j
}

/// Gradient of a scalar function by the reverse-mode tape. Suited to many
/// inputs; one forward recording and one backward sweep.
pub fn grad_reverse<F>(f: F, x: &[f64]) -> Vec<f64>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<_> = x.iter().map(|&v| tape.var(v)).collect();
    let out = f(&vars);
    tape.gradient(out, &vars)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn square_derivative() {
        let g = grad(|x| x[0].clone() * x[0].clone(), &[3.0]);
        assert!((g[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_derivative_at_zero() {
        // d/dx log(1+e^x) at 0 is the logistic value 0.5
        let g = grad(|x| x[0].clone().softplus(), &[0.0]);
        assert!((g[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_finite_differences_on_smooth_composite() {
        let f = |x: &[f64]| (x[0] * x[1]).exp() + x[2].sqrt() * x[0].ln_1p() / x[1];
        let x = [0.7, 1.3, 2.2];
        let fd = fd_grad(f, &x);
        let ad = grad(
            |x| {
                (x[0].clone() * x[1].clone()).exp()
                    + x[2].clone().sqrt() * x[0].clone().ln_1p() / x[1].clone()
            },
            &x,
        );
        for i in 0..3 {
            assert!((ad[i] - fd[i]).abs() <= 1e-5 * fd[i].abs().max(1.0));
        }
    }

    #[test]
    fn jacobian_of_identity_and_linear_maps() {
        let j = jacobian(|x| x.to_vec(), &[1.0, 2.0, 3.0]);
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((j[r * 3 + c] - want).abs() < 1e-14);
            }
        }
        // r(x) = A x
        let a = [2.0, -1.0, 0.5, 3.0];
        let j = jacobian(
            |x| {
                vec![
                    x[0].clone() * Dual::from_f64(a[0]) + x[1].clone() * Dual::from_f64(a[1]),
                    x[0].clone() * Dual::from_f64(a[2]) + x[1].clone() * Dual::from_f64(a[3]),
                ]
            },
            &[0.3, -0.8],
        );
        for i in 0..4 {
            assert!((j[i] - a[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn reverse_matches_forward() {
        let x = [0.4, 1.9, 0.2, 3.0];
        let fwd = grad(
            |x| {
                ((x[0].clone() + x[1].clone() * x[2].clone()).exp() + x[3].clone().sqrt())
                    .ln()
                    .max0()
            },
            &x,
        );
        let rev = grad_reverse(
            |x| {
                ((x[0] + x[1] * x[2]).exp() + x[3].sqrt()).ln().max0()
            },
            &x,
        );
        for i in 0..4 {
            assert!((fwd[i] - rev[i]).abs() < 1e-12, "{i}: {} vs {}", fwd[i], rev[i]);
        }
    }

    #[test]
    fn linearity_of_grad() {
        let x = [0.9, -0.4];
        let f = |x: &[Dual<f64, MAX_DIRS>]| (x[0].clone() * x[1].clone()).exp();
        let g = |x: &[Dual<f64, MAX_DIRS>]| x[0].clone() * x[0].clone() + x[1].clone();
        let (a, b) = (2.5, -1.25);
        let combo = grad(
            |x| f(x) * Dual::from_f64(a) + g(x) * Dual::from_f64(b),
            &x,
        );
        let gf = grad(f, &x);
        let gg = grad(g, &x);
        for i in 0..2 {
            assert!((combo[i] - (a * gf[i] + b * gg[i])).abs() < 1e-13);
        }
    }
}
