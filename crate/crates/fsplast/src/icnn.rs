//! Constraint-satisfying feedforward networks for the hardening potentials.
//!
//! Three classes are needed: convex + monotonically nondecreasing (free
//! energies), positive + convex + monotone (kinematic dissipation) and
//! positive + monotone (isotropic dissipation). The constraints are
//! structural: every layer's effective weights are softplus-reparameterized
//! raw weights (hence nonnegative), activations are parametric softplus or
//! logistic functions, and the positive classes get a softplus last-layer
//! bias. Optimizers only ever see the raw parameters, so no step can leave
//! the constraint set.

use crate::diff::Scalar;
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintClass {
    ConvexMonotone,
    PositiveConvexMonotone,
    PositiveMonotone,
}

impl ConstraintClass {
    pub fn is_positive(self) -> bool {
        !matches!(self, ConstraintClass::ConvexMonotone)
    }
    pub fn is_convex(self) -> bool {
        !matches!(self, ConstraintClass::PositiveMonotone)
    }
    /// Activation parameters per hidden neuron: alpha for the softplus
    /// family, (beta1, beta2, beta3) for the logistic family.
    fn act_params(self) -> usize {
        if self.is_convex() {
            1
        } else {
            3
        }
    }
}

/// Parametric softplus activation log(1 + e^alpha e^x): positive, increasing
/// and convex for any alpha.
pub fn act_c<S: Scalar>(x: S, alpha: S) -> S {
    (x + alpha).softplus()
}

/// Parametric logistic activation beta1 / (1 + e^(-beta2 (x - beta3))):
/// positive and increasing for beta1, beta2 > 0, with supremum beta1.
pub fn act_m<S: Scalar>(x: S, beta1: S, beta2: S, beta3: S) -> S {
    let t = -beta2 * (x - beta3);
    if t.value() > 100.0 {
        // deep left tail; same function rewritten to avoid overflow
        let e = (-t.clone()).exp();
        beta1 * e.clone() / (S::one() + e)
    } else {
        beta1 / (S::one() + t.exp())
    }
}

/// Feedforward network with structurally enforced constraints. `dims` lists
/// layer widths input..output; raw parameters live in one flat vector laid
/// out layer by layer (weights, biases, activation parameters).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstrainedNet {
    pub class: ConstraintClass,
    pub dims: Vec<usize>,
    pub raw: Vec<f64>,
}

impl ConstrainedNet {
    pub fn layout(class: ConstraintClass, dims: &[usize]) -> usize {
        let mut n = 0;
        for l in 1..dims.len() {
            n += dims[l] * dims[l - 1] + dims[l];
            if l < dims.len() - 1 {
                n += dims[l] * class.act_params();
            }
        }
        n
    }

    pub fn n_params(&self) -> usize {
        Self::layout(self.class, &self.dims)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Deterministic initialization. Raw weights are drawn so that the
    /// effective weights start near 1/fan_in; activation parameters start
    /// near their neutral values.
    pub fn init(seed: u64, class: ConstraintClass, dims: &[usize], init_std: f64) -> Self {
        assert!(dims.len() >= 2 && *dims.last().unwrap() == 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |mean: f64, std: f64| -> f64 {
            // Box-Muller on two uniform draws
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            mean + std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let softplus_inv = |y: f64| (y.exp() - 1.0).ln();
        let mut raw = Vec::with_capacity(Self::layout(class, dims));
        for l in 1..dims.len() {
            let (fan_in, out) = (dims[l - 1], dims[l]);
            let w_mean = softplus_inv(1.0 / fan_in as f64);
            for _ in 0..out * fan_in {
                raw.push(normal(w_mean, init_std));
            }
            let last = l == dims.len() - 1;
            for _ in 0..out {
                if last && class.is_positive() {
                    // small positive effective bias
                    raw.push(normal(-3.0, init_std));
                } else {
                    raw.push(normal(0.0, init_std));
                }
            }
            if !last {
                for _ in 0..out {
                    if class.is_convex() {
                        raw.push(normal(0.0, init_std)); // alpha
                    } else {
                        raw.push(normal(0.0, init_std)); // ln beta1
                        raw.push(normal(0.0, init_std)); // ln beta2
                        raw.push(normal(0.5, 0.5)); // beta3
                    }
                }
            }
        }
        ConstrainedNet {
            class,
            dims: dims.to_vec(),
            raw,
        }
    }

    /// Apply the reparameterizations once; the result feeds `forward_eff`.
    /// Weights and last-layer positive biases go through softplus, logistic
    /// amplitudes and steepnesses through exp.
    pub fn effective<S: Scalar>(&self, raw: &[S]) -> Vec<S> {
        assert_eq!(raw.len(), self.n_params());
        let mut eff = Vec::with_capacity(raw.len());
        let mut i = 0;
        for l in 1..self.dims.len() {
            let (fan_in, out) = (self.dims[l - 1], self.dims[l]);
            for _ in 0..out * fan_in {
                eff.push(raw[i].clone().softplus());
                i += 1;
            }
            let last = l == self.dims.len() - 1;
            for _ in 0..out {
                if last && self.class.is_positive() {
                    eff.push(raw[i].clone().softplus());
                } else {
                    eff.push(raw[i].clone());
                }
                i += 1;
            }
            if !last {
                for _ in 0..out {
                    if self.class.is_convex() {
                        eff.push(raw[i].clone());
                        i += 1;
                    } else {
                        eff.push(raw[i].clone().exp()); // beta1
                        eff.push(raw[i + 1].clone().exp()); // beta2
                        eff.push(raw[i + 2].clone()); // beta3
                        i += 3;
                    }
                }
            }
        }
        eff
    }

    pub fn forward_eff<S: Scalar>(&self, eff: &[S], x: &[S]) -> S {
        debug_assert_eq!(x.len(), self.dims[0]);
        let mut h: Vec<S> = x.to_vec();
        let mut i = 0;
        for l in 1..self.dims.len() {
            let (fan_in, out) = (self.dims[l - 1], self.dims[l]);
            let mut z = Vec::with_capacity(out);
            for r in 0..out {
                let mut acc = eff[i + out * fan_in + r].clone(); // bias
                for c in 0..fan_in {
                    acc = acc + eff[i + r * fan_in + c].clone() * h[c].clone();
                }
                z.push(acc);
            }
            i += out * fan_in + out;
            let last = l == self.dims.len() - 1;
            if last {
                return z.pop().unwrap();
            }
            let ap = self.class.act_params();
            h = z
                .into_iter()
                .enumerate()
                .map(|(r, zr)| {
                    let p = i + r * ap;
                    if self.class.is_convex() {
                        act_c(zr, eff[p].clone())
                    } else {
                        act_m(zr, eff[p].clone(), eff[p + 1].clone(), eff[p + 2].clone())
                    }
                })
                .collect();
            i += out * ap;
        }
        unreachable!()
    }

    /// Forward pass from raw parameters.
    pub fn forward<S: Scalar>(&self, raw: &[S], x: &[S]) -> Result<S> {
        if x.len() != self.dims[0] {
            return Err(Error::DimensionMismatch {
                expected: self.dims[0],
                got: x.len(),
            });
        }
        let eff = self.effective(raw);
        Ok(self.forward_eff(&eff, x))
    }

    pub fn forward_f64(&self, x: &[f64]) -> Result<f64> {
        self.forward(&self.raw, x)
    }

    /// Effective-weight check: every reparameterized weight (and for the
    /// positive classes the last-layer bias) is nonnegative, and logistic
    /// amplitude/steepness are strictly positive. Structural, but asserted
    /// by tests after optimizer steps.
    pub fn constraints_hold(&self) -> bool {
        let eff = self.effective::<f64>(&self.raw);
        let mut i = 0;
        for l in 1..self.dims.len() {
            let (fan_in, out) = (self.dims[l - 1], self.dims[l]);
            if eff[i..i + out * fan_in].iter().any(|w| *w < 0.0) {
                return false;
            }
            i += out * fan_in;
            let last = l == self.dims.len() - 1;
            if last && self.class.is_positive() && eff[i..i + out].iter().any(|b| *b < 0.0) {
                return false;
            }
            i += out;
            if !last {
                for _ in 0..out {
                    if !self.class.is_convex() && (eff[i] <= 0.0 || eff[i + 1] <= 0.0) {
                        return false;
                    }
                    i += self.class.act_params();
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad, Dual};

    #[test]
    fn act_c_examples() {
        assert!((act_c(0.0, 0.0) - 2f64.ln()).abs() < 1e-12);
        assert!(act_c(-40.0, 0.0) > 0.0 && act_c(-40.0, 0.0) < 1e-15);
        assert!((act_c(1.0, 1.0) - (1.0 + 2f64.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn act_c_is_convex_on_grid() {
        let h = 1e-3;
        for alpha in [-2.0, 0.0, 1.5] {
            let mut x = -10.0;
            while x <= 10.0 {
                let d2 = (act_c(x + h, alpha) - 2.0 * act_c(x, alpha) + act_c(x - h, alpha))
                    / (h * h);
                assert!(d2 >= -1e-12, "x={x} alpha={alpha} d2={d2}");
                x += 0.25;
            }
        }
    }

    #[test]
    fn act_m_examples() {
        assert!((act_m(0.7, 3.0, 2.0, 0.7) - 1.5).abs() < 1e-12); // midpoint
        assert!((act_m(1e3, 3.0, 2.0, 0.0) - 3.0).abs() < 1e-9); // supremum
        assert!((act_m(0.0, 2.0, 1.0, 0.0) - 1.0).abs() < 1e-12);
        // bounded and increasing
        let mut prev = act_m(-60.0, 1.7, 0.8, 0.3);
        let mut x = -60.0;
        while x < 60.0 {
            let v = act_m(x, 1.7, 0.8, 0.3);
            assert!(v > 0.0 && v < 1.7 + 1e-12 && v >= prev - 1e-15);
            prev = v;
            x += 0.5;
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let dims = [2, 20, 20, 1];
        let a = ConstrainedNet::init(7, ConstraintClass::PositiveConvexMonotone, &dims, 0.3);
        let b = ConstrainedNet::init(7, ConstraintClass::PositiveConvexMonotone, &dims, 0.3);
        assert_eq!(a.raw, b.raw);
        let mut seen = Vec::new();
        for s in 0..10 {
            let n = ConstrainedNet::init(s, ConstraintClass::PositiveConvexMonotone, &dims, 0.3);
            assert!(!seen.contains(&n.raw));
            seen.push(n.raw);
        }
        let y = a.forward_f64(&[0.0, 0.0]).unwrap();
        assert!(y.is_finite() && y > 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let n = ConstrainedNet::init(0, ConstraintClass::ConvexMonotone, &[2, 4, 1], 0.3);
        assert!(matches!(
            n.forward_f64(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn sample_points(seed: u64, n: usize, dim: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(lo..hi)).collect())
            .collect()
    }

    #[test]
    fn positive_class_outputs_are_nonnegative() {
        let net = ConstrainedNet::init(3, ConstraintClass::PositiveMonotone, &[1, 20, 20, 1], 0.3);
        for x in sample_points(11, 500, 1, -5.0, 5.0) {
            assert!(net.forward_f64(&x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn monotonicity_sampled() {
        for class in [
            ConstraintClass::ConvexMonotone,
            ConstraintClass::PositiveConvexMonotone,
            ConstraintClass::PositiveMonotone,
        ] {
            let net = ConstrainedNet::init(5, class, &[2, 8, 8, 1], 0.4);
            for pair in sample_points(13, 500, 4, 0.0, 4.0) {
                let lo = [pair[0].min(pair[2]), pair[1].min(pair[3])];
                let hi = [pair[0].max(pair[2]), pair[1].max(pair[3])];
                let flo = net.forward_f64(&lo).unwrap();
                let fhi = net.forward_f64(&hi).unwrap();
                assert!(flo <= fhi + 1e-12, "{class:?}: f({lo:?})={flo} > f({hi:?})={fhi}");
            }
        }
    }

    #[test]
    fn midpoint_convexity_sampled() {
        let net = ConstrainedNet::init(9, ConstraintClass::PositiveConvexMonotone, &[2, 8, 8, 1], 0.4);
        for pair in sample_points(17, 10_000, 4, 0.0, 5.0) {
            let a = [pair[0], pair[1]];
            let b = [pair[2], pair[3]];
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let fm = net.forward_f64(&mid).unwrap();
            let avg = (net.forward_f64(&a).unwrap() + net.forward_f64(&b).unwrap()) / 2.0;
            assert!(fm <= avg + 1e-10);
        }
    }

    #[test]
    fn forward_differentiates_through_raw_params() {
        let net = ConstrainedNet::init(1, ConstraintClass::PositiveMonotone, &[1, 4, 1], 0.3);
        let x = [0.7];
        let g = grad(
            |raw: &[Dual<f64, { crate::diff::MAX_DIRS }>]| {
                net.forward(raw, &[Dual::from_f64(x[0])]).unwrap()
            },
            &net.raw,
        );
        // finite differences on a few parameters
        for i in [0, 3, net.raw.len() - 1] {
            let h = 1e-6;
            let mut up = net.clone();
            up.raw[i] += h;
            let mut dn = net.clone();
            dn.raw[i] -= h;
            let fd = (up.forward_f64(&x).unwrap() - dn.forward_f64(&x).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "param {i}");
        }
    }
}
