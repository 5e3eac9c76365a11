//! Small dense linear solves for the Newton systems (at most a few dozen
//! unknowns). LU with partial pivoting; a transposed solve serves the
//! adjoint pass with the same factorization.

/// LU factorization in place, partial pivoting. Returns the pivot vector, or
/// `None` if a pivot falls below `tiny`.
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &[f64], n: usize) -> Option<Lu> {
        debug_assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut p = col;
            let mut best = lu[col * n + col].abs();
            for r in (col + 1)..n {
                let v = lu[r * n + col].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-300 || !best.is_finite() {
                return None;
            }
            if p != col {
                for c in 0..n {
                    lu.swap(col * n + c, p * n + c);
                }
                piv.swap(col, p);
            }
            let d = lu[col * n + col];
            for r in (col + 1)..n {
                let f = lu[r * n + col] / d;
                lu[r * n + col] = f;
                for c in (col + 1)..n {
                    lu[r * n + c] -= f * lu[col * n + c];
                }
            }
        }
        Some(Lu { n, lu, piv })
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for r in 1..n {
            for c in 0..r {
                x[r] -= self.lu[r * n + c] * x[c];
            }
        }
        for r in (0..n).rev() {
            for c in (r + 1)..n {
                x[r] -= self.lu[r * n + c] * x[c];
            }
            x[r] /= self.lu[r * n + r];
        }
        x
    }

    /// Solve A^T x = b (for adjoint systems).
    pub fn solve_transposed(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // A = P^T L U  =>  A^T = U^T L^T P
        let mut x = b.to_vec();
        for r in 0..n {
            for c in 0..r {
                x[r] -= self.lu[c * n + r] * x[c];
            }
            x[r] /= self.lu[r * n + r];
        }
        for r in (0..n).rev() {
            for c in (r + 1)..n {
                x[r] -= self.lu[c * n + r] * x[c];
            }
        }
        let mut out = vec![0.0; n];
        for (i, &p) in self.piv.iter().enumerate() {
            out[p] = x[i];
        }
        out
    }
}
