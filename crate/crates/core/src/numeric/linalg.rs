//! Small dense linear algebra: LU factorization with partial pivoting.
//!
//! Sized for the basis matrices of the LP solver (≤ ~64×64) and the
//! transition matrices of the tabular reductions (≤ ~10×10).

use crate::{Error, Result};

/// LU factorization of a square matrix, stored packed with a pivot vector.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    /// Row-major packed LU factors.
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    /// Factor `a` (row-major, n×n). Fails on numerical singularity.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        for col in 0..n {
            // Partial pivot.
            let mut p = col;
            let mut best = lu[col * n + col].abs();
            for r in col + 1..n {
                let v = lu[r * n + col].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-13 {
                return Err(Error::numerical(format!(
                    "singular matrix in LU factorization at column {col} (pivot {best:.3e})"
                )));
            }
            if p != col {
                for k in 0..n {
                    lu.swap(col * n + k, p * n + k);
                }
                piv.swap(col, p);
            }
            let d = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / d;
                lu[r * n + col] = f;
                for k in col + 1..n {
                    lu[r * n + k] -= f * lu[col * n + k];
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        // Forward substitution (unit lower).
        for r in 1..n {
            let mut s = x[r];
            for k in 0..r {
                s -= self.lu[r * n + k] * x[k];
            }
            x[r] = s;
        }
        // Back substitution.
        for r in (0..n).rev() {
            let mut s = x[r];
            for k in r + 1..n {
                s -= self.lu[r * n + k] * x[k];
            }
            x[r] = s / self.lu[r * n + r];
        }
        x
    }

    /// Solve `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // Aᵀ = Uᵀ Lᵀ Pᵀ... solve Uᵀ y = b, then Lᵀ z = y, then undo pivots.
        for r in 0..n {
            let mut s = x[r];
            for k in 0..r {
                s -= self.lu[k * n + r] * x[k];
            }
            x[r] = s / self.lu[r * n + r];
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for k in r + 1..n {
                s -= self.lu[k * n + r] * x[k];
            }
            x[r] = s;
        }
        let mut out = vec![0.0; n];
        for (i, &p) in self.piv.iter().enumerate() {
            out[p] = x[i];
        }
        out
    }
}

/// Solve `A x = b` with one step of iterative refinement.
pub fn solve_refined(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    let lu = Lu::factor(a, n)?;
    let mut x = lu.solve(b);
    // One refinement pass tightens the residual to ~machine precision.
    let mut r = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..n {
            s -= a[i * n + j] * x[j];
        }
        r[i] = s;
    }
    let dx = lu.solve(&r);
    for i in 0..n {
        x[i] += dx[i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solves_known_system() {
        let a = [2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let b = [8.0, -11.0, -3.0];
        let x = solve_refined(&a, 3, &b).unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn transpose_solve_consistent() {
        let a = [4.0, 1.0, 2.0, 0.5, 3.0, -1.0, 2.0, -2.0, 5.0];
        let lu = Lu::factor(&a, 3).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve_transpose(&b);
        // Check Aᵀ x = b.
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| a[j * 3 + i] * x[j]).sum();
            assert_abs_diff_eq!(s, b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_singular() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(Lu::factor(&a, 2).is_err());
    }
}
