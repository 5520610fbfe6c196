//! Dense Householder QR for tall least-squares problems.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Thin QR factorisation of an `m × n` matrix (`m ≥ n`), stored column-major.
#[derive(Debug, Clone)]
pub struct Qr<S> {
    rows: usize,
    cols: usize,
    // Householder vectors below the diagonal, R on and above it.
    packed: Vec<S>,
    r_diag: Vec<S>,
}

impl<S: Scalar> Qr<S> {
    /// Factorises a column-major matrix. Fails if any column is numerically
    /// dependent on the previous ones.
    pub fn new(rows: usize, cols: usize, column_major: Vec<S>) -> Result<Self> {
        if rows < cols || cols == 0 {
            return Err(Error::SingularDesign(format!(
                "design has {rows} rows and {cols} columns"
            )));
        }
        assert_eq!(column_major.len(), rows * cols);
        let mut a = column_major;
        let mut r_diag = vec![S::zero(); cols];
        let mut col_norms = Vec::with_capacity(cols);
        for k in 0..cols {
            let col = &a[k * rows..(k + 1) * rows];
            col_norms.push(col.iter().map(|&v| v * v).sum::<S>().sqrt());
        }
        let scale = col_norms.iter().copied().fold(S::zero(), S::max);
        let tol = S::epsilon() * S::from_usize_lossy(rows) * scale;

        for k in 0..cols {
            let norm = a[k * rows + k..(k + 1) * rows]
                .iter()
                .map(|&v| v * v)
                .sum::<S>()
                .sqrt();
            if norm <= tol {
                return Err(Error::SingularDesign(format!(
                    "column {k} is rank deficient"
                )));
            }
            let alpha = if a[k * rows + k] > S::zero() {
                -norm
            } else {
                norm
            };
            // v = x - alpha e1, kept unnormalised
            a[k * rows + k] -= alpha;
            let vnorm2: S = a[k * rows + k..(k + 1) * rows].iter().map(|&v| v * v).sum();
            for c in k + 1..cols {
                let dot: S = (k..rows).map(|i| a[k * rows + i] * a[c * rows + i]).sum();
                let f = (dot + dot) / vnorm2;
                for i in k..rows {
                    let vi = a[k * rows + i];
                    a[c * rows + i] -= f * vi;
                }
            }
            r_diag[k] = alpha;
        }
        Ok(Self {
            rows,
            cols,
            packed: a,
            r_diag,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn apply_qt(&self, b: &mut [S]) {
        let m = self.rows;
        for k in 0..self.cols {
            let v = &self.packed[k * m..(k + 1) * m];
            let vnorm2: S = v[k..].iter().map(|&x| x * x).sum();
            let dot: S = (k..m).map(|i| v[i] * b[i]).sum();
            let f = (dot + dot) / vnorm2;
            for i in k..m {
                b[i] -= f * v[i];
            }
        }
    }

    fn apply_q(&self, b: &mut [S]) {
        let m = self.rows;
        for k in (0..self.cols).rev() {
            let v = &self.packed[k * m..(k + 1) * m];
            let vnorm2: S = v[k..].iter().map(|&x| x * x).sum();
            let dot: S = (k..m).map(|i| v[i] * b[i]).sum();
            let f = (dot + dot) / vnorm2;
            for i in k..m {
                b[i] -= f * v[i];
            }
        }
    }

    /// Least-squares solution of `A x ≈ b`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        assert_eq!(b.len(), self.rows);
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        self.back_substitute(&qtb)
    }

    /// Least-squares solution and residuals `b − A x`.
    pub fn solve_with_residuals(&self, b: &[S]) -> (Vec<S>, Vec<S>) {
        assert_eq!(b.len(), self.rows);
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let x = self.back_substitute(&qtb);
        // residuals = Q (0, (Qᵀb)[n..])
        qtb[..self.cols].iter_mut().for_each(|v| *v = S::zero());
        self.apply_q(&mut qtb);
        (x, qtb)
    }

    fn back_substitute(&self, qtb: &[S]) -> Vec<S> {
        let n = self.cols;
        let m = self.rows;
        let mut x = vec![S::zero(); n];
        for k in (0..n).rev() {
            let mut acc = qtb[k];
            for c in k + 1..n {
                acc -= self.packed[c * m + k] * x[c];
            }
            x[k] = acc / self.r_diag[k];
        }
        x
    }

    /// Diagonal of the hat matrix `H = Q Qᵀ` (the leverages).
    pub fn leverages(&self) -> Vec<S> {
        let m = self.rows;
        let mut lev = vec![S::zero(); m];
        let mut e = vec![S::zero(); m];
        for k in 0..self.cols {
            e.iter_mut().for_each(|v| *v = S::zero());
            e[k] = S::one();
            self.apply_q(&mut e);
            for (l, &q) in lev.iter_mut().zip(&e) {
                *l += q * q;
            }
        }
        lev
    }
}
