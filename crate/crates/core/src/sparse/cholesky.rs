use nalgebra::DMatrix;

use super::{minimum_degree, SparseMatrix};
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Sparse `P A Pᵀ = L Lᵀ` with a minimum-degree permutation.
///
/// `L` is kept in compressed-column form with the diagonal entry first in
/// each column.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    n: usize,
    /// `perm[k]` = original index of pivot k.
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::DimensionMismatch {
                context: "cholesky (square)",
                expected: a.rows(),
                found: a.cols(),
            });
        }
        let asym = a.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let perm = minimum_degree(a);
        Self::with_ordering(a, perm)
    }

    fn with_ordering(a: &SparseMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.rows();
        let mut pinv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        // Upper triangle of C = P A Pᵀ stored by column: column j holds rows i <= j.
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            let (c, v) = a.row(i);
            for (&j, &x) in c.iter().zip(v) {
                let (pi, pj) = (pinv[i], pinv[j]);
                if pi <= pj {
                    cols[pj].push((pi, x));
                }
            }
        }
        for c in cols.iter_mut() {
            c.sort_unstable_by_key(|e| e.0);
        }

        // Elimination tree (Liu's algorithm with path compression).
        let mut parent = vec![usize::MAX; n];
        let mut ancestor = vec![usize::MAX; n];
        for k in 0..n {
            for &(i, _) in &cols[k] {
                let mut i = i;
                while i != usize::MAX && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == usize::MAX {
                        parent[i] = k;
                        break;
                    }
                    i = next;
                }
            }
        }

        // Column counts of L via row-subtree traversal.
        let mut counts = vec![1usize; n];
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            flag[k] = k;
            for &(i, _) in &cols[k] {
                let mut i = i;
                while i < k && flag[i] != k {
                    counts[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            col_ptr[k + 1] = col_ptr[k] + counts[k];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut fill = col_ptr.clone();

        // Up-looking numeric factorization: row k of L from a sparse triangular solve.
        let mut x = vec![0.0; n];
        let mut stack: Vec<usize> = Vec::with_capacity(n);
        let mut path: Vec<usize> = Vec::with_capacity(n);
        for k in 0..n {
            stack.clear();
            flag[k] = usize::MAX - 1 - k;
            let mark = flag[k];
            let mut diag = 0.0;
            for &(i, v) in &cols[k] {
                if i == k {
                    diag += v;
                    continue;
                }
                x[i] += v;
                path.clear();
                let mut j = i;
                while flag[j] != mark {
                    path.push(j);
                    flag[j] = mark;
                    j = parent[j];
                }
                while let Some(p) = path.pop() {
                    stack.push(p);
                }
            }
            // `stack` holds segments in reverse topological order; process top to bottom.
            let mut d = diag;
            for &i in stack.iter().rev() {
                let lki = x[i] / values[col_ptr[i]];
                x[i] = 0.0;
                for p in col_ptr[i] + 1..fill[i] {
                    x[row_idx[p]] -= values[p] * lki;
                }
                d -= lki * lki;
                let p = fill[i];
                row_idx[p] = k;
                values[p] = lki;
                fill[i] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { step: k, pivot: d });
            }
            let p = fill[k];
            row_idx[p] = k;
            values[p] = d.sqrt();
            fill[k] += 1;
        }
        Ok(Self {
            n,
            perm,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// `log det A = 2 Σ log L_kk`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n).map(|k| self.values[self.col_ptr[k]].ln()).sum::<f64>()
    }

    /// `L y = b` in place (permuted coordinates).
    fn lsolve(&self, y: &mut [f64]) {
        for j in 0..self.n {
            let s = self.col_ptr[j];
            y[j] /= self.values[s];
            let yj = y[j];
            for p in s + 1..self.col_ptr[j + 1] {
                y[self.row_idx[p]] -= self.values[p] * yj;
            }
        }
    }

    /// `Lᵀ y = b` in place (permuted coordinates).
    fn ltsolve(&self, y: &mut [f64]) {
        for j in (0..self.n).rev() {
            let s = self.col_ptr[j];
            let mut acc = y[j];
            for p in s + 1..self.col_ptr[j + 1] {
                acc -= self.values[p] * y[self.row_idx[p]];
            }
            y[j] = acc / self.values[s];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "cholesky solve",
                expected: self.n,
                found: b.len(),
            });
        }
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.lsolve(&mut y);
        self.ltsolve(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        Ok(x)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_dense(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.n {
            return Err(Error::DimensionMismatch {
                context: "cholesky solve",
                expected: self.n,
                found: b.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.n, b.ncols());
        for k in 0..b.ncols() {
            let x = self.solve(b.column(k).as_slice())?;
            out.column_mut(k).copy_from_slice(&x);
        }
        Ok(out)
    }

    /// `x = Pᵀ L⁻ᵀ z`; for `z ~ N(0, I)` this gives `x ~ N(0, A⁻¹)`.
    pub fn apply_inv_lt(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        self.ltsolve(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Dense inverse, for small problems and oracles.
    pub fn inverse_dense(&self) -> DMatrix<f64> {
        self.solve_dense(&DMatrix::identity(self.n, self.n)).expect("square")
    }
}
