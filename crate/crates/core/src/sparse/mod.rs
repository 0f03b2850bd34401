//! Compressed sparse row matrices and a sparse Cholesky factorization.
//!
//! Everything here is plain `f64` arithmetic on canonical CSR storage: column
//! indices are strictly increasing within a row and never duplicated. Matrices
//! are immutable once built; all operations return new matrices.

mod cholesky;
pub(crate) mod compensated;
mod market;
mod ordering;

pub use cholesky::CholeskyFactor;
pub use market::{read_matrix_market, write_matrix_market};
pub use ordering::minimum_degree;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` entries, summing duplicates.
    pub fn from_triplets(entries: &[(usize, usize, f64)], shape: (usize, usize)) -> Result<Self> {
        let (rows, cols) = shape;
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in entries {
            if r >= rows || c >= cols {
                return Err(Error::IndexOutOfRange {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cidx = vec![0usize; entries.len()];
        let mut vals = vec![0.0; entries.len()];
        for &(r, c, v) in entries {
            let p = next[r];
            cidx[p] = c;
            vals[p] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..rows {
            order.clear();
            order.extend(counts[r]..counts[r + 1]);
            order.sort_by_key(|&p| cidx[p]);
            let mut last = usize::MAX;
            for &p in &order {
                if cidx[p] == last {
                    *values.last_mut().unwrap() += vals[p];
                } else {
                    col_idx.push(cidx[p]);
                    values.push(vals[p]);
                    last = cidx[p];
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Wraps raw CSR arrays. The caller guarantees canonical storage.
    pub(crate) fn from_csr_unchecked(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_ptr.len(), rows + 1);
        debug_assert_eq!(col_idx.len(), values.len());
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_csr_unchecked(rows, cols, vec![0; rows + 1], Vec::new(), Vec::new())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_csr_unchecked(n, n, (0..=n).collect(), (0..n).collect(), diag.to_vec())
    }

    /// Converts a dense matrix, dropping exact zeros.
    pub fn from_dense(d: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                if d[(i, j)] != 0.0 {
                    trip.push((i, j, d[(i, j)]));
                }
            }
        }
        Self::from_triplets(&trip, (d.nrows(), d.ncols())).expect("indices in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(p) => v[p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            out.extend(c.iter().zip(v).map(|(&j, &x)| (i, j, x)));
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|i| self.row(i).0.iter().all(|&j| j == i))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                d[(i, j)] += x;
            }
        }
        d
    }

    /// `y = A v`.
    pub fn spmv(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "spmv",
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok(self.mul_vec(v))
    }

    pub(crate) fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let (c, x) = self.row(i);
                c.iter().zip(x).map(|(&j, &a)| a * v[j]).sum()
            })
            .collect()
    }

    /// `y = Aᵀ v`.
    pub fn spmv_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "spmv_transpose",
                expected: self.rows,
                found: v.len(),
            });
        }
        Ok(self.mul_vec_transpose(v))
    }

    pub(crate) fn mul_vec_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let (c, x) = self.row(i);
            for (&j, &a) in c.iter().zip(x) {
                out[j] += a * v[i];
            }
        }
        out
    }

    /// Applies the matrix to every column of a dense block.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "mul_dense",
                expected: self.cols,
                found: b.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.rows, b.ncols());
        for k in 0..b.ncols() {
            let y = self.mul_vec(b.column(k).as_slice());
            out.column_mut(k).copy_from_slice(&y);
        }
        Ok(out)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                let p = next[j];
                col_idx[p] = i;
                values[p] = x;
                next[j] += 1;
            }
        }
        SparseMatrix::from_csr_unchecked(self.cols, self.rows, counts, col_idx, values)
    }

    /// Sparse product `A B` (Gustavson's row-by-row algorithm).
    pub fn spgemm(&self, b: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != b.rows {
            return Err(Error::DimensionMismatch {
                context: "spgemm",
                expected: self.cols,
                found: b.rows,
            });
        }
        let n = b.cols;
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut pattern: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.rows {
            pattern.clear();
            let (ac, av) = self.row(i);
            for (&k, &a) in ac.iter().zip(av) {
                let (bc, bv) = b.row(k);
                for (&j, &x) in bc.iter().zip(bv) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a * x;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix::from_csr_unchecked(
            self.rows, b.cols, row_ptr, col_idx, values,
        ))
    }

    /// `alpha A + beta B` with the union sparsity pattern.
    pub fn add_scaled(&self, alpha: f64, b: &SparseMatrix, beta: f64) -> Result<SparseMatrix> {
        if self.shape() != b.shape() {
            return Err(Error::DimensionMismatch {
                context: "add",
                expected: self.rows * self.cols,
                found: b.rows * b.cols,
            });
        }
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz() + b.nnz());
        let mut values = Vec::with_capacity(self.nnz() + b.nnz());
        row_ptr.push(0);
        for i in 0..self.rows {
            let (ac, av) = self.row(i);
            let (bc, bv) = b.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ac.len() || q < bc.len() {
                let ja = ac.get(p).copied().unwrap_or(usize::MAX);
                let jb = bc.get(q).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    col_idx.push(ja);
                    values.push(alpha * av[p] + beta * bv[q]);
                    p += 1;
                    q += 1;
                } else if ja < jb {
                    col_idx.push(ja);
                    values.push(alpha * av[p]);
                    p += 1;
                } else {
                    col_idx.push(jb);
                    values.push(beta * bv[q]);
                    q += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix::from_csr_unchecked(
            self.rows, self.cols, row_ptr, col_idx, values,
        ))
    }

    pub fn add(&self, b: &SparseMatrix) -> Result<SparseMatrix> {
        self.add_scaled(1.0, b, 1.0)
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `diag(d) A`.
    pub fn scale_rows(&self, d: &[f64]) -> SparseMatrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[p] *= d[i];
            }
        }
        out
    }

    /// `A diag(d)`.
    pub fn scale_cols(&self, d: &[f64]) -> SparseMatrix {
        let mut out = self.clone();
        for (v, &j) in out.values.iter_mut().zip(&self.col_idx) {
            *v *= d[j];
        }
        out
    }

    /// `‖A − Aᵀ‖_max / ‖A‖_max`, zero for the zero matrix.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let diff = self.add_scaled(1.0, &t, -1.0).expect("square");
        let scale = self.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            diff.max_abs() / scale
        }
    }

    /// `(A + Aᵀ)/2`.
    pub fn symmetrize(&self) -> SparseMatrix {
        self.add_scaled(0.5, &self.transpose(), 0.5)
            .expect("symmetrize needs a square matrix")
    }

    /// Removes stored entries with `|a| <= tol`.
    pub fn prune(&self, tol: f64) -> SparseMatrix {
        let trip: Vec<_> = self.triplets().into_iter().filter(|t| t.2.abs() > tol).collect();
        SparseMatrix::from_triplets(&trip, self.shape()).expect("same shape")
    }

    /// Keeps the rows and columns listed in `keep` (in that order).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.cols];
        for (k, &j) in cols.iter().enumerate() {
            col_map[j] = k;
        }
        let mut trip = Vec::new();
        for (r, &i) in rows.iter().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                if col_map[j] != usize::MAX {
                    trip.push((r, col_map[j], x));
                }
            }
        }
        SparseMatrix::from_triplets(&trip, (rows.len(), cols.len())).expect("in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, m: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseMatrix {
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if rng.random::<f64>() < density {
                    trip.push((i, j, rng.random_range(-1.0..1.0)));
                }
            }
        }
        SparseMatrix::from_triplets(&trip, (n, m)).unwrap()
    }

    #[test]
    fn triplets_identity() {
        let a = SparseMatrix::from_triplets(&[(0, 0, 1.0), (1, 1, 1.0)], (2, 2)).unwrap();
        assert_eq!(a, SparseMatrix::identity(2));
    }

    #[test]
    fn triplets_duplicates_are_summed() {
        let a = SparseMatrix::from_triplets(&[(0, 1, 2.0), (0, 1, 3.0)], (1, 2)).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 1), 5.0);
    }

    #[test]
    fn triplets_out_of_range() {
        let e = SparseMatrix::from_triplets(&[(2, 0, 1.0)], (2, 2)).unwrap_err();
        assert!(matches!(e, Error::IndexOutOfRange { row: 2, .. }));
    }

    #[test]
    fn triplets_match_dense_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut trip = Vec::new();
        let mut dense = vec![[0.0f64; 10]; 10];
        for _ in 0..60 {
            let (i, j) = (rng.random_range(0..10), rng.random_range(0..10));
            let v: f64 = rng.random_range(-2.0..2.0);
            trip.push((i, j, v));
            dense[i][j] += v;
        }
        let a = SparseMatrix::from_triplets(&trip, (10, 10)).unwrap();
        for i in 0..10 {
            let (c, _) = a.row(i);
            assert!(c.windows(2).all(|w| w[0] < w[1]));
            for j in 0..10 {
                assert!((a.get(i, j) - dense[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn spmv_identity_and_zero() {
        let v = vec![1.0, -2.0, 3.5];
        assert_eq!(SparseMatrix::identity(3).spmv(&v).unwrap(), v);
        assert_eq!(SparseMatrix::zeros(3, 3).spmv(&v).unwrap(), vec![0.0; 3]);
        assert!(SparseMatrix::identity(2).spmv(&v).is_err());
    }

    #[test]
    fn spmv_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sparse(20, 20, 0.2, &mut rng);
        let v: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = a.spmv(&v).unwrap();
        let yd = a.to_dense() * nalgebra::DVector::from_vec(v);
        let err: f64 = y.iter().zip(yd.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        assert!(err.sqrt() <= 1e-14 * yd.norm());
    }

    #[test]
    fn spgemm_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_sparse(6, 6, 0.4, &mut rng);
        assert_eq!(a.spgemm(&SparseMatrix::identity(6)).unwrap(), a);
        let perm = [3usize, 0, 4, 1, 5, 2];
        let p = SparseMatrix::from_triplets(
            &perm.iter().enumerate().map(|(i, &j)| (i, j, 1.0)).collect::<Vec<_>>(),
            (6, 6),
        )
        .unwrap();
        assert_eq!(p.spgemm(&p.transpose()).unwrap(), SparseMatrix::identity(6));
        assert!(a.spgemm(&SparseMatrix::identity(5)).is_err());
    }

    #[test]
    fn spgemm_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_sparse(15, 15, 0.2, &mut rng);
        let b = random_sparse(15, 15, 0.2, &mut rng);
        let c = a.spgemm(&b).unwrap().to_dense();
        let cd = a.to_dense() * b.to_dense();
        assert!((c - cd).amax() < 1e-14);
    }

    #[test]
    fn add_and_symmetrize() {
        let a = SparseMatrix::from_triplets(&[(0, 1, 2.0), (1, 0, 1.0)], (2, 2)).unwrap();
        let s = a.symmetrize();
        assert_eq!(s.get(0, 1), 1.5);
        assert_eq!(s.get(1, 0), 1.5);
        assert!(a.asymmetry() > 0.1);
        assert_eq!(s.asymmetry(), 0.0);
    }

    #[test]
    fn submatrix_picks_rows_and_cols() {
        let d = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let a = SparseMatrix::from_dense(&d);
        let s = a.submatrix(&[1, 3], &[0, 2]).to_dense();
        assert_eq!(s[(0, 0)], 4.0);
        assert_eq!(s[(1, 1)], 14.0);
    }

    proptest::proptest! {
        #[test]
        fn spgemm_is_associative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sparse(8, 9, 0.3, &mut rng);
            let b = random_sparse(9, 7, 0.3, &mut rng);
            let c = random_sparse(7, 8, 0.3, &mut rng);
            let left = a.spgemm(&b).unwrap().spgemm(&c).unwrap().to_dense();
            let right = a.spgemm(&b.spgemm(&c).unwrap()).unwrap().to_dense();
            for (x, y) in left.iter().zip(right.iter()) {
                let scale = x.abs().max(y.abs()).max(1.0);
                proptest::prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }
}
