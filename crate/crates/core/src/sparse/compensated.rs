//! Products carried in double-double arithmetic, for residuals that must be
//! more accurate than the operator's conditioning allows in plain doubles.

use nalgebra::DMatrix;

use super::SparseMatrix;

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Vector of unevaluated sums `hi + lo`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DdVec {
    pub hi: Vec<f64>,
    pub lo: Vec<f64>,
}

impl DdVec {
    pub fn from_f64(v: &[f64]) -> Self {
        Self {
            hi: v.to_vec(),
            lo: vec![0.0; v.len()],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            hi: vec![0.0; n],
            lo: vec![0.0; n],
        }
    }

    /// Rounded to doubles.
    pub fn to_f64(&self) -> Vec<f64> {
        self.hi.iter().zip(&self.lo).map(|(h, l)| h + l).collect()
    }

    /// `c · self`.
    pub fn scale(&self, c: f64) -> DdVec {
        let mut out = DdVec::zeros(self.hi.len());
        for i in 0..self.hi.len() {
            let (p, e) = two_prod(self.hi[i], c);
            (out.hi[i], out.lo[i]) = two_sum(p, e + self.lo[i] * c);
        }
        out
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &DdVec) {
        for i in 0..self.hi.len() {
            let (s, e) = two_sum(self.hi[i], other.hi[i]);
            let (h, l) = two_sum(s, e + self.lo[i] + other.lo[i]);
            self.hi[i] = h;
            self.lo[i] = l;
        }
    }
}

/// Compensated dot product of `a` with a double-double vector.
struct Acc {
    s: f64,
    c: f64,
}

impl Acc {
    fn new() -> Self {
        Self { s: 0.0, c: 0.0 }
    }

    #[inline]
    fn add(&mut self, a: f64, xh: f64, xl: f64) {
        let (p, e) = two_prod(a, xh);
        let (s, e2) = two_sum(self.s, p);
        self.s = s;
        self.c += e + e2 + a * xl;
    }

    fn finish(self) -> (f64, f64) {
        two_sum(self.s, self.c)
    }
}

/// `A x`.
pub(crate) fn mul_vec_dd(a: &SparseMatrix, x: &DdVec) -> DdVec {
    let mut out = DdVec::zeros(a.rows());
    for i in 0..a.rows() {
        let (c, v) = a.row(i);
        let mut acc = Acc::new();
        for (&j, &aij) in c.iter().zip(v) {
            acc.add(aij, x.hi[j], x.lo[j]);
        }
        (out.hi[i], out.lo[i]) = acc.finish();
    }
    out
}

/// `D x` for a dense matrix.
pub(crate) fn dense_mul_dd(d: &DMatrix<f64>, x: &DdVec) -> DdVec {
    let mut out = DdVec::zeros(d.nrows());
    for i in 0..d.nrows() {
        let mut acc = Acc::new();
        for j in 0..d.ncols() {
            acc.add(d[(i, j)], x.hi[j], x.lo[j]);
        }
        (out.hi[i], out.lo[i]) = acc.finish();
    }
    out
}
