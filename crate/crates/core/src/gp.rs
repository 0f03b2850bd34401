//! Gaussian-process regression with repeated readings.
//!
//! The sparse route conditions the auxiliary vector `t` with `s = F_r t`,
//! whose prior precision `Q_t` is sparse. Readings `y_1..y_{n_o}` share one
//! field realization and carry independent noise. The dense route is the
//! textbook conditioning of the stacked observation vector and serves as the
//! oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{observation_matrix, Mesh};
use crate::parallel::map_indexed;
use crate::rational::OperatorFactors;
use crate::sparse::compensated::{mul_vec_dd, DdVec};
use crate::sparse::{CholeskyFactor, SparseMatrix};
use crate::spde::GaussianField;

/// Smallest accepted noise standard deviation.
pub const MIN_SIGMA_E: f64 = 1e-12;
/// Largest `n_u` accepted by the dense oracle.
pub const DENSE_LIMIT: usize = 500;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observation points, their observation matrix `P`, readings
/// `Y (n_y × n_o)` and the noise level.
#[derive(Clone, Debug)]
pub struct ObservationSet {
    points: Vec<Vec<f64>>,
    p: SparseMatrix,
    y: DMatrix<f64>,
    sigma_e: f64,
}

impl ObservationSet {
    pub fn new(mesh: &Mesh, points: Vec<Vec<f64>>, y: DMatrix<f64>, sigma_e: f64) -> Result<Self> {
        let p = observation_matrix(mesh, &points)?;
        let mut s = Self::from_matrix(p, y, sigma_e)?;
        s.points = points;
        Ok(s)
    }

    /// From an explicit observation matrix, whose rows must sum to one.
    pub fn from_matrix(p: SparseMatrix, y: DMatrix<f64>, sigma_e: f64) -> Result<Self> {
        check_sigma_e(sigma_e)?;
        if y.nrows() != p.rows() {
            return Err(Error::DimensionMismatch {
                context: "observation readings",
                expected: p.rows(),
                found: y.nrows(),
            });
        }
        if y.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "at least one reading per point is needed".into(),
            ));
        }
        for i in 0..p.rows() {
            let s: f64 = p.row(i).1.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "row {i} of the observation matrix sums to {s}"
                )));
            }
        }
        Ok(Self {
            points: Vec::new(),
            p,
            y,
            sigma_e,
        })
    }

    pub fn n_y(&self) -> usize {
        self.p.rows()
    }

    pub fn n_o(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_u(&self) -> usize {
        self.p.cols()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn p(&self) -> &SparseMatrix {
        &self.p
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn sigma_e(&self) -> f64 {
        self.sigma_e
    }

    pub fn with_sigma_e(mut self, sigma_e: f64) -> Result<Self> {
        check_sigma_e(sigma_e)?;
        self.sigma_e = sigma_e;
        Ok(self)
    }

    /// Same points with different readings.
    pub fn with_readings(&self, y: DMatrix<f64>) -> Result<Self> {
        let mut s = Self::from_matrix(self.p.clone(), y, self.sigma_e)?;
        s.points = self.points.clone();
        Ok(s)
    }

    /// `Σ_i y_i`.
    pub fn readings_sum(&self) -> Vec<f64> {
        self.y.column_sum().as_slice().to_vec()
    }

    /// `[P; P; …]` and the readings stacked column after column.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (ny, no) = (self.n_y(), self.n_o());
        let pd = self.p.to_dense();
        let mut ps = DMatrix::zeros(ny * no, self.n_u());
        for k in 0..no {
            ps.view_mut((k * ny, 0), (ny, self.n_u())).copy_from(&pd);
        }
        (ps, DVector::from_column_slice(self.y.as_slice()))
    }
}

fn check_sigma_e(sigma_e: f64) -> Result<()> {
    if !(sigma_e >= MIN_SIGMA_E) || !sigma_e.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise standard deviation must be at least {MIN_SIGMA_E}, got {sigma_e}"
        )));
    }
    Ok(())
}

/// Dense posterior mean and covariance.
#[derive(Clone, Debug)]
pub struct DensePosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

fn dense_guard(n: usize) -> Result<()> {
    if n > DENSE_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "dense oracle limited to {DENSE_LIMIT} unknowns, got {n}"
        )));
    }
    Ok(())
}

fn dense_chol(a: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = a.nrows();
    a.cholesky().ok_or(Error::NotPositiveDefinite { step: n, pivot: 0.0 })
}

/// Conditioning of `N(0, C_s)` on the stacked readings:
/// mean `C Pᵀ S⁻¹ y`, covariance `C − C Pᵀ S⁻¹ P C`, `S = P C Pᵀ + σ_e² I`.
pub fn gp_posterior_dense(c_s: &DMatrix<f64>, obs: &ObservationSet) -> Result<DensePosterior> {
    dense_guard(c_s.nrows())?;
    if c_s.nrows() != obs.n_u() {
        return Err(Error::DimensionMismatch {
            context: "gp_posterior_dense",
            expected: obs.n_u(),
            found: c_s.nrows(),
        });
    }
    if obs.n_y() == 0 {
        return Ok(DensePosterior {
            mean: DVector::zeros(c_s.nrows()),
            covariance: c_s.clone(),
        });
    }
    let (ps, ys) = obs.stacked();
    let cpt = c_s * ps.transpose();
    let s = &ps * &cpt + DMatrix::identity(ps.nrows(), ps.nrows()) * obs.sigma_e.powi(2);
    let ch = dense_chol(s)?;
    let mean = &cpt * ch.solve(&ys);
    let covariance = c_s - &cpt * ch.solve(&cpt.transpose());
    Ok(DensePosterior { mean, covariance })
}

/// `log N(y; 0, P C Pᵀ + σ_e² I)` of the stacked readings.
pub fn gp_log_marginal_dense(c_s: &DMatrix<f64>, obs: &ObservationSet) -> Result<f64> {
    dense_guard(c_s.nrows())?;
    let (ps, ys) = obs.stacked();
    let s = &ps * c_s * ps.transpose() + DMatrix::identity(ps.nrows(), ps.nrows()) * obs.sigma_e.powi(2);
    dense_log_density(s, &ys)
}

/// `log N(r; 0, S)` by dense Cholesky.
pub fn dense_log_density(s: DMatrix<f64>, r: &DVector<f64>) -> Result<f64> {
    let n = r.len() as f64;
    let ch = dense_chol(s)?;
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = r.dot(&ch.solve(r));
    Ok(-0.5 * (quad + logdet + n * LN_2PI))
}

/// `A = Q_t + w BᵀB` with `B = P F_r`, its explicit Cholesky factor, and the
/// factored form `Q_t = Rᵀ M⁻¹ R` used for refinement.
///
/// `Q_t` is ill-conditioned for fractional and large integer exponents, so
/// the explicit `A` loses digits in assembly alone. Solves start from its
/// factor and are refined with residuals taken in double-double through the
/// chain of `R`, whose single factors are well conditioned.
#[derive(Clone, Debug)]
struct UpdateOperator {
    b: SparseMatrix,
    bt: SparseMatrix,
    chain: Vec<SparseMatrix>,
    chain_t: Vec<SparseMatrix>,
    inv_m: SparseMatrix,
    w: f64,
    chol: CholeskyFactor,
}

impl UpdateOperator {
    fn new(field: &GaussianField, obs: &ObservationSet, n_o: usize) -> Result<Self> {
        if obs.n_u() != field.dim() {
            return Err(Error::DimensionMismatch {
                context: "observation matrix columns",
                expected: field.dim(),
                found: obs.n_u(),
            });
        }
        let b = match field.factors() {
            Some(_) => obs.p.spgemm(&field.fr_matrix()?)?,
            None => obs.p.clone(),
        };
        let bt = b.transpose();
        let w = n_o as f64 / obs.sigma_e.powi(2);
        let a = field.q_t().add_scaled(1.0, &bt.spgemm(&b)?, w)?.symmetrize();
        let chol = CholeskyFactor::new(&a)?;
        let chain = field.precision_chain()?;
        let chain_t = chain.iter().rev().map(|m| m.transpose()).collect();
        let inv_m: Vec<f64> = field.lumped_mass().iter().map(|m| 1.0 / m).collect();
        Ok(Self {
            b,
            bt,
            chain,
            chain_t,
            inv_m: SparseMatrix::from_diagonal(&inv_m),
            w,
            chol,
        })
    }

    /// `R x` in double-double.
    fn chain_apply(&self, x: &[f64]) -> DdVec {
        let mut y = DdVec::from_f64(x);
        for m in &self.chain {
            y = mul_vec_dd(m, &y);
        }
        y
    }

    /// `xᵀ Q_t x = ‖M^{-1/2} R x‖²`.
    fn q_t_quad(&self, x: &[f64]) -> f64 {
        let y = self.chain_apply(x).to_f64();
        y.iter().zip(self.inv_m.diagonal()).map(|(v, im)| v * v * im).sum()
    }

    /// `r − A x` with the products carried in double-double.
    fn residual(&self, r: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = mul_vec_dd(&self.inv_m, &self.chain_apply(x));
        for m in &self.chain_t {
            y = mul_vec_dd(m, &y);
        }
        let bx = mul_vec_dd(&self.b, &DdVec::from_f64(x));
        y.add_assign(&mul_vec_dd(&self.bt, &bx).scale(self.w));
        r.iter()
            .zip(y.hi.iter().zip(&y.lo))
            .map(|(r, (h, l))| (r - h) - l)
            .collect()
    }

    fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut x = self.chol.solve(r)?;
        let mut last = f64::INFINITY;
        for _ in 0..8 {
            let res = self.residual(r, &x);
            let rn = norm(&res);
            if !(rn < 0.5 * last) || rn <= 1e-17 * norm(r) {
                break;
            }
            last = rn;
            for (xi, d) in x.iter_mut().zip(self.chol.solve(&res)?) {
                *xi += d;
            }
        }
        Ok(x)
    }

    /// `t̄ = A⁻¹ σ_e⁻² Bᵀ Σ_k y_k` for the given reading sum.
    fn mean_t(&self, y_sum: &[f64], s2: f64) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self.bt.mul_vec(y_sum).iter().map(|v| v / s2).collect();
        self.solve(&rhs)
    }
}

/// Sparse posterior `s | Y = F_r t | Y`.
///
/// Stores the factor of `A = Q_t + n_o σ_e⁻² F_rᵀPᵀPF_r`, so that
/// `C_{s|Y} = F_r A⁻¹ F_rᵀ`; the σ_e² factor of the scaled form
/// `σ_e² (σ_e² Q_t + n_o F_rᵀPᵀPF_r)⁻¹` is carried implicitly.
#[derive(Clone, Debug)]
pub struct PosteriorField {
    mean: Vec<f64>,
    t_mean: Vec<f64>,
    op: UpdateOperator,
    factors: Option<OperatorFactors>,
    sigma_e: f64,
}

impl PosteriorField {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Posterior mean of the auxiliary vector `t`.
    pub fn t_mean(&self) -> &[f64] {
        &self.t_mean
    }

    /// Cholesky factor of the explicit `A`.
    pub fn precision_factor(&self) -> &CholeskyFactor {
        &self.op.chol
    }

    pub fn sigma_e(&self) -> f64 {
        self.sigma_e
    }

    fn fr(&self, v: &[f64]) -> Vec<f64> {
        match &self.factors {
            Some(f) => f.apply_right(v),
            None => v.to_vec(),
        }
    }

    fn fr_t(&self, v: &[f64]) -> Vec<f64> {
        match &self.factors {
            Some(f) => f.apply_right_t(v),
            None => v.to_vec(),
        }
    }

    /// Selected diagonal entries of `C_{s|Y}`.
    pub fn variances(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let n = self.mean.len();
        let out = map_indexed(indices.len(), |k| -> Result<f64> {
            let i = indices[k];
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    row: i,
                    col: i,
                    rows: n,
                    cols: n,
                });
            }
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let v = self.fr_t(&e);
            let w = self.op.solve(&v)?;
            Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().max(0.0))
        });
        out.into_iter().collect()
    }

    /// Column `j` of `C_{s|Y}`.
    pub fn covariance_column(&self, j: usize) -> Result<Vec<f64>> {
        let n = self.mean.len();
        if j >= n {
            return Err(Error::IndexOutOfRange {
                row: j,
                col: j,
                rows: n,
                cols: n,
            });
        }
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        Ok(self.fr(&self.op.solve(&self.fr_t(&e))?))
    }
}

pub fn gp_posterior_sparse(field: &GaussianField, obs: &ObservationSet) -> Result<PosteriorField> {
    let op = UpdateOperator::new(field, obs, obs.n_o())?;
    let t_mean = op.mean_t(&obs.readings_sum(), obs.sigma_e.powi(2))?;
    let mean = field.apply_fr(&t_mean);
    Ok(PosteriorField {
        mean,
        t_mean,
        op,
        factors: field.factors().cloned(),
        sigma_e: obs.sigma_e,
    })
}

/// Selected posterior variances.
pub fn gp_posterior_variance_at(post: &PosteriorField, indices: &[usize]) -> Result<Vec<f64>> {
    post.variances(indices)
}

/// Largest `n_y · n_u` for which the determinant is taken in data space.
const SYLVESTER_LIMIT: usize = 20_000_000;

/// `ln det(A) − ln det(Q_t) = ln det(I + w P C_s Pᵀ)`.
///
/// For moderate `n_y` the right side is formed from `n_y` covariance actions,
/// which never touch the explicit `Q_t`; its Cholesky factor is accurate where
/// the ratio of the two sparse determinants cancels. Larger problems fall
/// back to that ratio.
fn update_logdet(field: &GaussianField, obs: &ObservationSet, op: &UpdateOperator) -> Result<f64> {
    let ny = obs.n_y();
    if ny * field.dim() > SYLVESTER_LIMIT {
        return Ok(op.chol.logdet() - field.q_t_factor()?.logdet());
    }
    let pt = obs.p.transpose();
    let cols = map_indexed(ny, |j| -> Result<Vec<f64>> {
        let mut e = vec![0.0; ny];
        e[j] = 1.0;
        Ok(obs.p.mul_vec(&field.covariance_apply(&pt.mul_vec(&e))?))
    });
    let mut s = DMatrix::identity(ny, ny);
    for (j, col) in cols.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            s[(i, j)] += op.w * v;
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    let ch = s.cholesky().ok_or(Error::NotPositiveDefinite {
        step: 0,
        pivot: f64::NAN,
    })?;
    Ok(2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `-½ (σ_e⁻² Σ‖y_k − B t̄‖² + t̄ᵀ Q_t t̄ + logdet + n ln 2π)` for the readings
/// in `ys` sharing `t̄`.
fn gaussian_term(op: &UpdateOperator, ys: &[Vec<f64>], t: &[f64], s2: f64, logdet: f64) -> f64 {
    let bt = op.b.mul_vec(t);
    let resid: f64 = ys
        .iter()
        .map(|y| y.iter().zip(&bt).map(|(y, p)| (y - p).powi(2)).sum::<f64>())
        .sum();
    let quad = resid / s2 + op.q_t_quad(t);
    let n = (ys.len() * bt.len()) as f64;
    -0.5 * (quad + logdet + n * LN_2PI)
}

/// `log p(Y)` for readings sharing one realization of the field.
///
/// The quadratic form `yᵀ(B̃ Q_t⁻¹ B̃ᵀ + σ_e² I)⁻¹ y` is evaluated as
/// `σ_e⁻² Σ‖y_i − B t̄‖² + t̄ᵀ Q_t t̄` with the posterior mean `t̄`, which is
/// the same quantity without the cancellation of the two large terms of the
/// Woodbury expansion at small σ_e. The determinant is
/// `(σ_e²)^{n_o n_y} det A / det Q_t`.
pub fn gp_log_marginal(field: &GaussianField, obs: &ObservationSet) -> Result<f64> {
    let op = UpdateOperator::new(field, obs, obs.n_o())?;
    let s2 = obs.sigma_e.powi(2);
    let t = op.mean_t(&obs.readings_sum(), s2)?;
    let n = (obs.n_o() * obs.n_y()) as f64;
    let logdet = n * s2.ln() + update_logdet(field, obs, &op)?;
    let ys: Vec<Vec<f64>> = (0..obs.n_o())
        .map(|k| obs.y.column(k).iter().copied().collect())
        .collect();
    Ok(gaussian_term(&op, &ys, &t, s2, logdet))
}

/// `Σ_k log p(y_k)` treating every reading as an independent realization of
/// the field, each with its own noise.
pub fn gp_log_marginal_independent(field: &GaussianField, obs: &ObservationSet) -> Result<f64> {
    let op = UpdateOperator::new(field, obs, 1)?;
    let s2 = obs.sigma_e.powi(2);
    let logdet = obs.n_y() as f64 * s2.ln() + update_logdet(field, obs, &op)?;
    let mut total = 0.0;
    for k in 0..obs.n_o() {
        let y: Vec<f64> = obs.y.column(k).iter().copied().collect();
        let t = op.mean_t(&y, s2)?;
        total += gaussian_term(&op, &[y], &t, s2, logdet);
    }
    Ok(total)
}
