//! Statistical finite elements for the Poisson-Dirichlet problem.
//!
//! The forward model `−Δu = f̄ + s` with a Gaussian source `s` gives a
//! Gaussian prior for the nodal solution. Readings follow
//! `y_i = P(u + d) + e_i` with a mismatch field `d` and white noise `e_i`;
//! `u` and `d` are shared by all readings.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gp::ObservationSet;
use crate::mesh::{assemble_mass, assemble_stiffness, Constant, Mesh};
use crate::parallel::map_indexed;
use crate::sparse::compensated::{dense_mul_dd, mul_vec_dd, DdVec};
use crate::sparse::{CholeskyFactor, SparseMatrix};
use crate::spde::{build_field, GaussianField, MaternParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

type NodeFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Value prescribed on a labeled boundary.
#[derive(Clone)]
pub enum BoundaryValue {
    Constant(f64),
    Function(NodeFn),
}

impl BoundaryValue {
    fn at(&self, x: &[f64]) -> f64 {
        match self {
            BoundaryValue::Constant(v) => *v,
            BoundaryValue::Function(f) => f(x),
        }
    }
}

impl fmt::Debug for BoundaryValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryValue::Constant(v) => write!(f, "Constant({v})"),
            BoundaryValue::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Dirichlet condition on a boundary label. A random condition sets the
/// prior mean on the label but leaves its nodes unknown in the precision.
#[derive(Clone, Debug)]
pub struct DirichletCondition {
    pub label: String,
    pub value: BoundaryValue,
    pub random: bool,
}

impl DirichletCondition {
    pub fn fixed(label: &str, value: f64) -> Self {
        Self {
            label: label.into(),
            value: BoundaryValue::Constant(value),
            random: false,
        }
    }

    pub fn random(label: &str, value: f64) -> Self {
        Self {
            random: true,
            ..Self::fixed(label, value)
        }
    }

    pub fn with_fn(label: &str, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, random: bool) -> Self {
        Self {
            label: label.into(),
            value: BoundaryValue::Function(Arc::new(f)),
            random,
        }
    }
}

/// Discrete Poisson problem `A u = M f̄` with its boundary partition.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    n: usize,
    mass: Vec<f64>,
    fbar: Vec<f64>,
    /// Nodes with a deterministic value.
    fixed: Vec<usize>,
    /// Unknowns of the prior: interior and random-boundary nodes.
    free: Vec<usize>,
    random: Vec<usize>,
    /// Boundary values at fixed and random nodes, zero elsewhere.
    g: Vec<f64>,
    a_ff: SparseMatrix,
    a_ff_chol: CholeskyFactor,
    /// Mean with every condition applied.
    mean: Vec<f64>,
}

fn position_map(n: usize, idx: &[usize]) -> Vec<Option<usize>> {
    let mut m = vec![None; n];
    for (k, &i) in idx.iter().enumerate() {
        m[i] = Some(k);
    }
    m
}

/// `A_{rows,cols} x` for a vector given on all nodes restricted to `cols`.
fn coupled_rhs(a: &SparseMatrix, rows: &[usize], g: &[f64], cols_mask: &[bool]) -> Vec<f64> {
    rows.iter()
        .map(|&i| {
            let (c, v) = a.row(i);
            c.iter()
                .zip(v)
                .filter(|(j, _)| cols_mask[**j])
                .map(|(j, a)| a * g[*j])
                .sum()
        })
        .collect()
}

/// Assembles the Laplacian and lumped mass, applies the Dirichlet conditions
/// and solves for the prior mean.
pub fn assemble_forward(mesh: &Mesh, dirichlet: &[DirichletCondition], fbar: Vec<f64>) -> Result<ForwardModel> {
    let n = mesh.n_nodes();
    if fbar.len() != n {
        return Err(Error::DimensionMismatch {
            context: "deterministic source",
            expected: n,
            found: fbar.len(),
        });
    }
    let mut fixed_mask = vec![false; n];
    let mut random_mask = vec![false; n];
    let mut g = vec![0.0; n];
    // Random conditions first so that fixed ones win on shared corners.
    let mut order: Vec<&DirichletCondition> = dirichlet.iter().filter(|c| c.random).collect();
    order.extend(dirichlet.iter().filter(|c| !c.random));
    for c in order {
        let nodes = mesh
            .boundary(&c.label)
            .ok_or_else(|| Error::InvalidParameter(format!("no boundary labeled '{}' on the mesh", c.label)))?;
        for &i in nodes {
            g[i] = c.value.at(mesh.node(i));
            if c.random {
                random_mask[i] = true;
            } else {
                fixed_mask[i] = true;
                random_mask[i] = false;
            }
        }
    }
    let fixed: Vec<usize> = (0..n).filter(|&i| fixed_mask[i]).collect();
    if fixed.is_empty() {
        return Err(Error::InvalidParameter(
            "no deterministic Dirichlet nodes: the Poisson system matrix is singular".into(),
        ));
    }
    let free: Vec<usize> = (0..n).filter(|&i| !fixed_mask[i]).collect();
    let random: Vec<usize> = (0..n).filter(|&i| random_mask[i]).collect();

    let a = assemble_stiffness(mesh, &Constant::laplacian())?;
    let mass = assemble_mass(mesh, true)?.diagonal();
    let a_ff = a.submatrix(&free, &free);
    let a_ff_chol = CholeskyFactor::new(&a_ff)?;

    // Mean: eliminate fixed and random nodes, substitute their values.
    let bc_mask: Vec<bool> = (0..n).map(|i| fixed_mask[i] || random_mask[i]).collect();
    let interior: Vec<usize> = (0..n).filter(|&i| !bc_mask[i]).collect();
    let coupling = coupled_rhs(&a, &interior, &g, &bc_mask);
    let rhs: Vec<f64> = interior
        .iter()
        .zip(&coupling)
        .map(|(&i, c)| mass[i] * fbar[i] - c)
        .collect();
    let u_int = if random.is_empty() {
        a_ff_chol.solve(&rhs)?
    } else {
        CholeskyFactor::new(&a.submatrix(&interior, &interior))?.solve(&rhs)?
    };
    let mut mean = g.clone();
    for (&i, v) in interior.iter().zip(u_int) {
        mean[i] = v;
    }
    Ok(ForwardModel {
        n,
        mass,
        fbar,
        fixed,
        free,
        random,
        g,
        a_ff,
        a_ff_chol,
        mean,
    })
}

impl ForwardModel {
    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn fixed_nodes(&self) -> &[usize] {
        &self.fixed
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn random_nodes(&self) -> &[usize] {
        &self.random
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.g
    }

    pub fn source(&self) -> &[f64] {
        &self.fbar
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.mass
    }

    /// `A` restricted to the unknowns.
    pub fn system_matrix(&self) -> &SparseMatrix {
        &self.a_ff
    }

    /// Deterministic solution on all nodes.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Solves `A_ff u_f = M_f s_f` for a source given on all nodes and
    /// returns `u_f` scattered into a zero vector on all nodes.
    pub fn solve_source(&self, s: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self.free.iter().map(|&i| self.mass[i] * s[i]).collect();
        let u = self.a_ff_chol.solve(&rhs)?;
        let mut out = vec![0.0; self.n];
        for (&i, v) in self.free.iter().zip(u) {
            out[i] = v;
        }
        Ok(out)
    }
}

/// Prior of the forward solution on the free nodes.
///
/// `Q_u = A_ff M_f⁻¹ Q̂ M_f⁻¹ A_ff`, where `Q̂` is the precision of the
/// source marginal on the free nodes.
#[derive(Clone, Debug)]
pub struct SolutionPrior {
    model: ForwardModel,
    source: GaussianField,
    /// `M_f⁻¹ A_ff`
    b: SparseMatrix,
    q_hat: SparseMatrix,
    q_u: SparseMatrix,
    logdet_q_u: f64,
}

/// `Q_ff − Q_fD Q_DD⁻¹ Q_Df`. Only free nodes coupled to `D` receive a
/// correction, which is formed densely on that set.
fn schur_marginal(q: &SparseMatrix, free: &[usize], fixed: &[usize]) -> Result<(SparseMatrix, f64)> {
    let q_ff = q.submatrix(free, free);
    let q_fd = q.submatrix(free, fixed);
    let q_dd = q.submatrix(fixed, fixed);
    let chol = CholeskyFactor::new(&q_dd)?;
    let coupled: Vec<usize> = (0..free.len()).filter(|&k| !q_fd.row(k).0.is_empty()).collect();
    let nd = fixed.len();
    let rows: Vec<Vec<f64>> = coupled
        .iter()
        .map(|&k| {
            let mut r = vec![0.0; nd];
            let (c, v) = q_fd.row(k);
            for (j, x) in c.iter().zip(v) {
                r[*j] = *x;
            }
            r
        })
        .collect();
    let solved = map_indexed(coupled.len(), |c| chol.solve(&rows[c]));
    let mut trip = q_ff.triplets();
    for (b, x) in solved.into_iter().enumerate() {
        let x = x?;
        for (a, ra) in rows.iter().enumerate() {
            let v: f64 = ra.iter().zip(&x).map(|(p, q)| p * q).sum();
            if v != 0.0 {
                trip.push((coupled[a], coupled[b], -v));
            }
        }
    }
    let s = SparseMatrix::from_triplets(&trip, (free.len(), free.len()))?.symmetrize();
    Ok((s, chol.logdet()))
}

/// Propagates the source field through the forward model.
pub fn forward_prior(fm: &ForwardModel, source: &GaussianField) -> Result<SolutionPrior> {
    if source.dim() != fm.n {
        return Err(Error::DimensionMismatch {
            context: "source field",
            expected: fm.n,
            found: source.dim(),
        });
    }
    if source.is_fractional() {
        return Err(Error::InvalidParameter(
            "the statFEM source field needs an integer SPDE exponent".into(),
        ));
    }
    let (q_hat, logdet_dd) = schur_marginal(source.q_t(), &fm.free, &fm.fixed)?;
    let inv_m: Vec<f64> = fm.free.iter().map(|&i| 1.0 / fm.mass[i]).collect();
    let b = fm.a_ff.scale_rows(&inv_m);
    let q_u = b.transpose().spgemm(&q_hat)?.spgemm(&b)?.symmetrize();
    let logdet_q_u = 2.0 * fm.a_ff_chol.logdet() - 2.0 * fm.free.iter().map(|&i| fm.mass[i].ln()).sum::<f64>()
        + source.q_t_factor()?.logdet()
        - logdet_dd;
    Ok(SolutionPrior {
        model: fm.clone(),
        source: source.clone(),
        b,
        q_hat,
        q_u,
        logdet_q_u,
    })
}

impl SolutionPrior {
    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn source(&self) -> &GaussianField {
        &self.source
    }

    /// Mean on all nodes.
    pub fn mean(&self) -> &[f64] {
        &self.model.mean
    }

    /// Precision on the free nodes.
    pub fn precision(&self) -> &SparseMatrix {
        &self.q_u
    }

    pub fn logdet_precision(&self) -> f64 {
        self.logdet_q_u
    }

    /// `Q_u v` through the factored form `(M_f⁻¹A_ff)ᵀ Q̂ (M_f⁻¹A_ff) v`,
    /// which avoids the cancellation in the explicit product.
    pub fn precision_apply(&self, v: &[f64]) -> Vec<f64> {
        self.b.mul_vec_transpose(&self.q_hat.mul_vec(&self.b.mul_vec(v)))
    }

    /// `C_u v = A_ff⁻¹ M_f (C_s)_ff M_f A_ff⁻¹ v` on the free nodes, by solves
    /// with `A_ff` and the source precision.
    pub fn covariance_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let fm = &self.model;
        let x = fm.a_ff_chol.solve(v)?;
        let mut full = vec![0.0; fm.n];
        for (&i, v) in fm.free.iter().zip(&x) {
            full[i] = fm.mass[i] * v;
        }
        let cs = self.source.covariance_apply(&full)?;
        let rhs: Vec<f64> = fm.free.iter().map(|&i| fm.mass[i] * cs[i]).collect();
        fm.a_ff_chol.solve(&rhs)
    }

    fn covariance_free_column(&self, k: usize) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.model.free.len()];
        e[k] = 1.0;
        self.covariance_apply(&e)
    }

    /// Prior variances at all nodes; zero at fixed nodes.
    pub fn variances(&self) -> Result<Vec<f64>> {
        let fm = &self.model;
        let cols = map_indexed(fm.free.len(), |k| self.covariance_free_column(k).map(|c| c[k]));
        let mut out = vec![0.0; fm.n];
        for (&i, v) in fm.free.iter().zip(cols) {
            out[i] = v?.max(0.0);
        }
        Ok(out)
    }
}

/// Mismatch field `d`, restricted to integer SPDE exponents.
#[derive(Clone, Debug)]
pub struct MismatchField {
    field: GaussianField,
}

impl MismatchField {
    pub fn new(mesh: &Mesh, p: &MaternParams) -> Result<Self> {
        Self::from_field(build_field(mesh, p, 0)?)
    }

    pub fn from_field(field: GaussianField) -> Result<Self> {
        if field.is_fractional() {
            return Err(Error::InvalidParameter(format!(
                "the mismatch field needs an integer SPDE exponent (nu = {} gives beta = {})",
                field.matern().nu,
                field.params().beta
            )));
        }
        Ok(Self { field })
    }

    pub fn field(&self) -> &GaussianField {
        &self.field
    }

    pub fn precision(&self) -> &SparseMatrix {
        self.field.q_t()
    }
}

/// `Q_{u|Y} = Q_u + n_o P_fᵀ Q_de P_f` with `Q_u` kept in factored form,
/// and the explicit factor used as preconditioner.
#[derive(Clone, Debug)]
struct PosteriorOperator {
    b: SparseMatrix,
    bt: SparseMatrix,
    q_hat: SparseMatrix,
    pf: Vec<Vec<(usize, f64)>>,
    pf_mat: SparseMatrix,
    pf_t: SparseMatrix,
    q_de: DMatrix<f64>,
    n_o: usize,
    chol: CholeskyFactor,
}

impl PosteriorOperator {
    fn new(
        prior: &SolutionPrior,
        pf: Vec<Vec<(usize, f64)>>,
        q_de: DMatrix<f64>,
        n_o: usize,
        chol: CholeskyFactor,
    ) -> Result<Self> {
        let nf = prior.b.cols();
        let trip: Vec<(usize, usize, f64)> = pf
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(k, x)| (i, k, x)))
            .collect();
        let pf_mat = SparseMatrix::from_triplets(&trip, (pf.len(), nf))?;
        Ok(Self {
            b: prior.b.clone(),
            bt: prior.b.transpose(),
            q_hat: prior.q_hat.clone(),
            pf_t: pf_mat.transpose(),
            pf_mat,
            pf,
            q_de,
            n_o,
            chol,
        })
    }

    /// `w − Q_{u|Y} x` with the products carried in double-double.
    fn residual(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let x = DdVec::from_f64(x);
        let bx = mul_vec_dd(&self.b, &x);
        let mut out = mul_vec_dd(&self.bt, &mul_vec_dd(&self.q_hat, &bx));
        let px = mul_vec_dd(&self.pf_mat, &x);
        let mut qpx = dense_mul_dd(&self.q_de, &px);
        for (h, l) in qpx.hi.iter_mut().zip(qpx.lo.iter_mut()) {
            *h *= self.n_o as f64;
            *l *= self.n_o as f64;
        }
        out.add_assign(&mul_vec_dd(&self.pf_t, &qpx));
        w.iter()
            .zip(out.hi.iter().zip(&out.lo))
            .map(|(w, (h, l))| (w - h) - l)
            .collect()
    }

    /// Solves with the explicit factor and refines against the factored
    /// operator. `Q_u` squares the conditioning of `A`, so the explicit
    /// product alone loses digits that the factored form keeps.
    fn solve(&self, w: &[f64]) -> Result<Vec<f64>> {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut x = self.chol.solve(w)?;
        let mut last = f64::INFINITY;
        for _ in 0..6 {
            let r = self.residual(w, &x);
            let rn = norm(&r);
            if !(rn < 0.5 * last) || rn <= 1e-17 * norm(w) {
                break;
            }
            last = rn;
            for (xi, d) in x.iter_mut().zip(self.chol.solve(&r)?) {
                *xi += d;
            }
        }
        Ok(x)
    }
}

/// Posterior of `u` on the free nodes, with the log marginal of the readings.
#[derive(Clone, Debug)]
pub struct StatfemPosterior {
    n: usize,
    free: Vec<usize>,
    mean: Vec<f64>,
    q_post: SparseMatrix,
    op: PosteriorOperator,
    log_marginal: f64,
}

impl StatfemPosterior {
    /// Mean on all nodes (boundary values at fixed nodes).
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn precision(&self) -> &SparseMatrix {
        &self.q_post
    }

    pub fn precision_factor(&self) -> &CholeskyFactor {
        &self.op.chol
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    /// `Q_{u|Y}⁻¹ v` on the free nodes.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.op.solve(v)
    }

    /// Posterior covariance of `u` on the free nodes, densely. For small
    /// problems.
    pub fn covariance_dense(&self) -> Result<DMatrix<f64>> {
        let nf = self.free.len();
        let cols = map_indexed(nf, |k| {
            let mut e = vec![0.0; nf];
            e[k] = 1.0;
            self.op.solve(&e)
        });
        let mut c = DMatrix::zeros(nf, nf);
        for (k, col) in cols.into_iter().enumerate() {
            c.column_mut(k).copy_from_slice(&col?);
        }
        Ok((&c + c.transpose()) * 0.5)
    }

    /// Posterior variances on all nodes; zero at fixed nodes.
    pub fn variances(&self) -> Result<Vec<f64>> {
        let nf = self.free.len();
        let v = map_indexed(nf, |k| {
            let mut e = vec![0.0; nf];
            e[k] = 1.0;
            self.op.solve(&e).map(|x| x[k])
        });
        let mut out = vec![0.0; self.n];
        for (&i, x) in self.free.iter().zip(v) {
            out[i] = x?.max(0.0);
        }
        Ok(out)
    }

    /// `Q_{u|Y}⁻¹ P_fᵀ e_r` for every row `r` of an evaluation matrix on all nodes.
    fn solve_rows(&self, p: &SparseMatrix) -> Result<Vec<Vec<f64>>> {
        let map = position_map(self.n, &self.free);
        let nf = self.free.len();
        map_indexed(p.rows(), |r| {
            let mut e = vec![0.0; nf];
            let (c, v) = p.row(r);
            for (j, x) in c.iter().zip(v) {
                if let Some(k) = map[*j] {
                    e[k] += x;
                }
            }
            self.op.solve(&e)
        })
        .into_iter()
        .collect()
    }
}

/// Free-node restriction of the rows of `p`, as `(local column, value)`.
fn restrict_rows(p: &SparseMatrix, map: &[Option<usize>]) -> Vec<Vec<(usize, f64)>> {
    (0..p.rows())
        .map(|r| {
            let (c, v) = p.row(r);
            c.iter().zip(v).filter_map(|(j, x)| map[*j].map(|k| (k, *x))).collect()
        })
        .collect()
}

fn row_dot(row: &[(usize, f64)], v: &[f64]) -> f64 {
    row.iter().map(|(k, x)| x * v[*k]).sum()
}

/// `Q_de = (P Q_d⁻¹ Pᵀ + σ_e² I)⁻¹` and `log det Q_de⁻¹`, from `n_y` solves
/// with the mismatch factor and a dense `n_y × n_y` factorization.
///
/// The Woodbury expansion `σ_e⁻² I − σ_e⁻² P (σ_e² Q_d + PᵀP)⁻¹ Pᵀ` gives the
/// same matrix but cancels when `σ_e² Q_d` is small against `PᵀP`.
fn noise_mismatch_precision(p: &SparseMatrix, mismatch: &GaussianField, sigma_e: f64) -> Result<(DMatrix<f64>, f64)> {
    let ny = p.rows();
    let pt = p.transpose();
    let cols = map_indexed(ny, |j| {
        let mut e = vec![0.0; ny];
        e[j] = 1.0;
        mismatch.covariance_apply(&pt.mul_vec(&e)).map(|w| p.mul_vec(&w))
    });
    let mut s = DMatrix::identity(ny, ny) * (sigma_e * sigma_e);
    for (j, c) in cols.into_iter().enumerate() {
        let c = c?;
        for i in 0..ny {
            s[(i, j)] += c[i];
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    let ch = s
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { step: ny, pivot: 0.0 })?;
    let logdet_inv = 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok((ch.inverse(), logdet_inv))
}

/// The Woodbury form of [`noise_mismatch_precision`] with its determinant
/// identity `det Q_de⁻¹ = (σ_e²)^{n_y − n} det(σ_e² Q_d + PᵀP) / det Q_d`.
#[cfg(test)]
fn noise_mismatch_precision_woodbury(
    p: &SparseMatrix,
    mismatch: &GaussianField,
    sigma_e: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let (ny, n) = (p.rows(), p.cols());
    let s2 = sigma_e * sigma_e;
    let k = mismatch
        .q_t()
        .add_scaled(s2, &p.transpose().spgemm(p)?, 1.0)?
        .symmetrize();
    let chol = CholeskyFactor::new(&k)?;
    let pt = p.transpose();
    let mut q_de = DMatrix::identity(ny, ny) / s2;
    for j in 0..ny {
        let mut e = vec![0.0; ny];
        e[j] = 1.0;
        let c = p.mul_vec(&chol.solve(&pt.mul_vec(&e))?);
        for i in 0..ny {
            q_de[(i, j)] -= c[i] / s2;
        }
    }
    let logdet_inv = chol.logdet() + (ny as f64 - n as f64) * s2.ln() - mismatch.q_t_factor()?.logdet();
    Ok((q_de, logdet_inv))
}

/// Conditions the solution prior on the readings.
pub fn statfem_posterior(
    prior: &SolutionPrior,
    mismatch: &MismatchField,
    obs: &ObservationSet,
) -> Result<StatfemPosterior> {
    let fm = &prior.model;
    let n = fm.n;
    if obs.n_u() != n {
        return Err(Error::DimensionMismatch {
            context: "observation matrix columns",
            expected: n,
            found: obs.n_u(),
        });
    }
    if mismatch.field.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "mismatch field",
            expected: n,
            found: mismatch.field.dim(),
        });
    }
    let nf = fm.free.len();
    let (ny, no) = (obs.n_y(), obs.n_o());
    if 4 * ny > nf {
        return Err(Error::TooManyObservations { n_y: ny, n_u: nf });
    }
    let p = obs.p();
    let (q_de, logdet_qde_inv) = noise_mismatch_precision(p, &mismatch.field, obs.sigma_e())?;

    let map = position_map(n, &fm.free);
    let pf = restrict_rows(p, &map);
    let fixed_mask: Vec<bool> = map.iter().map(|m| m.is_none()).collect();
    let pd_g = coupled_rhs(p, &(0..ny).collect::<Vec<_>>(), &fm.g, &fixed_mask);
    let ubar_f: Vec<f64> = fm.free.iter().map(|&i| fm.mean[i]).collect();
    let pf_u: Vec<f64> = pf.iter().map(|r| row_dot(r, &ubar_f)).collect();
    // r_i = y_i − P_D g_D − P_f ū_f
    let resid: Vec<Vec<f64>> = (0..no)
        .map(|k| (0..ny).map(|i| obs.y()[(i, k)] - pd_g[i] - pf_u[i]).collect())
        .collect();

    // n_o P_fᵀ Q_de P_f, dense on the support of P_f.
    let mut support: Vec<usize> = pf.iter().flat_map(|r| r.iter().map(|e| e.0)).collect();
    support.sort_unstable();
    support.dedup();
    let smap = position_map(nf, &support);
    let mut ps = DMatrix::zeros(ny, support.len());
    for (i, r) in pf.iter().enumerate() {
        for &(k, x) in r {
            ps[(i, smap[k].unwrap())] += x;
        }
    }
    let g = ps.transpose() * &q_de * &ps * no as f64;
    let mut trip = prior.q_u.triplets();
    for a in 0..support.len() {
        for b in 0..support.len() {
            if g[(a, b)] != 0.0 {
                trip.push((support[a], support[b], g[(a, b)]));
            }
        }
    }
    let q_post = SparseMatrix::from_triplets(&trip, (nf, nf))?.symmetrize();
    let chol = CholeskyFactor::new(&q_post)?;

    let mut rsum = vec![0.0; ny];
    for r in &resid {
        for (s, v) in rsum.iter_mut().zip(r) {
            *s += v;
        }
    }
    let qr = &q_de * nalgebra::DVector::from_column_slice(&rsum);
    let mut w = vec![0.0; nf];
    for (i, r) in pf.iter().enumerate() {
        for &(k, x) in r {
            w[k] += x * qr[i];
        }
    }
    let op = PosteriorOperator::new(prior, pf, q_de, no, chol)?;
    let delta = op.solve(&w)?;

    // Quadratic form as the minimum of Σ‖r_i − P_f δ‖²_{Q_de} + ‖δ‖²_{Q_u}.
    let pf_d: Vec<f64> = op.pf.iter().map(|r| row_dot(r, &delta)).collect();
    let mut quad = 0.0;
    for r in &resid {
        let e = nalgebra::DVector::from_iterator(ny, r.iter().zip(&pf_d).map(|(a, b)| a - b));
        quad += e.dot(&(&op.q_de * &e));
    }
    let qd = prior.precision_apply(&delta);
    quad += delta.iter().zip(&qd).map(|(a, b)| a * b).sum::<f64>();
    // det Q_{u|Y} / det Q_u = det(I + n_o Q_de P_f C_u P_fᵀ), with C_u P_fᵀ
    // from solves rather than from the explicit factor.
    let cols = map_indexed(ny, |i| {
        let mut e = vec![0.0; nf];
        for &(k, x) in &op.pf[i] {
            e[k] += x;
        }
        prior.covariance_apply(&e)
    });
    let mut k = DMatrix::zeros(ny, ny);
    for (j, c) in cols.into_iter().enumerate() {
        let c = c?;
        for i in 0..ny {
            k[(i, j)] = row_dot(&op.pf[i], &c);
        }
    }
    let ratio = DMatrix::identity(ny, ny) + &op.q_de * k * no as f64;
    let logdet_ratio = ratio.lu().determinant().ln();
    let logdet = no as f64 * logdet_qde_inv + logdet_ratio;
    let nn = (no * ny) as f64;
    let log_marginal = -0.5 * (quad + logdet + nn * LN_2PI);

    let mut mean = fm.mean.clone();
    for (&i, d) in fm.free.iter().zip(&delta) {
        mean[i] += d;
    }
    Ok(StatfemPosterior {
        n,
        free: fm.free.clone(),
        mean,
        q_post,
        op,
        log_marginal,
    })
}

/// `log p(Y)` of the readings.
pub fn statfem_log_marginal(prior: &SolutionPrior, mismatch: &MismatchField, obs: &ObservationSet) -> Result<f64> {
    Ok(statfem_posterior(prior, mismatch, obs)?.log_marginal)
}

/// Posterior of the true response `z = P(u + d)` at the rows of an
/// evaluation matrix.
#[derive(Clone, Debug)]
pub struct TrueResponse {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

/// `z̄ = P ū_{|Y}` and `P_f Q_{u|Y}⁻¹ P_fᵀ + P Q_d⁻¹ Pᵀ` at the observation points.
pub fn posterior_true_response(
    post: &StatfemPosterior,
    mismatch: &MismatchField,
    obs: &ObservationSet,
) -> Result<TrueResponse> {
    true_response_at(post, mismatch, obs.p())
}

/// As [`posterior_true_response`] for any evaluation matrix on the mesh nodes.
pub fn true_response_at(post: &StatfemPosterior, mismatch: &MismatchField, p: &SparseMatrix) -> Result<TrueResponse> {
    let rows = p.rows();
    let map = position_map(post.n, &post.free);
    let pf = restrict_rows(p, &map);
    let solved = post.solve_rows(p)?;
    let pt = p.transpose();
    let dcols = map_indexed(rows, |j| {
        let mut e = vec![0.0; rows];
        e[j] = 1.0;
        mismatch.field.covariance_apply(&pt.mul_vec(&e)).map(|c| p.mul_vec(&c))
    });
    let mut cov = DMatrix::zeros(rows, rows);
    for (j, (s, d)) in solved.iter().zip(dcols).enumerate() {
        let d = d?;
        for i in 0..rows {
            cov[(i, j)] = row_dot(&pf[i], s) + d[i];
        }
    }
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(TrueResponse {
        mean: p.mul_vec(&post.mean),
        covariance,
    })
}

/// Diagonal of the true-response covariance only, for large evaluation sets.
pub fn true_response_variances(
    post: &StatfemPosterior,
    mismatch: &MismatchField,
    p: &SparseMatrix,
) -> Result<Vec<f64>> {
    let map = position_map(post.n, &post.free);
    let pf = restrict_rows(p, &map);
    let solved = post.solve_rows(p)?;
    let pt = p.transpose();
    let v = map_indexed(p.rows(), |i| {
        let mut e = vec![0.0; p.rows()];
        e[i] = 1.0;
        let row = pt.mul_vec(&e);
        mismatch
            .field
            .covariance_apply(&row)
            .map(|c| row.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + row_dot(&pf[i], &solved[i]))
    });
    v.into_iter().collect()
}
