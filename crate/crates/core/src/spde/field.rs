use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ln_tau2, matern_to_spde, MaternParams, SpdeParams};
use crate::error::{Error, Result};
use crate::mesh::{assemble_mass, assemble_stiffness, observation_matrix, CoefficientField, Constant, Mesh};
use crate::parallel::map_indexed;
use crate::rational::{cached_approx, OperatorFactors, RationalApproximant, DEFAULT_EPSILON};
use crate::sparse::{CholeskyFactor, SparseMatrix};

/// Samples drawn per random stream; fixed so output is independent of the
/// thread count.
const SAMPLES_PER_STREAM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOptions {
    /// Degree `m` of the rational approximation (ignored for integer `β`).
    pub degree: usize,
    /// Lower end `ε` of the approximation interval.
    pub epsilon: f64,
}

impl Default for FieldOptions {
    fn default() -> Self {
        Self {
            degree: 6,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type MatrixFn = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Non-homogeneous and anisotropic coefficients from local Matérn
/// parameters: `κ(x) = √(2ν)/ℓ(x)` and
/// `τ²(x) = Γ(ν) / (σ(x)² Γ(ν + d/2) (4π)^{d/2} κ(x)^{2ν} √det H(x))`.
pub struct MaternCoefficients {
    pub nu: f64,
    pub dim: usize,
    sigma: ScalarFn,
    ell: ScalarFn,
    diffusion: Option<MatrixFn>,
}

impl MaternCoefficients {
    pub fn new(
        nu: f64,
        dim: usize,
        sigma: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        ell: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            nu,
            dim,
            sigma: Box::new(sigma),
            ell: Box::new(ell),
            diffusion: None,
        }
    }

    pub fn with_diffusion(mut self, h: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Box::new(h));
        self
    }
}

impl CoefficientField for MaternCoefficients {
    fn kappa2_at(&self, x: &[f64]) -> f64 {
        let l = (self.ell)(x);
        2.0 * self.nu / (l * l)
    }

    fn tau_at(&self, x: &[f64]) -> f64 {
        let kappa = self.kappa2_at(x).sqrt();
        let mut ln = ln_tau2((self.sigma)(x), self.nu, kappa, self.dim as f64);
        if let Some(h) = &self.diffusion {
            ln -= 0.5 * h(x).determinant().ln();
        }
        (0.5 * ln).exp()
    }

    fn diffusion_at(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.diffusion.as_ref().map(|h| h(x))
    }
}

impl std::fmt::Debug for MaternCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MaternCoefficients")
            .field("nu", &self.nu)
            .field("dim", &self.dim)
            .field("anisotropic", &self.diffusion.is_some())
            .finish()
    }
}

struct Parts {
    l: SparseMatrix,
    mass: Vec<f64>,
    tau: Vec<f64>,
}

fn assemble_parts(mesh: &Mesh, coeff: &dyn CoefficientField) -> Result<Parts> {
    let l = assemble_stiffness(mesh, coeff)?;
    let mass = assemble_mass(mesh, true)?.diagonal();
    let tau: Vec<f64> = mesh.nodes().map(|x| coeff.tau_at(x)).collect();
    if let Some(t) = tau.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {t}")));
    }
    Ok(Parts { l, mass, tau })
}

fn recursion(parts: &Parts, alpha: usize) -> Result<SparseMatrix> {
    if alpha == 0 {
        return Err(Error::InvalidParameter("integer exponent must be at least 1".into()));
    }
    let inv_m: Vec<f64> = parts.mass.iter().map(|m| 1.0 / m).collect();
    // Q₁ = (T L)ᵀ M⁻¹ (T L) with T = diag(τ).
    let tl = parts.l.scale_rows(&parts.tau);
    let mut q = tl.transpose().scale_cols(&inv_m).spgemm(&tl)?.symmetrize();
    let n = parts.l.scale_rows(&inv_m);
    let nt = n.transpose();
    for _ in 1..alpha {
        q = nt.spgemm(&q)?.spgemm(&n)?.symmetrize();
    }
    Ok(q)
}

/// Precision of the integer-exponent field: `Q₁ = τ² LᵀM⁻¹L`,
/// `Q_k = LᵀM⁻¹ Q_{k−1} M⁻¹L`, with lumped `M` and `τ` taken at the nodes.
pub fn integer_precision(mesh: &Mesh, coeff: &dyn CoefficientField, alpha: usize) -> Result<SparseMatrix> {
    recursion(&assemble_parts(mesh, coeff)?, alpha)
}

/// Zero-mean Gaussian field with covariance `C_s = F_r Q_t⁻¹ F_rᵀ`.
///
/// For integer `β`, `F_r = I` and `Q_t` is the precision of the field itself.
#[derive(Clone, Debug)]
pub struct GaussianField {
    matern: MaternParams,
    params: SpdeParams,
    mass: Vec<f64>,
    tau: Vec<f64>,
    l: SparseMatrix,
    l_chol: CholeskyFactor,
    q_t: SparseMatrix,
    q_t_chol: OnceLock<CholeskyFactor>,
    factors: Option<OperatorFactors>,
    degree: usize,
    mesh_hash: [u8; 32],
}

/// Field with homogeneous coefficients taken from `p`.
pub fn build_field(mesh: &Mesh, p: &MaternParams, degree: usize) -> Result<GaussianField> {
    let opts = FieldOptions {
        degree,
        ..Default::default()
    };
    build_field_with(mesh, p, &opts, None)
}

/// Field with optional spatially varying coefficients. `p` still fixes `ν`
/// and `d`, hence the exponent; `κ²` and `τ` come from `coeff` when given.
pub fn build_field_with(
    mesh: &Mesh,
    p: &MaternParams,
    opts: &FieldOptions,
    coeff: Option<&dyn CoefficientField>,
) -> Result<GaussianField> {
    let params = matern_to_spde(p)?;
    if p.dim != mesh.dim_param() {
        return Err(Error::InvalidParameter(format!(
            "Matérn dimension {} does not match the mesh dimension {}",
            p.dim,
            mesh.dim_param()
        )));
    }
    let constant = Constant {
        kappa2: params.kappa * params.kappa,
        tau: params.tau,
    };
    let coeff: &dyn CoefficientField = coeff.unwrap_or(&constant);
    let parts = assemble_parts(mesh, coeff)?;
    let q_s = recursion(&parts, params.alpha)?;

    let (q_t, factors, degree) = if params.is_fractional() {
        let approx = cached_approx(params.gamma, opts.degree, opts.epsilon)?;
        let lambda1 = min_kappa2(mesh, coeff)?;
        let f = fractional_factors(&approx, &parts, lambda1)?;
        let fl = f.left_matrix()?;
        let q_t = fl.transpose().spgemm(&q_s)?.spgemm(&fl)?.symmetrize();
        (q_t, Some(f), opts.degree)
    } else {
        (q_s, None, 0)
    };
    let l_chol = CholeskyFactor::new(&parts.l)?;
    Ok(GaussianField {
        matern: *p,
        params,
        mass: parts.mass,
        tau: parts.tau,
        l: parts.l,
        l_chol,
        q_t,
        q_t_chol: OnceLock::new(),
        factors,
        degree,
        mesh_hash: mesh.content_hash(),
    })
}

fn fractional_factors(approx: &RationalApproximant, parts: &Parts, lambda1: f64) -> Result<OperatorFactors> {
    if !approx.equioscillating {
        return Err(Error::RationalNonConvergence {
            iterations: approx.iterations,
            spread: approx.spread,
        });
    }
    OperatorFactors::new(approx, &parts.l, &SparseMatrix::from_diagonal(&parts.mass), lambda1)
}

/// `λ₁ = min κ²` over element centroids, the points where assembly samples it.
fn min_kappa2(mesh: &Mesh, coeff: &dyn CoefficientField) -> Result<f64> {
    let mut lo = f64::INFINITY;
    for e in 0..mesh.n_elements() {
        let g = mesh.element_geometry(e)?;
        lo = lo.min(coeff.kappa2_at(&g.centroid));
    }
    if !(lo > 0.0) {
        return Err(Error::InvalidParameter(
            "fractional exponents need kappa^2 > 0 everywhere".into(),
        ));
    }
    Ok(lo)
}

impl GaussianField {
    /// Reassembles a field from stored parts and factorizes `L`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        matern: MaternParams,
        mass: Vec<f64>,
        tau: Vec<f64>,
        l: SparseMatrix,
        q_t: SparseMatrix,
        factors: Option<OperatorFactors>,
        degree: usize,
        mesh_hash: [u8; 32],
    ) -> Result<Self> {
        let params = matern_to_spde(&matern)?;
        for (rows, context) in [
            (q_t.rows(), "field parts"),
            (l.rows(), "field operator"),
            (tau.len(), "field tau"),
        ] {
            if rows != mass.len() {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: mass.len(),
                    found: rows,
                });
            }
        }
        if let Some(f) = &factors {
            if f.dim() != mass.len() {
                return Err(Error::DimensionMismatch {
                    context: "field factors",
                    expected: mass.len(),
                    found: f.dim(),
                });
            }
        }
        let l_chol = CholeskyFactor::new(&l)?;
        Ok(Self {
            matern,
            params,
            mass,
            tau,
            l,
            l_chol,
            q_t,
            q_t_chol: OnceLock::new(),
            factors,
            degree,
            mesh_hash,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn matern(&self) -> &MaternParams {
        &self.matern
    }

    pub fn params(&self) -> &SpdeParams {
        &self.params
    }

    /// Rational degree used for the fractional part, 0 for integer `β`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.mass
    }

    /// `Q_t`; the field precision itself when `β` is an integer.
    pub fn q_t(&self) -> &SparseMatrix {
        &self.q_t
    }

    /// Cholesky factor of `Q_t`, computed on first use. Fails when the
    /// explicit `Q_t` is not numerically positive definite, which happens for
    /// large `β` or large `ℓ/h`; covariance actions and samples do not need it.
    pub fn q_t_factor(&self) -> Result<&CholeskyFactor> {
        if let Some(c) = self.q_t_chol.get() {
            return Ok(c);
        }
        let c = CholeskyFactor::new(&self.q_t)?;
        Ok(self.q_t_chol.get_or_init(|| c))
    }

    /// `L = κ²M + K`, the operator of the SPDE.
    pub fn operator(&self) -> &SparseMatrix {
        &self.l
    }

    /// Nodal `τ`.
    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// Sparse `R` with `Q_t = Rᵀ M⁻¹ R`, as its factors in the order they
    /// act: those of `F_l`, `α − 1` copies of `M⁻¹L`, then `T L`.
    pub(crate) fn precision_chain(&self) -> Result<Vec<SparseMatrix>> {
        let mut chain = match &self.factors {
            Some(f) => f.left_factor_matrices()?,
            None => Vec::new(),
        };
        let inv_m: Vec<f64> = self.mass.iter().map(|m| 1.0 / m).collect();
        for _ in 1..self.params.alpha {
            chain.push(self.l.scale_rows(&inv_m));
        }
        chain.push(self.l.scale_rows(&self.tau));
        Ok(chain)
    }

    fn mul_mass(&self, mut x: Vec<f64>) -> Vec<f64> {
        x.iter_mut().zip(&self.mass).for_each(|(a, m)| *a *= m);
        x
    }

    /// `G x` with `G = F_l⁻¹ F_r (L⁻¹M)^{α−1} L⁻¹ T⁻¹ M^{1/2}`, so that
    /// `G Gᵀ = F_r Q_t⁻¹ F_rᵀ`. Only `L` and the single factors are solved
    /// with, never the explicit `Q_t`.
    fn apply_half(&self, x: &[f64]) -> Result<Vec<f64>> {
        let scaled: Vec<f64> = x
            .iter()
            .zip(&self.mass)
            .zip(&self.tau)
            .map(|((v, m), t)| v * m.sqrt() / t)
            .collect();
        let mut y = self.l_chol.solve(&scaled)?;
        for _ in 1..self.params.alpha {
            y = self.l_chol.solve(&self.mul_mass(y))?;
        }
        match &self.factors {
            Some(f) => f.apply(&y),
            None => Ok(y),
        }
    }

    /// `Gᵀ v`.
    fn apply_half_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut y = match &self.factors {
            Some(f) => f.solve_left_t(&f.apply_right_t(v))?,
            None => v.to_vec(),
        };
        for _ in 1..self.params.alpha {
            y = self.mul_mass(self.l_chol.solve(&y)?);
        }
        let y = self.l_chol.solve(&y)?;
        Ok(y.iter()
            .zip(&self.mass)
            .zip(&self.tau)
            .map(|((v, m), t)| v * m.sqrt() / t)
            .collect())
    }

    pub fn factors(&self) -> Option<&OperatorFactors> {
        self.factors.as_ref()
    }

    pub fn is_fractional(&self) -> bool {
        self.factors.is_some()
    }

    pub fn mesh_hash(&self) -> &[u8; 32] {
        &self.mesh_hash
    }

    /// True when the field was built on `mesh`.
    pub fn matches_mesh(&self, mesh: &Mesh) -> bool {
        mesh.content_hash() == self.mesh_hash
    }

    /// `F_r v`.
    pub fn apply_fr(&self, v: &[f64]) -> Vec<f64> {
        match &self.factors {
            Some(f) => f.apply_right(v),
            None => v.to_vec(),
        }
    }

    /// `F_rᵀ v`.
    pub fn apply_fr_t(&self, v: &[f64]) -> Vec<f64> {
        match &self.factors {
            Some(f) => f.apply_right_t(v),
            None => v.to_vec(),
        }
    }

    /// `F_r` as a sparse matrix.
    pub fn fr_matrix(&self) -> Result<SparseMatrix> {
        match &self.factors {
            Some(f) => f.right_matrix(),
            None => Ok(SparseMatrix::identity(self.dim())),
        }
    }

    /// `C_s v = F_r Q_t⁻¹ F_rᵀ v`.
    pub fn covariance_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "covariance_apply",
                expected: self.dim(),
                found: v.len(),
            });
        }
        self.apply_half(&self.apply_half_t(v)?)
    }

    /// Column `j` of the implied covariance.
    pub fn covariance_column(&self, j: usize) -> Result<Vec<f64>> {
        let n = self.dim();
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
        self.covariance_apply(&e)
    }

    /// Covariance between every node and the point `x`.
    pub fn covariance_at(&self, mesh: &Mesh, x: &[f64]) -> Result<Vec<f64>> {
        let p = observation_matrix(mesh, &[x.to_vec()])?;
        self.covariance_apply(&p.mul_vec_transpose(&[1.0]))
    }

    /// Nodal variances `C_s[i, i]` for the given indices, one solve each.
    pub fn variances(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let n = self.dim();
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
            Ok(self.apply_half_t(&e)?.iter().map(|a| a * a).sum())
        });
        out.into_iter().collect()
    }

    /// Dense implied covariance. Meant for small meshes and oracles.
    pub fn covariance_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let cols = map_indexed(n, |j| self.covariance_column(j));
        let mut c = DMatrix::zeros(n, n);
        for (j, col) in cols.into_iter().enumerate() {
            c.set_column(j, &nalgebra::DVector::from_vec(col?));
        }
        Ok((&c + c.transpose()) * 0.5)
    }

    /// `n` samples `G z`, `z` standard normal, one per column.
    ///
    /// Samples are drawn in blocks of 64, each from its own ChaCha stream of
    /// `seed`, so the result depends only on `seed` and `n`.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let dim = self.dim();
        let blocks = n.div_ceil(SAMPLES_PER_STREAM);
        let cols = map_indexed(blocks, |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = SAMPLES_PER_STREAM.min(n - b * SAMPLES_PER_STREAM);
            (0..count)
                .map(|_| {
                    let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    self.apply_half(&z).expect("factorized operator solve")
                })
                .collect::<Vec<_>>()
        });
        let mut out = DMatrix::zeros(dim, n);
        for (k, col) in cols.into_iter().flatten().enumerate() {
            out.set_column(k, &nalgebra::DVector::from_vec(col));
        }
        out
    }
}
