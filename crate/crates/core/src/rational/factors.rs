use std::sync::OnceLock;

use super::RationalApproximant;
use crate::error::{Error, Result};
use crate::sparse::{CholeskyFactor, SparseMatrix};

/// One polynomial factor `M⁻¹ (α M + β L)` of the operator `M⁻¹ L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor {
    pub alpha: f64,
    pub beta: f64,
}

/// Product-form operators with `F_l⁻¹ F_r ≈ (M⁻¹ L)^{−γ}`.
///
/// Each root `r` contributes `I − r M⁻¹L/λ₁`, normalized by `1 + |r| ρ` where
/// `ρ` bounds the spectrum of `M⁻¹L/λ₁`, so every stored factor has
/// eigenvalues in `(0, 1]`. All scalars, including `λ₁^{−γ}` and the ratio of
/// leading coefficients, are folded into `scale`; `F_l` carries scale 1.
#[derive(Clone, Debug)]
pub struct OperatorFactors {
    mass: Vec<f64>,
    stiffness: SparseMatrix,
    pub scale: f64,
    pub right: Vec<Factor>,
    pub left: Vec<Factor>,
    pub lambda1: f64,
    left_chol: OnceLock<Vec<CholeskyFactor>>,
}

impl OperatorFactors {
    /// Factors for the approximant `r ≈ x^γ` with `x = λ₁/λ`.
    pub fn new(approx: &RationalApproximant, l: &SparseMatrix, m_lumped: &SparseMatrix, lambda1: f64) -> Result<Self> {
        if !(lambda1 > 0.0) || !lambda1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "spectral scale lambda1 must be positive, got {lambda1}"
            )));
        }
        if !m_lumped.is_diagonal() || m_lumped.rows() != l.rows() {
            return Err(Error::InvalidParameter(
                "operator factors need a diagonal (lumped) mass matrix of matching size".into(),
            ));
        }
        let mass = m_lumped.diagonal();
        if mass.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter("lumped mass must be positive".into()));
        }
        if !approx.roots_admissible() {
            return Err(Error::InvalidParameter(format!(
                "rational approximant for gamma = {} has roots inside the approximation interval",
                approx.gamma
            )));
        }
        // Gershgorin bound on the spectrum of M⁻¹L / λ₁.
        let mut rho = 1.0f64;
        for i in 0..l.rows() {
            let (_, v) = l.row(i);
            let s: f64 = v.iter().map(|x| x.abs()).sum();
            rho = rho.max(s / (mass[i] * lambda1));
        }

        let mut scale = approx.num_lead / approx.den_lead * lambda1.powf(-approx.gamma);
        let root_factor = |r: f64| {
            let s = 1.0 + r.abs() * rho;
            (
                Factor {
                    alpha: 1.0 / s,
                    beta: -r / (lambda1 * s),
                },
                s,
            )
        };
        let mut right = Vec::new();
        for &c in &approx.num_roots {
            if c == 0.0 {
                continue;
            }
            let (f, s) = root_factor(c);
            right.push(f);
            scale *= s;
        }
        let mut left = Vec::new();
        for &d in &approx.den_roots {
            if d == 0.0 {
                continue;
            }
            let (f, s) = root_factor(d);
            left.push(f);
            scale /= s;
        }
        // r(x) = (a/b) y^{m_d − m_c} Π(1 − c y)/Π(1 − d y) with y = 1/x; a
        // degree mismatch leaves powers of y = M⁻¹L/λ₁, normalized by ρ.
        let pure = Factor {
            alpha: 0.0,
            beta: 1.0 / (lambda1 * rho),
        };
        let (mc, md) = (approx.num_roots.len(), approx.den_roots.len());
        for _ in md..mc {
            left.push(pure);
            scale /= rho;
        }
        for _ in mc..md {
            right.push(pure);
            scale *= rho;
        }
        Ok(Self {
            mass,
            stiffness: l.clone(),
            scale,
            right,
            left,
            lambda1,
            left_chol: OnceLock::new(),
        })
    }

    /// Reassembles factors from stored parts.
    pub fn from_parts(
        mass: Vec<f64>,
        stiffness: SparseMatrix,
        scale: f64,
        right: Vec<Factor>,
        left: Vec<Factor>,
        lambda1: f64,
    ) -> Self {
        Self {
            mass,
            stiffness,
            scale,
            right,
            left,
            lambda1,
            left_chol: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    fn apply_one(&self, f: Factor, v: &[f64]) -> Vec<f64> {
        let lv = self.stiffness.mul_vec(v);
        v.iter()
            .zip(&lv)
            .zip(&self.mass)
            .map(|((&x, &y), &m)| f.alpha * x + f.beta * y / m)
            .collect()
    }

    fn apply_one_t(&self, f: Factor, v: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = v.iter().zip(&self.mass).map(|(x, m)| x / m).collect();
        let lw = self.stiffness.mul_vec(&w);
        v.iter().zip(&lw).map(|(&x, &y)| f.alpha * x + f.beta * y).collect()
    }

    /// `F_r v`.
    pub fn apply_right(&self, v: &[f64]) -> Vec<f64> {
        let mut x = v.to_vec();
        for &f in &self.right {
            x = self.apply_one(f, &x);
        }
        x.iter_mut().for_each(|a| *a *= self.scale);
        x
    }

    /// `F_rᵀ v`.
    pub fn apply_right_t(&self, v: &[f64]) -> Vec<f64> {
        let mut x = v.to_vec();
        for &f in self.right.iter().rev() {
            x = self.apply_one_t(f, &x);
        }
        x.iter_mut().for_each(|a| *a *= self.scale);
        x
    }

    /// `F_l v`.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let mut x = v.to_vec();
        for &f in &self.left {
            x = self.apply_one(f, &x);
        }
        x
    }

    fn left_factors(&self) -> Result<&[CholeskyFactor]> {
        if let Some(c) = self.left_chol.get() {
            return Ok(c);
        }
        let mut out = Vec::with_capacity(self.left.len());
        for &f in &self.left {
            out.push(CholeskyFactor::new(&self.factor_symmetric(f)?)?);
        }
        Ok(self.left_chol.get_or_init(|| out))
    }

    /// `F_l⁻¹ v`, one symmetric positive definite solve per factor.
    pub fn solve_left(&self, v: &[f64]) -> Result<Vec<f64>> {
        // (α M + β L) x = M b for each factor; factors commute, order is free.
        let mut x = v.to_vec();
        for c in self.left_factors()? {
            let mb: Vec<f64> = x.iter().zip(&self.mass).map(|(a, m)| a * m).collect();
            x = c.solve(&mb)?;
        }
        Ok(x)
    }

    /// `F_l⁻ᵀ v`: each factor contributes `M (α M + β L)⁻¹`.
    pub fn solve_left_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut x = v.to_vec();
        for c in self.left_factors()? {
            x = c.solve(&x)?;
            x.iter_mut().zip(&self.mass).for_each(|(a, m)| *a *= m);
        }
        Ok(x)
    }

    /// `F_l⁻¹ F_r v ≈ (M⁻¹L)^{−γ} v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.solve_left(&self.apply_right(v))
    }

    /// `α M + β L`.
    fn factor_symmetric(&self, f: Factor) -> Result<SparseMatrix> {
        let m = SparseMatrix::from_diagonal(&self.mass);
        m.add_scaled(f.alpha, &self.stiffness, f.beta)
    }

    fn factor_matrix(&self, f: Factor) -> Result<SparseMatrix> {
        let inv: Vec<f64> = self.mass.iter().map(|m| 1.0 / m).collect();
        Ok(self.factor_symmetric(f)?.scale_rows(&inv))
    }

    fn product(&self, factors: &[Factor], scale: f64) -> Result<SparseMatrix> {
        let mut acc = SparseMatrix::identity(self.dim()).scale(scale);
        for &f in factors {
            acc = self.factor_matrix(f)?.spgemm(&acc)?;
        }
        Ok(acc)
    }

    /// The factors of `F_l` as separate sparse matrices.
    pub(crate) fn left_factor_matrices(&self) -> Result<Vec<SparseMatrix>> {
        self.left.iter().map(|&f| self.factor_matrix(f)).collect()
    }

    /// Sparse `F_l`.
    pub fn left_matrix(&self) -> Result<SparseMatrix> {
        self.product(&self.left, 1.0)
    }

    /// Sparse `F_r` including the scalar.
    pub fn right_matrix(&self) -> Result<SparseMatrix> {
        self.product(&self.right, self.scale)
    }
}
