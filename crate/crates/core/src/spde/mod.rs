//! Matérn fields as solutions of `(κ² − Δ)^β (τ s) = W`.
//!
//! The integer part `α` of the exponent gives a sparse precision by recursion
//! through the lumped mass matrix; the fractional remainder `γ = β − α` goes
//! through the operator factors of a rational approximation.

mod convergence;
mod field;
mod persist;

pub use convergence::{convergence_study, covariance_error, fit_loglog_slope, relative_l2_error, ConvergenceRow};
pub use field::{build_field, build_field_with, integer_precision, FieldOptions, GaussianField, MaternCoefficients};
pub use persist::{load_field, save_field};

use libm::lgamma as ln_gamma;
use puruspe::Inu_Knu;

use crate::error::{Error, Result};

/// Matérn covariance parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaternParams {
    /// Marginal standard deviation.
    pub sigma: f64,
    /// Lengthscale.
    pub ell: f64,
    /// Smoothness.
    pub nu: f64,
    /// Intrinsic dimension (1 or 2).
    pub dim: usize,
}

/// Parameters of the SPDE `(κ² − Δ)^β (τ s) = W`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpdeParams {
    pub kappa: f64,
    pub beta: f64,
    pub tau: f64,
    /// Integer part `max(1, ⌊β⌋)`.
    pub alpha: usize,
    /// Fractional part `β − α`.
    pub gamma: f64,
    pub dim: usize,
}

impl SpdeParams {
    pub fn is_fractional(&self) -> bool {
        self.gamma != 0.0
    }
}

impl MaternParams {
    pub fn new(sigma: f64, ell: f64, nu: f64, dim: usize) -> Result<Self> {
        let p = Self { sigma, ell, nu, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.sigma) || !ok(self.ell) || !ok(self.nu) {
            return Err(Error::InvalidParameter(format!(
                "Matérn parameters must be positive and finite (sigma = {}, ell = {}, nu = {})",
                self.sigma, self.ell, self.nu
            )));
        }
        if !(1..=2).contains(&self.dim) {
            return Err(Error::InvalidParameter(format!(
                "intrinsic dimension must be 1 or 2, got {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// `ν` giving the SPDE exponent `β` in dimension `d`.
    pub fn nu_for_beta(beta: f64, dim: usize) -> f64 {
        2.0 * beta - dim as f64 / 2.0
    }

    pub fn to_spde(&self) -> Result<SpdeParams> {
        matern_to_spde(self)
    }
}

fn ln_tau2(sigma: f64, nu: f64, kappa: f64, d: f64) -> f64 {
    ln_gamma(nu)
        - 2.0 * sigma.ln()
        - ln_gamma(nu + d / 2.0)
        - d / 2.0 * (4.0 * std::f64::consts::PI).ln()
        - 2.0 * nu * kappa.ln()
}

/// `κ = √(2ν)/ℓ`, `β = ν/2 + d/4`,
/// `τ² = Γ(ν) / (σ² Γ(ν + d/2) (4π)^{d/2} κ^{2ν})`.
pub fn matern_to_spde(p: &MaternParams) -> Result<SpdeParams> {
    p.validate()?;
    let d = p.dim as f64;
    let kappa = (2.0 * p.nu).sqrt() / p.ell;
    let beta = p.nu / 2.0 + d / 4.0;
    let tau = (0.5 * ln_tau2(p.sigma, p.nu, kappa, d)).exp();
    let (alpha, gamma) = split_exponent(beta);
    Ok(SpdeParams {
        kappa,
        beta,
        tau,
        alpha,
        gamma,
        dim: p.dim,
    })
}

/// `α = max(1, ⌊β⌋)` and `γ = β − α`. Exponents within 1e-12 of an integer
/// are snapped to it.
pub fn split_exponent(beta: f64) -> (usize, f64) {
    let r = beta.round();
    let beta = if (beta - r).abs() <= 1e-12 * beta.max(1.0) {
        r
    } else {
        beta
    };
    let alpha = (beta.floor() as usize).max(1);
    (alpha, beta - alpha as f64)
}

/// Inverse of [`matern_to_spde`].
pub fn spde_to_matern(kappa: f64, beta: f64, tau: f64, dim: usize) -> Result<MaternParams> {
    let d = dim as f64;
    if !(kappa > 0.0) || !(tau > 0.0) || !(beta > d / 4.0) || !(1..=2).contains(&dim) {
        return Err(Error::InvalidParameter(format!(
            "need kappa > 0, tau > 0, beta > d/4 and d in {{1, 2}} (kappa = {kappa}, beta = {beta}, tau = {tau}, d = {dim})"
        )));
    }
    let nu = 2.0 * (beta - d / 4.0);
    let ell = (2.0 * nu).sqrt() / kappa;
    // ln τ² at σ = 1, then σ² = τ²(σ=1) / τ².
    let ln_sigma2 = ln_tau2(1.0, nu, kappa, d) - 2.0 * tau.ln();
    MaternParams::new((0.5 * ln_sigma2).exp(), ell, nu, dim)
}

/// Matérn covariance `σ² 2^{1−ν}/Γ(ν) (√(2ν) r/ℓ)^ν K_ν(√(2ν) r/ℓ)`.
pub fn matern_kernel(p: &MaternParams, r: f64) -> f64 {
    let s2 = p.sigma * p.sigma;
    let z = (2.0 * p.nu).sqrt() * r.abs() / p.ell;
    if z < 1e-10 {
        return s2;
    }
    if z > 700.0 {
        return 0.0;
    }
    let (_, k) = Inu_Knu(p.nu, z);
    let ln = (1.0 - p.nu) * std::f64::consts::LN_2 - ln_gamma(p.nu) + p.nu * z.ln() + k.ln();
    s2 * ln.exp()
}
