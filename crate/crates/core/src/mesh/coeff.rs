use nalgebra::DMatrix;

/// Spatially varying SPDE coefficients.
///
/// `diffusion_at` returns `None` for the isotropic case `H = I`, which lets
/// assembly use the contravariant metric directly.
pub trait CoefficientField: Send + Sync {
    fn kappa2_at(&self, x: &[f64]) -> f64;
    fn tau_at(&self, x: &[f64]) -> f64;
    fn diffusion_at(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Homogeneous isotropic coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant {
    pub kappa2: f64,
    pub tau: f64,
}

impl Constant {
    /// Plain Laplacian: `κ² = 0`, `τ = 1`.
    pub fn laplacian() -> Self {
        Self { kappa2: 0.0, tau: 1.0 }
    }
}

impl CoefficientField for Constant {
    fn kappa2_at(&self, _x: &[f64]) -> f64 {
        self.kappa2
    }
    fn tau_at(&self, _x: &[f64]) -> f64 {
        self.tau
    }
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type MatrixFn = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Coefficients given by closures.
pub struct FnCoefficients {
    pub kappa2: ScalarFn,
    pub tau: ScalarFn,
    pub diffusion: Option<MatrixFn>,
}

impl FnCoefficients {
    pub fn new(
        kappa2: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        tau: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kappa2: Box::new(kappa2),
            tau: Box::new(tau),
            diffusion: None,
        }
    }

    pub fn with_diffusion(mut self, h: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Box::new(h));
        self
    }
}

impl CoefficientField for FnCoefficients {
    fn kappa2_at(&self, x: &[f64]) -> f64 {
        (self.kappa2)(x)
    }
    fn tau_at(&self, x: &[f64]) -> f64 {
        (self.tau)(x)
    }
    fn diffusion_at(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.diffusion.as_ref().map(|h| h(x))
    }
}

impl std::fmt::Debug for FnCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnCoefficients")
            .field("anisotropic", &self.diffusion.is_some())
            .finish()
    }
}
