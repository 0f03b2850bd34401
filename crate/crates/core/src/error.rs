use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({row}, {col}) out of range for a {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("non-positive pivot {pivot:.6e} at elimination step {step}; matrix is not positive definite")]
    NotPositiveDefinite { step: usize, pivot: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("element {element} is degenerate (measure {measure:.3e})")]
    DegenerateElement { element: usize, measure: f64 },

    #[error("element {element} references node {node}, but the mesh has {nodes} nodes")]
    DanglingIndex { element: usize, node: usize, nodes: usize },

    #[error("point {point} lies outside the mesh (nearest element {nearest_element})")]
    PointOutsideMesh { point: usize, nearest_element: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rational approximation did not equioscillate after {iterations} iterations (spread {spread:.3e})")]
    RationalNonConvergence { iterations: usize, spread: f64 },

    #[error(
        "{n_y} observations on {n_u} unknowns: the sparse statFEM update needs n_y <= n_u/4 \
         (the observation block is only sparse when n_y << n_u)"
    )]
    TooManyObservations { n_y: usize, n_u: usize },

    #[error("objective was non-finite at every probe (last finite point: {last_finite:?})")]
    NonFiniteObjective { last_finite: Option<Vec<f64>> },

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::RationalNonConvergence { .. }
                | Error::NonFiniteObjective { .. }
                | Error::NotSymmetric { .. }
        )
    }
}
