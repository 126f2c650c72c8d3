use thiserror::Error;

/// Errors raised by the numerical kernels and the orchestration layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("matrix is not Hermitian: max asymmetry {asymmetry:.3e} (tolerance {tolerance:.3e})")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    #[error(
        "square root branch ambiguity: eigenvalue {re:.6e}{im:+.6e}i lies within {tolerance:.1e} of the branch cut"
    )]
    BranchAmbiguity { re: f64, im: f64, tolerance: f64 },

    #[error("degenerate quadratic pencil near root {re:.6e}{im:+.6e}i: {detail}; perturb lambda")]
    DegeneratePencil { re: f64, im: f64, detail: String },

    #[error("point {point:?} outside the domain box: {detail}")]
    Domain { point: Vec<f64>, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ellipticity violated: min eigenvalue {min_eigenvalue:.3e} at x = {x:?}, xi = {xi:?}")]
    Ellipticity {
        min_eigenvalue: f64,
        x: Vec<f64>,
        xi: Vec<f64>,
    },

    #[error("degenerate eigenvalue branch {branch}: gap {gap:.3e}")]
    DegenerateBranch { branch: usize, gap: f64 },

    #[error("Finsler Hessian is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    ConvexityFailure { min_eigenvalue: f64 },

    #[error("flow degeneracy at x = {x:?}, xi = {xi:?}: branch gap {gap:.3e}")]
    FlowDegeneracy { x: Vec<f64>, xi: Vec<f64>, gap: f64 },

    #[error("ill-conditioned matrix: condition number {condition:.3e}")]
    IllConditioned { condition: f64 },

    #[error("resolvent evaluated near the spectrum: {0}")]
    NearSpectrum(String),

    #[error("contour placement error: {0}")]
    ContourPlacement(String),

    #[error("boundary ellipticity failure: {0}")]
    BoundaryEllipticity(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("fit window error: {0}")]
    Window(String),

    #[error("cross-validation failure: {0}")]
    CrossValidation(String),

    #[error("eigensolver failed to converge: {0}")]
    Convergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
