use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("normal block A_perp_perp is numerically singular (cond = {cond:.3e})")]
    SingularNormalBlock { cond: f64 },

    #[error("coefficient field is not accretive (kappa = {kappa:.3e})")]
    NotAccretive { kappa: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("eigenvector basis too ill-conditioned (cond = {cond:.3e})")]
    DefectiveSpectrum { cond: f64 },

    #[error("eigenvalue {re:.3e}{im:+.3e}i lies in the kernel gap annulus")]
    GapViolation { re: f64, im: f64 },

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("sign of t ({t}) is inconsistent with the requested side")]
    SideMismatch { t: f64 },

    #[error("vector does not lie in the requested spectral subspace (residual {residual:.3e})")]
    NotInSector { residual: f64 },

    #[error("operator not invertible on mean-zero fields (sigma_min = {sigma_min:.3e}, norm = {norm:.3e})")]
    NotInvertible { sigma_min: f64, norm: f64 },

    #[error("Laplace kernel evaluated at its pole")]
    PoleEvaluation,

    #[error("dual pairing is degenerate (sigma_min = {sigma_min:.3e}, dims {plus} vs {minus})")]
    DegenerateDualPairing { sigma_min: f64, plus: usize, minus: usize },

    #[error("shear profile moves more than one cell per grid step (max step {step:.3e}, cell {cell:.3e})")]
    ShearUnresolved { step: f64, cell: f64 },

    #[error("t-quadrature tail {tail:.3e} exceeds 10% of the integral {total:.3e}")]
    TailNotConverged { tail: f64, total: f64 },

    #[error("invalid config field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error("baseline config hash {baseline} does not match {current}")]
    BaselineMismatch { baseline: String, current: String },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid { field: field.into(), message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
