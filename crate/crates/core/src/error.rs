use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("invalid material field: {0}")]
    InvalidMaterial(String),

    #[error("invalid boundary conditions: {0}")]
    InvalidBoundary(String),

    #[error("singular system: {null_dim} near-zero pivot(s) in a system of size {size}")]
    SingularSystem { null_dim: usize, size: usize },

    #[error("stale factorization: solution was computed at a different evaluation point")]
    StaleFactorization,

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("covariance factorization failed after nugget {nugget:e}")]
    CovarianceFactorization { nugget: f64 },

    #[error("indefinite precision matrix in {0}")]
    IndefinitePrecision(&'static str),

    #[error("non-finite variational bound: term `{0}` is not finite")]
    NonFiniteBound(&'static str),

    #[error("W is not column-orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("Cayley system singular for step size {0:e}")]
    SingularCayley(f64),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("degenerate covariance in {0}")]
    DegenerateCovariance(&'static str),

    #[error("singular KKT system in Gauss-Newton step")]
    SingularKkt,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all importance weights underflowed")]
    WeightUnderflow,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
