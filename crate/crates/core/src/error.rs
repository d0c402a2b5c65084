use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid polygon or mesh geometry.
    #[error("invalid domain: {0}")]
    Domain(String),

    /// Mesh connectivity violates conformity.
    #[error("nonconforming mesh: {0}")]
    NonConforming(String),

    /// Malformed mesh or field file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Vector/operator/mesh size mismatch.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Iterative solver did not reach the requested residual.
    #[error("solver did not converge after {iters} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iters: usize, residual: f64 },

    /// A NaN or infinity showed up where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Diffusion coefficient dropped below its validated floor.
    #[error("kappa = {value:.6e} below floor {floor:.6e} at node {node}")]
    CoefficientFloor { node: usize, value: f64, floor: f64 },

    /// Invalid parameter passed to a constructor.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Run configuration file problem (bad key, bad value, missing key).
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
