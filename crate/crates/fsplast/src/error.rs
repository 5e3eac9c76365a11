use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular tensor (|det| = {det:e} below threshold)")]
    SingularTensor { det: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("return mapping did not converge at step {step} (residual {residual:e} after {iterations} iterations)")]
    NoConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("singular Newton Jacobian at step {step}")]
    SingularJacobian { step: usize },
    #[error("lateral stretch solve did not converge at step {step}")]
    LateralNoConvergence { step: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("series length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid loading amplitude: {0}")]
    InvalidAmplitude(String),
    #[error("zero flow direction: dissipation invariants need an active plastic flow")]
    ZeroFlowDirection,
    #[error("Ohno-Wang flow inconsistent: vanishing effective stress with active loading")]
    DivisionByZero,
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("series schema version mismatch: found {found:?}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("toml serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
