use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at {line}:{col}: {message}")]
    Parse {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid diffusion: {0}")]
    InvalidSpec(String),
    #[error("fundamental solutions did not converge: {0}")]
    NonConvergence(String),
    #[error("degenerate bracket: a = {a}, b = {b}")]
    DegenerateBracket { a: f64, b: f64 },
    #[error("divergent integral: {0}")]
    DivergentIntegral(String),
    #[error("plateau violation on [{a}, {b}]: max relative deviation {deviation:e}")]
    PlateauViolation { a: f64, b: f64, deviation: f64 },
    #[error("unsupported boundary combination: {0}")]
    UnsupportedBoundaryCombination(String),
    #[error("control assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("derivative unavailable: {0}")]
    DerivativeUnavailable(String),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("monte carlo horizon exhausted: {0}")]
    HorizonExhausted(String),
    #[error("monte carlo did not converge: {0}")]
    McNonConvergence(String),
    #[error("golden mismatch in example {example}: {diff}")]
    GoldenMismatch { example: u32, diff: String },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::InvalidSpec(_) => 2,
            Error::UnsupportedBoundaryCombination(_) | Error::AssumptionViolated(_) => 2,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
