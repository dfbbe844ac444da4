use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical blow-up at t = {time:.6} (step {step}): {detail}")]
    Blowup {
        time: f64,
        step: u64,
        detail: String,
    },

    #[error(
        "power iteration did not converge after {iterations} iterations \
         (last growth factors {last:.12e}, {previous:.12e})"
    )]
    NoConvergence {
        iterations: usize,
        last: f64,
        previous: f64,
    },

    #[error("zero state not linearly unstable (lambda0 = {lambda0:.6e})")]
    NotUnstable { lambda0: f64 },

    #[error("minimum bracket scan exceeded mu = {limit}")]
    BracketFailed { limit: f64 },

    #[error("no wave below the minimal speed (c = {c:.8}, c* = {c_star:.8})")]
    BelowMinimalSpeed { c: f64, c_star: f64 },

    #[error("iteration failed: {0}")]
    IterationFailed(String),

    #[error("monotone scheme inconsistency: {0}")]
    Monotonicity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
