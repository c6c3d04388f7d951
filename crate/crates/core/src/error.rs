use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("rank-deficient regressor (condition estimate {cond:.3e})")]
    RankDeficient { cond: f64 },

    #[error("crosstalk feedback has spectral radius {0:.6} >= 1")]
    UnstableCrosstalk(f64),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("fixed point did not converge in {iterations} iterations (last residual {residual:.3e})")]
    FixedPoint { iterations: usize, residual: f64 },

    #[error("training diverged after {} iterations (relative change grew 5 times in a row)", trace.len())]
    Diverged { trace: Vec<f64> },

    #[error("quadratic form is ill-conditioned (condition {cond:.3e}); set a ridge or enable auto_ridge")]
    IllConditioned { cond: f64 },

    #[error("degenerate linearization constraint (t0 is numerically zero)")]
    DegenerateConstraint,

    #[error("insufficient bandwidth headroom: {0}")]
    Headroom(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
