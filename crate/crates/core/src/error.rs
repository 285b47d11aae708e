use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the exit code the CLI maps them to:
/// configuration (2), data (3), numerical (4), internal (5).
#[derive(Error, Debug)]
pub enum Error {
    // --- configuration / construction ---
    #[error("scale matrix is not symmetric positive definite")]
    InvalidScale,
    #[error("mixture weights must lie in (0,1) and sum to 1 (got sum {sum})")]
    InvalidMixture { sum: f64 },
    #[error("radii schedule must be strictly increasing and positive")]
    InvalidSchedule,
    #[error("Monte Carlo size per shell must be at least 2 (got {n})")]
    InvalidSampleSize { n: usize },
    #[error("weight table must contain at least one shell")]
    EmptyTable,
    #[error("selection uniform must lie strictly in (0,1) (got {u})")]
    InvalidUniform { u: f64 },
    #[error("config error: {0}")]
    Config(String),

    // --- data ---
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },
    #[error("no analytic marginal available for this target")]
    Unsupported,
    #[error("pilot needs at least d+1 = {need} samples (got {got})")]
    InsufficientSamples { need: usize, got: usize },
    #[error("coordinate {coord} has zero variance")]
    DegenerateCoordinate { coord: usize },
    #[error("need at least 10 samples for a KS test (got {got})")]
    TooFewSamples { got: usize },
    #[error("missing artifact: run the `{stage}` stage first")]
    MissingArtifact { stage: &'static str },

    // --- numerical ---
    #[error("scale matrix not SPD even after diagonal jitter")]
    NonSpdScale,
    #[error("shell {shell} too thin for rejection sampling after {attempts} attempts; use thin-shell mode")]
    ShellTooThin { shell: usize, attempts: u64 },
    #[error("shell {shell} carries no mass (all {n} density evaluations were zero)")]
    ZeroMassShell { shell: usize, n: usize },
    #[error("every shell carries zero mass; target degenerate on the shell system")]
    DegenerateTarget,
    #[error("tail not covered after doubling to {shells} shells; widen the schedule")]
    TailNotCovered { shells: usize },
    #[error("minorization constant too small on shell {shell} (p_hat {p_hat:.3e}); refine radii or flatten the target")]
    MinorizationTooSmall { shell: usize, p_hat: f64 },
    #[error("residual rejection sampler on shell {shell} exceeded {trials} trials")]
    ResidualStuck { shell: usize, trials: u64 },
    #[error("state outside shell {shell} (mahalanobis radius {radius})")]
    PreconditionViolated { shell: usize, radius: f64 },
    #[error("non-finite log density at the pilot initial state")]
    BadInit,

    // --- internal / io ---
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 0 success, 2 config, 3 data, 4 numerical, 5 internal.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            InvalidScale | InvalidMixture { .. } | InvalidSchedule | InvalidSampleSize { .. }
            | EmptyTable | InvalidUniform { .. } | Config(_) => 2,
            Dimension { .. } | InvalidData(_) | Data { .. } | Unsupported
            | InsufficientSamples { .. } | DegenerateCoordinate { .. } | TooFewSamples { .. }
            | MissingArtifact { .. } => 3,
            NonSpdScale | ShellTooThin { .. } | ZeroMassShell { .. } | DegenerateTarget
            | TailNotCovered { .. } | MinorizationTooSmall { .. } | ResidualStuck { .. }
            | PreconditionViolated { .. } | BadInit => 4,
            Io(_) | Json(_) => 5,
        }
    }

    /// Short machine-parsable code used as the error-line prefix.
    pub fn code(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            4 => "numerical",
            _ => "internal",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
