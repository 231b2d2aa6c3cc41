use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("numerical blow-up at t = {time}: {detail}")]
    NumericalBlowup { time: f64, detail: String },
    #[error("implicit step failed to converge at t = {time} after {sweeps} sweeps (residual {residual:e})")]
    StepFailure {
        time: f64,
        sweeps: usize,
        residual: f64,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("ensemble size {n} exceeds assignment cap {cap}; use the coupling upper bound instead")]
    CapExceeded { n: usize, cap: usize },
    #[error("mixture weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("missing stationary reference ensemble")]
    MissingStationary,
    #[error("mismatched grids: {0}")]
    MismatchedGrid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} does not match supported version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint params hash {found:016x} does not match config hash {expected:016x}")]
    HashMismatch { found: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalBlowup { .. } | Error::StepFailure { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
