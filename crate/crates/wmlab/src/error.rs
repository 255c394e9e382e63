use thiserror::Error;

#[derive(Debug, Error)]
pub enum WmError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {index} outside the valid range {lo}..={hi}")]
    TimestepOutOfRange { index: usize, lo: usize, hi: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backward requires a scalar root, got a node of length {0}")]
    NonScalarRoot(usize),
    #[error("attack diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },
    #[error("non-finite latent in PGID stage II, cycle {cycle}")]
    NonFinite { cycle: usize },
    #[error("no threshold satisfies the target: {0}")]
    Unsatisfiable(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("AUC needs both positive and negative samples")]
    SingleClass,
    #[error("PCA input has fewer than two nonzero eigenvalues")]
    RankDeficient,
    #[error("experiment row {row}: {source}")]
    Row {
        row: String,
        #[source]
        source: Box<WmError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = WmError> = std::result::Result<T, E>;
