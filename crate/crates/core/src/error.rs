use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradselError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("subset of size {size} exceeds layout capacity k_max = {k_max}")]
    OversizeSubset { size: usize, k_max: usize },
    #[error("invalid subset: {0}")]
    InvalidSubset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("anchor embedding has zero norm")]
    ZeroAnchorNorm,
    #[error("label {value} is outside the domain of the logistic loss (expected 0 or 1)")]
    LabelDomain { value: f64 },
    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },
    #[error("coverage is infeasible: m·k = {m}·{k} < n_demo = {n_demo}")]
    InfeasibleCoverage { m: usize, k: usize, n_demo: usize },
    #[error("at least one anchor cache is required")]
    EmptyAnchors,
    #[error("caches were built with a different layout or projection")]
    LayoutMismatch,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GradselError> = std::result::Result<T, E>;
