use thiserror::Error;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("query budget exceeded: {0}")]
    Budget(String),
    #[error("{failed} of {total} checks failed")]
    CheckFailed { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] revdiff::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        use revdiff::Error as E;
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Budget(_) => EXIT_BUDGET,
            Self::CheckFailed { .. } => EXIT_CHECK,
            Self::Core(e) => match e {
                E::Config(_)
                | E::DimensionMismatch { .. }
                | E::InvalidMixture(_)
                | E::NotPositiveDefinite { .. }
                | E::MissingGradient
                | E::Json(_) => EXIT_CONFIG,
                E::BudgetOverflow(_) => EXIT_BUDGET,
                _ => EXIT_OTHER,
            },
            Self::Io(_) | Self::Csv(_) | Self::Json(_) => EXIT_OTHER,
        }
    }
}
