use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error("no child is educated; the allocation problem is empty")]
    NoEducatedChildren,

    #[error("education budget must be positive, got {0}")]
    NonPositiveBudget(f64),

    #[error("unsupported number of children: {0} (supported: 2 or 3)")]
    UnsupportedFamilySize(usize),

    #[error("empty composition cell(s): {}", .0.join(", "))]
    EmptyCell(Vec<String>),

    #[error("regressor `{regressor}` has no within-group variation or is collinear")]
    Rank { regressor: String },

    #[error("line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("household {household_id}: {message}")]
    Household { household_id: u64, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("allocation at a corner; abilities are only set-identified: a1 in [{lower}, {upper}]")]
    Corner { lower: f64, upper: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("did not converge after {iterations} iterations: {message}")]
    NonConvergence {
        iterations: usize,
        message: String,
        best: Vec<f64>,
        best_value: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for numerical non-convergence, which callers usually report
    /// differently from input validation failures.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }
}
