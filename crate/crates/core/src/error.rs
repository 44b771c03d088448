use thiserror::Error;

#[derive(Debug, Error)]
pub enum HetdimError {
    /// Input rejected at ingestion; the message names the violated condition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// An orbit left the unit box (local map) or a prescribed domain.
    #[error("orbit left the domain at step {step}: {detail}")]
    Domain { step: usize, detail: String },

    /// A point failed to follow the required itinerary between Pi0 and Pi1.
    #[error("itinerary violated: {0}")]
    Itinerary(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A numerical computation finished but produced an unusable result.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HetdimError {
    pub fn validation(msg: impl Into<String>) -> Self {
        HetdimError::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        HetdimError::Numeric(msg.into())
    }

    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            HetdimError::Validation(_) | HetdimError::Json(_) | HetdimError::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HetdimError>;
