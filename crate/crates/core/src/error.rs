use thiserror::Error;

use crate::attention::ProjectionReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("spectral norm did not converge after {iterations} iterations (last estimate {estimate})")]
    SpectralNotConverged { iterations: usize, estimate: f64 },

    #[error(
        "projection did not converge after {} cycles (row-sum violation {:e}, asymmetry {:e})",
        .0.iterations_used, .0.max_row_sum_violation, .0.max_asymmetry
    )]
    ProjectionNotConverged(ProjectionReport),

    #[error("singular system: condition estimate {condition:e}")]
    Singular { condition: f64 },

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("{path}: parse error at row {row}, column {column}: {detail}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        detail: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("sample alignment failed for {path}: missing ids [{}], unexpected ids [{}]", .missing.join(", "), .unexpected.join(", "))]
    Alignment {
        path: String,
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("model container: {0}")]
    Container(String),

    #[error("config digest mismatch: model {expected}, dataset {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures of the numerics (divergence, non-convergence,
    /// singular systems) as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SpectralNotConverged { .. }
                | Error::ProjectionNotConverged(_)
                | Error::Singular { .. }
                | Error::Divergence { .. }
                | Error::DegenerateEmbedding(_)
                | Error::DegenerateProjection(_)
                | Error::Evaluation(_)
        )
    }
}
