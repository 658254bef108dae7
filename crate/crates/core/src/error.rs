use thiserror::Error;

pub type Result<T> = std::result::Result<T, TvcmError>;

#[derive(Debug, Error)]
pub enum TvcmError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset contains no observations")]
    EmptyData,

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid basis specification: {0}")]
    InvalidBasis(String),

    #[error("knot placement produced non-increasing knots: {0}")]
    NonIncreasingKnots(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient data: N = {n} observations for p = {p} parameters")]
    InsufficientData { n: usize, p: usize },

    #[error("singular design: condition estimate of Z'WZ is {condition:.3e} (limit 1e12)")]
    SingularDesign { condition: f64 },

    #[error("bootstrap degeneracy: {failures} of {attempts} replicate fits were singular")]
    BootstrapDegeneracy { failures: usize, attempts: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no feasible knot configuration among {candidates} candidates")]
    NoFeasibleConfiguration { candidates: usize },

    #[error("fold {fold} could not be fitted: {source}")]
    FoldFit {
        fold: usize,
        #[source]
        source: Box<TvcmError>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TvcmError {
    /// Short machine-readable tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            TvcmError::Schema(_) => "schema",
            TvcmError::Parse { .. } => "parse",
            TvcmError::EmptyData => "empty_data",
            TvcmError::InvalidData(_) => "invalid_data",
            TvcmError::InvalidBasis(_) => "invalid_basis",
            TvcmError::NonIncreasingKnots(_) => "non_increasing_knots",
            TvcmError::DimensionMismatch(_) => "dimension_mismatch",
            TvcmError::InsufficientData { .. } => "insufficient_data",
            TvcmError::SingularDesign { .. } => "singular_design",
            TvcmError::BootstrapDegeneracy { .. } => "bootstrap_degeneracy",
            TvcmError::Numerical(_) => "numerical",
            TvcmError::NoFeasibleConfiguration { .. } => "no_feasible_configuration",
            TvcmError::FoldFit { .. } => "fold_fit",
            TvcmError::InvalidArgument(_) => "invalid_argument",
            TvcmError::Io(_) => "io",
            TvcmError::Csv(_) => "csv",
            TvcmError::Json(_) => "json",
        }
    }
}
