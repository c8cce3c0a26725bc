use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes across the library.
///
/// [`Error::kind`] sorts them into input problems and numerical problems,
/// which the CLI maps onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("schema error: missing mandatory column `{column}`")]
    Schema { column: String },

    #[error("row error at line {line}: {message}")]
    Row { line: usize, message: String },

    #[error("cohort is empty after filtering")]
    EmptyCohort,

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("test undefined: {0}")]
    UndefinedTest(String),

    #[error("variant error: {0}")]
    Variant(String),

    #[error("sample too small: need at least {required} observations, got {actual}")]
    SampleSize { required: usize, actual: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("no convergence: {message}")]
    Convergence {
        message: String,
        /// Best parameter vector reached before giving up.
        best: Vec<f64>,
    },

    #[error("support error: {0}")]
    Support(String),

    #[error("binning error: {0}")]
    Binning(String),

    #[error("transform error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Transform {
        /// 1-based data row, when one row is at fault.
        row: Option<usize>,
        message: String,
    },

    #[error("coding error: {0}")]
    Coding(String),

    #[error("formula error: {0}")]
    Formula(String),

    #[error("collinear design columns: {}", columns.join(", "))]
    Collinearity { columns: Vec<String> },

    #[error("monotone likelihood, coefficients diverge: {0}")]
    Divergence(String),

    #[error("linear predictor overflow ({0}); center or rescale the covariates")]
    Rescaling(String),

    #[error("singular information matrix: {0}")]
    Singular(String),

    #[error("stepwise selection stopped after {} step(s): {source}", trace.len())]
    Stepwise {
        /// Removals made before the failure, in order.
        trace: Vec<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("render error: {0}")]
    Render(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Input,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Schema { .. }
            | Error::Row { .. }
            | Error::EmptyCohort
            | Error::UnknownVariable(_)
            | Error::Variant(_)
            | Error::Transform { .. }
            | Error::Coding(_)
            | Error::Formula(_)
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Input,
            Error::Stepwise { source, .. } => source.kind(),
            _ => ErrorKind::Numerical,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
