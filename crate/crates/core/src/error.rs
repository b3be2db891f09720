use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("numeric failure in {context}: {detail}")]
    NumericFailure { context: String, detail: String },

    #[error(
        "singular Sylvester system: eigenvalues {left:e} (row {row}) and {right:e} (col {col}) sum to {sum:e}"
    )]
    SingularSystem {
        row: usize,
        col: usize,
        left: f64,
        right: f64,
        sum: f64,
    },

    #[error("rank-deficient input: numerical rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("feature-sign search did not converge after {steps} steps")]
    NonConvergence {
        steps: usize,
        best: Vec<f64>,
        objective: f64,
    },

    #[error("{path}: parse error at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage} failed ({}iteration {iteration}): {source}", class_prefix(.class))]
    Training {
        stage: &'static str,
        class: Option<usize>,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

fn class_prefix(class: &Option<usize>) -> String {
    class.map(|c| format!("class {c}, ")).unwrap_or_default()
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericFailure {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for failures of the numerical machinery as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NumericFailure { .. }
            | Error::NonFinite(_)
            | Error::SingularSystem { .. }
            | Error::RankDeficient { .. }
            | Error::NonConvergence { .. } => true,
            Error::Training { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
