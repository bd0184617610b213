use thiserror::Error;

/// Problems with an input file.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("row {row}, column \"{column}\": cannot parse \"{value}\" as a number")]
    ParseError { row: usize, column: String, value: String },

    #[error("row {row}, column \"{column}\": missing value")]
    MissingValue { row: usize, column: String },

    #[error("{}: found {found} rows, need at least {needed}", group.as_deref().map_or("sample".to_string(), |g| format!("group \"{g}\"")))]
    TooFewRows { group: Option<String>, found: usize, needed: usize },

    #[error("group label \"{label}\" not found; labels present: {}", available.join(", "))]
    UnknownGroupLabel { label: String, available: Vec<String> },

    #[error("column \"{0}\" not found")]
    MissingColumn(String),

    #[error("no measurement columns")]
    NoNumericColumns,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Compute(#[from] eminp::Error),

    #[error("output failed: {0}")]
    Output(String),
}

impl CliError {
    /// 2 for configuration errors, 3 for data errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use eminp::Error as E;
        match self {
            CliError::Validation(_) => 2,
            CliError::Data(_) => 3,
            CliError::Compute(e) => match e {
                E::InvalidParameter(_) | E::IncompatiblePlan(_) | E::TooManyHypotheses { .. } | E::Domain(_) => 2,
                E::DegenerateSample(_) | E::NotPositiveDefinite { .. } => 3,
                _ => 1,
            },
            CliError::Output(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
