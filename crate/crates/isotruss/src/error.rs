use std::fmt;

/// One problem found in a scenario document, located by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    /// Dotted path such as `plant.failures[0].time`; `.` for the document root.
    pub path: String,
    pub kind: SchemaErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaErrorKind {
    Syntax,
    UnknownField,
    TypeMismatch,
    Invariant,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Every schema error found in one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaErrors(pub Vec<SchemaError>);

impl SchemaErrors {
    pub fn single(path: impl Into<String>, kind: SchemaErrorKind, message: impl Into<String>) -> Self {
        Self(vec![SchemaError { path: path.into(), kind, message: message.into() }])
    }

    pub fn paths(&self) -> Vec<&str> {
        self.0.iter().map(|e| e.path.as_str()).collect()
    }
}

impl fmt::Display for SchemaErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaErrors {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error:\n{0}")]
    Schema(#[from] SchemaErrors),

    #[error(transparent)]
    Core(#[from] isotruss_core::Error),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("run log: {0}")]
    RunLog(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
