use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid label {label} (class count {class_count})")]
    InvalidLabel { label: usize, class_count: usize },

    #[error("class {class} has no source instances")]
    MissingClass { class: usize },

    #[error("source labels are required")]
    MissingLabels,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {class} is empty in both domains")]
    EmptyClass { class: usize },

    #[error("every class is missing from one of the domains")]
    AllClassesSkipped,

    #[error("singular linear system{}: {hint}", .class.map(|c| format!(" for class {c}")).unwrap_or_default())]
    Singular { class: Option<usize>, hint: String },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn with_class(self, class: usize) -> Self {
        match self {
            Error::Singular { hint, .. } => Error::Singular {
                class: Some(class),
                hint,
            },
            other => other,
        }
    }
}
