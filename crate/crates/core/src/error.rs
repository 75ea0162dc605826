use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record `{id}` has {found} features, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("record `{id}` references unknown class `{class_id}`")]
    UnknownClass { id: String, class_id: String },

    #[error("unknown class `{0}`")]
    NoSuchClass(String),

    #[error("unknown image `{0}`")]
    UnknownImage(String),

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("record `{0}` has no descriptions")]
    NoDescriptions(String),

    #[error("corpus has no oracle attributes (not a synthetic corpus)")]
    NotSynthetic,

    #[error("no alternative modifiers for `{0}`")]
    NoAlternative(String),

    #[error("head noun `{0}` is not in the attribute inventory")]
    HeadUnknown(String),

    #[error("phrase `{0}` has no modifiers")]
    Unmodified(String),

    #[error("no training pairs")]
    EmptyPairs,

    #[error("loss became non-finite at epoch {epoch}; try a lower learning rate")]
    NonFiniteLoss { epoch: usize },

    #[error("feature vector has dimension {found}, model expects {expected}")]
    FeatureDim { expected: usize, found: usize },

    #[error("candidate pool for class `{0}` is empty")]
    EmptyPool(String),

    #[error("corpus needs at least two classes")]
    SingleClass,

    #[error("no explanations to evaluate")]
    EmptyExplanations,

    #[error("grounding backend: {0}")]
    Grounding(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("model format: {0}")]
    Format(String),

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
}
