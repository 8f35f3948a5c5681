use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    #[error("invalid frame count: {0}")]
    InvalidFrameCount(String),

    #[error("manifest parse error: {0}")]
    ManifestParse(String),

    #[error("weight shape mismatch for {node}.{weight}: {detail}")]
    WeightShapeMismatch {
        node: String,
        weight: String,
        detail: String,
    },

    #[error("missing weight blob {path}")]
    MissingWeightBlob { path: PathBuf },

    #[error("graph contains a cycle through node {0}")]
    CyclicGraph(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("rule {rule} cannot be applied to a {kind} layer")]
    UnsupportedRuleForLayer { rule: String, kind: String },

    #[error("negative relevance {value} at frame {index}")]
    NegativeRelevance { index: usize, value: f64 },

    #[error("no frame has a positive logit")]
    NoPositiveLogit,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("rate mismatch: {0}")]
    RateMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid k={k} for {classes} classes")]
    InvalidK { k: usize, classes: usize },

    #[error("window [{l}, {r}] is invalid for frame {i} of {n}")]
    WindowOutOfRange { i: usize, l: usize, r: usize, n: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid rule configuration: {0}")]
    RuleConfig(String),

    #[error("invalid file format in {path}: {detail}")]
    InvalidFormat { path: PathBuf, detail: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable name used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::InvalidFrameCount(_) => "InvalidFrameCount",
            Error::ManifestParse(_) => "ManifestParseError",
            Error::WeightShapeMismatch { .. } => "WeightShapeMismatch",
            Error::MissingWeightBlob { .. } => "MissingWeightBlob",
            Error::CyclicGraph(_) => "CyclicGraph",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::UnsupportedRuleForLayer { .. } => "UnsupportedRuleForLayer",
            Error::NegativeRelevance { .. } => "NegativeRelevance",
            Error::NoPositiveLogit => "NoPositiveLogit",
            Error::EmptyInput(_) => "EmptyInput",
            Error::RateMismatch(_) => "RateMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::InvalidK { .. } => "InvalidK",
            Error::WindowOutOfRange { .. } => "WindowOutOfRange",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::RuleConfig(_) => "RuleConfigError",
            Error::InvalidFormat { .. } => "InvalidFormat",
            Error::Io { .. } => "IOFailure",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
