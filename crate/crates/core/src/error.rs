use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: cannot rearrange {from} elements into shape {to:?}")]
    ElementCount {
        op: &'static str,
        from: usize,
        to: Vec<usize>,
    },

    #[error("{op}: axis {axis} is out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("bag contains no patches")]
    EmptyBag,

    #[error("uninformative batch: no events among {0} subjects")]
    UninformativeBatch(usize),

    #[error("no comparable pairs among {0} subjects")]
    NoComparablePairs(usize),

    #[error("cannot stratify constant risks")]
    ConstantRisks,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least {need} patients, have {have}")]
    TooFewPatients { have: usize, need: usize },

    #[error("training requires paired modalities: patient {0} has no genomic vector")]
    MissingGenomic(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: u64,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by the inputs'
    /// content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
