//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(String),

    #[error("bad magic in {path}: expected ATSF, got {found:?}")]
    BadMagic { path: String, found: [u8; 4] },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("row count mismatch: metadata declares {meta_rows} rows, matrix has {matrix_rows}")]
    RowCountMismatch { meta_rows: usize, matrix_rows: usize },

    #[error("row indices in metadata are not a permutation of 0..{rows}: {detail}")]
    RowIndexInvalid { rows: usize, detail: String },

    #[error("non-finite value in feature of image {image_id}")]
    NonFinite { image_id: String },

    #[error("duplicate image id: {0}")]
    DuplicateImageId(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not symmetric (max |m - m^T| = {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },

    #[error("k = {k} out of range; must satisfy 1 <= k <= {max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("alpha = {0} out of range (0, 1]")]
    AlphaOutOfRange(f64),

    #[error("target_dim = {target_dim} too large for {rows} rows of dimension {dim}")]
    TargetDimTooLarge {
        target_dim: usize,
        rows: usize,
        dim: usize,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("instance {0} has no images")]
    InstanceWithoutImages(String),

    #[error("empty class: {0}")]
    EmptyClass(&'static str),

    #[error("attribute matrix has {rows} rows but dataset has {instances} instances")]
    AlignmentMismatch { rows: usize, instances: usize },

    #[error("attribute column {column} has a single sign")]
    SingleSignColumn { column: usize },

    #[error("cannot binarize a vector of length {0}; need at least 2 components")]
    BinarizeTooShort(usize),

    #[error("missing ground truth for query {0}")]
    MissingGroundTruth(String),

    #[error("query {0} has an empty relevant set")]
    EmptyRelevantSet(String),

    #[error("n_relevant must be >= max(1, number of relevant entries); got {0}")]
    BadRelevantCount(usize),

    #[error("empty parameter grid: {0}")]
    EmptyGrid(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("pipeline failure in repeat {repeat}: {source}")]
    RepeatFailed {
        repeat: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
