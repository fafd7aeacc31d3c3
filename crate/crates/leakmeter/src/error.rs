//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by corpus handling, file formats, trial generation and
/// the metric kernels.
#[derive(Debug, Error)]
pub enum Error {
    // -- corpus ------------------------------------------------------------
    #[error("duplicate segment_id in manifest: {0}")]
    DuplicateSegmentId(String),
    #[error("original segment {0} carries a profile_id")]
    ProfileOnOriginal(String),
    #[error("de-identified segment {0} is missing a profile_id")]
    MissingProfileId(String),
    #[error("empty record list")]
    EmptyManifest,

    // -- embedding container ------------------------------------------------
    #[error("bad magic bytes (expected XVEC)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("non-finite value at row {row} ({id:?})")]
    NonFiniteValue { row: usize, id: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parse failure: {0}")]
    ParseFailure(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },

    // -- trial generation ----------------------------------------------------
    #[error("no qualifying segments for scenario {0}")]
    EmptyScenario(String),

    // -- scoring / EER --------------------------------------------------------
    #[error("zero-norm vector ({0})")]
    ZeroNormVector(String),
    #[error("trial references unknown segment_id {0}")]
    MissingEmbedding(String),
    #[error("score set is missing a class: {0}")]
    DegenerateLabels(String),

    // -- identification --------------------------------------------------------
    #[error("probe speaker {0} has no gallery entry")]
    ProbeWithoutGalleryIdentity(String),
    #[error("rank {k} out of range [1, {g}]")]
    RankOutOfRange { k: usize, g: usize },

    // -- subspace kernel ---------------------------------------------------------
    #[error("SVD did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("rank-deficient covariance with ridge disabled: {0}")]
    RankDeficient(String),
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    // -- simulator / evaluation -----------------------------------------------
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid evaluation config: {0}")]
    ConfigInvalid(String),
    #[error("corpus failed validation: {0}")]
    CorpusInvalid(String),
}

impl Error {
    /// Wraps an i/o error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
