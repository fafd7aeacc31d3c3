//! leakmeter: residual speaker-identity leakage metrics for de-identified
//! speech.
//!
//! The toolkit works over paired original/anonymized speaker embeddings:
//! it generates verification and identification trial sets from a corpus
//! manifest, scores them, and reports a multi-view metric suite (EER,
//! CMC@k, AUC-CMC, mean rank, canonical correlations, Procrustes
//! alignment error). A seeded synthetic-corpus simulator with controllable
//! leakage serves as the ground-truth oracle for validating the metrics.

pub mod corpus;
pub mod error;
pub mod ident;
pub mod ingest;
pub mod linalg;
pub mod report;
pub mod sim;
pub mod subspace;
pub mod trials;
pub mod verify;

pub use corpus::{
    build_manifest, validate_corpus, Condition, CorpusManifest, DurationClass, EmbeddingMatrix,
    SegmentRecord, ValidationReport,
};
pub use error::{Error, Result};
