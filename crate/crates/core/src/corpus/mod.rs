//! Synthetic corpus generation, feature-file persistence, manifests, and
//! dataset partitioning.

pub mod manifest;
pub mod partition;
pub mod seqf;
pub mod synth;

pub use manifest::{Domain, Manifest, ManifestRow, PartitionSet};
pub use partition::{partition, PartitionPlan, SubsetSpec, FRAMES_PER_HOUR};
pub use seqf::{read_features, write_features};
pub use synth::{synth_corpus, CorpusSpec, GroundTruth, UttTruth};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported version {version} in {path}")]
    BadVersion { path: String, version: u32 },
    #[error("truncated file {0}")]
    Truncated(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("duplicate utterance id {0}")]
    DuplicateUtt(String),
    #[error("invalid corpus spec: {0}")]
    BadSpec(String),
    #[error("invalid Markov chain: {0}")]
    InvalidMarkov(String),
    #[error("unknown subset {0:?}")]
    UnknownSubset(String),
    #[error("infeasible partition plan: {0}")]
    InfeasiblePlan(String),
}
