//! Dialect identification toolkit.
//!
//! The crate trains a factorized hierarchical VAE on pooled unlabeled speech
//! features, extracts its latent segment variable (z1) as a domain-robust
//! feature for an end-to-end CNN dialect classifier, and compares against
//! classical i-vector/IDVC and unsupervised-bottleneck baselines under
//! resource-rich, resource-poor, and incremental-label protocols. Experiments
//! run on synthetic multi-dialect corpora with known generating factors so
//! disentanglement and domain-mismatch behavior can be measured directly.

pub mod corpus;
pub mod checkpoint;
pub mod dsp;
pub mod fhvae;
pub mod linalg;
pub mod numerics;
pub mod metrics;
pub mod probe;
pub mod scores;
