//! Source-free continual domain adaptation on frozen embeddings.
//!
//! Embeddings are lifted with random Fourier features ([`rff`]) and
//! classified by a streaming kernel LDA ([`klda`]) whose class statistics
//! never change once their task has passed. Unlabeled target tasks are
//! pseudo-labeled by fusing the source model with a zero-shot branch and
//! weighting each sample by its prediction entropy ([`fusion`]), optionally
//! augmented by Haar high-band edits ([`fap`]). [`pipeline`] runs the whole
//! stream, [`storage`] holds the file formats and [`cli`] the command line.

pub mod cli;
pub mod error;
pub mod fap;
pub mod fusion;
pub mod klda;
pub mod pipeline;
pub mod rff;
pub mod rng;
pub mod storage;
pub mod synth;

pub use error::{Error, Result};
