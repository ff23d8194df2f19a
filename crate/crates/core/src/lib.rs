//! Fully unsupervised sequence recognition: a frame classifier is trained
//! against an N-gram label language model by matching the empirical output
//! distribution across segments, alternating with MAP boundary refinement.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] — synthetic corpora (Markov label process, Gaussian cluster
//!    emissions), dataset I/O, splitting, context windows.
//! 2. [`lm`] — N-gram label language model: counting, smoothing, top-K tables.
//! 3. [`model`] — single-hidden-layer frame classifier with temperature
//!    softmax and exact analytic gradients.
//! 4. [`loss`] — the segmental distribution-matching cost: inter-segment
//!    match against the LM plus intra-segment smoothness.
//! 5. [`trainer`] — momentum-SGD schedule, self-validation model selection,
//!    and the alternating train/refine driver.
//! 6. [`boundary`] — boundary prior detection, beam-search MAP refinement,
//!    segmentation scoring.
//! 7. [`decode`] — frame priors, LM-weighted decoding, FER/FER*/PER metrics.
//! 8. [`selftrain`] — pseudo-label bootstrapping of a fresh classifier.

pub mod boundary;
pub mod corpus;
pub mod decode;
pub mod lm;
pub mod loss;
pub mod model;
pub mod selftrain;
pub mod trainer;

use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed file content; names the offending location.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Inconsistent or unusable data (shape mismatches, missing fields).
    #[error("data error: {0}")]
    Data(String),

    /// A numeric quantity went non-finite during optimization.
    #[error("numeric failure at stage {stage}, epoch {epoch}: {component} is not finite")]
    NonFinite {
        stage: usize,
        epoch: usize,
        component: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
