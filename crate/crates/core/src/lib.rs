//! Two-stage unsupervised domain adaptation for binary misinformation-style
//! text classification.
//!
//! Stage one fits a vector-rescaling correction of the classifier logits on a
//! small labeled target calibration split and uses the corrected, confidence
//! filtered predictions as target pseudo labels. Stage two fine-tunes the
//! source-pretrained classifier on source labels plus pseudo labels while
//! minimizing a class-aware MMD contrastive loss between source and target
//! hidden representations.
//!
//! Module map:
//! - [`data`]: JSONL ingestion, splitting, preprocessing, feature hashing and
//!   a synthetic shifted-domain generator.
//! - [`model`]: hashed-embedding + tanh MLP classifier with manual gradients.
//! - [`correction`]: label-shift correction and pseudo labeling.
//! - [`mmd`]: Gaussian-kernel MMD, class-aware MMD and the contrastive loss.
//! - [`adapt`]: class-aware sampling and the adaptation loop.
//! - [`eval`]: confusion counts, balanced accuracy, F1, accuracy.
//! - [`cli`]: run configuration and the `synth`/`pretrain`/`adapt`/`evaluate`
//!   commands.

pub mod adapt;
pub mod cli;
pub mod correction;
pub mod data;
pub mod error;
pub mod eval;
pub mod mmd;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used everywhere randomness is needed; ChaCha gives the
/// same stream on every platform.
pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
