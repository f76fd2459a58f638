//! Risk detection from a user's set of writings with per-writing mLSTM
//! encoders and attention over writings.

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod metrics;
pub mod mlstm;
pub mod models;
pub mod numcore;
pub mod training;

pub use error::{Error, Result};

use rand::SeedableRng;

/// The generator used for every seeded operation in the crate.
pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
