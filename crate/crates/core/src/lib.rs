//! Forward and character-reversed language-model experiments: corpus
//! preparation, byte-level BPE, a GPT-2-style decoder with exact gradients,
//! AdamW training, perplexity-based forced-choice evaluation, and the
//! statistics used to compare forward and backward models.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod report;
pub mod stats;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use corpus::{BenchmarkItem, Corpus, Document, Orientation};
pub use error::{Error, Result};
pub use tokenizer::{TokenSequence, TokenizerModel};
