//! Generating query-focused explanations for search results.
//!
//! The crate covers the full pipeline: weak-supervision data construction,
//! a subword vocabulary, four encoder-decoder variants (with query-attention
//! encoding and query-masked decoding), training, greedy decoding,
//! keyword and perturbation baselines, and BLEU/ROUGE evaluation.

pub mod baselines;
pub mod config;
pub mod datagen;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod selftest;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{GenexError, Result};
