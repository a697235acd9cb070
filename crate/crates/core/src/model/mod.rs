//! The four encoder-decoder variants.
//!
//! Batches are packed: rows of all sequences are stacked and attention runs
//! block-wise per sequence, so no padding exists anywhere.

mod config;
mod forward;
mod masks;
mod params;

pub use config::{ModelConfig, Variant};
pub use forward::{
    batch_loss, decode_batch, embed, encode_batch, positional_encoding, DecoderOut, EncoderOut,
};
pub use masks::{build_masks, causal_mask, fallback_count, qattn_mask, MaskSet};
pub use params::{Bound, ModelParams};

use crate::datagen::ExplanationTriple;
use crate::error::{GenexError, Result};
use crate::tokenizer::{layout_ids, InputSeqs, Vocab, BOS, EOS};

/// Model input in the layout its variant expects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    pub seqs: InputSeqs,
    /// Query ids before any separator, used for masking.
    pub query_ids: Vec<u32>,
}

impl EncodedInput {
    pub fn num_tokens(&self) -> usize {
        match &self.seqs {
            InputSeqs::Joint(s) => s.len(),
            InputSeqs::Split { query, doc } => query.len() + doc.len(),
        }
    }
}

/// A training example: input plus `[BOS, e…, EOS]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub input: EncodedInput,
    pub target: Vec<u32>,
}

impl Sample {
    /// Input and target tokens together; the quantity batches are capped on.
    pub fn num_tokens(&self) -> usize {
        self.input.num_tokens() + self.target.len()
    }
}

/// Lays out token ids for `cfg.variant`, truncating the document (and, only
/// if it alone overflows, the query) so every sequence fits `max_input_len`.
pub fn encode_ids(query: &[u32], doc: &[u32], cfg: &ModelConfig) -> Result<EncodedInput> {
    if query.is_empty() || doc.is_empty() {
        return Err(GenexError::InvalidInput("query and document must be nonempty".into()));
    }
    let l = cfg.max_input_len;
    let (q_max, d_max) = if cfg.variant.is_split() {
        (l - 1, l - 1)
    } else {
        let q_max = l - 2;
        (q_max, l - 1 - query.len().min(q_max))
    };
    let q = &query[..query.len().min(q_max)];
    let d = &doc[..doc.len().min(d_max)];
    Ok(EncodedInput {
        seqs: layout_ids(q, d, cfg.variant.scheme())?,
        query_ids: q.to_vec(),
    })
}

pub fn encode_input(vocab: &Vocab, query: &str, doc: &str, cfg: &ModelConfig) -> Result<EncodedInput> {
    encode_ids(&vocab.encode_text(query), &vocab.encode_text(doc), cfg)
}

/// `[BOS, e…, EOS]` with the explanation cut to `max_target_len - 1` tokens.
pub fn encode_target(ids: &[u32], cfg: &ModelConfig) -> Vec<u32> {
    let mut t = vec![BOS];
    t.extend_from_slice(&ids[..ids.len().min(cfg.max_target_len - 1)]);
    t.push(EOS);
    t
}

pub fn encode_sample(vocab: &Vocab, triple: &ExplanationTriple, cfg: &ModelConfig) -> Result<Sample> {
    let input = encode_input(vocab, &triple.query, &triple.document, cfg)?;
    let target = encode_target(&vocab.encode_text(&triple.explanation), cfg);
    if let Some(&bad) = input
        .seqs_ids()
        .chain(target.iter())
        .find(|&&id| id as usize >= cfg.vocab_size)
    {
        return Err(GenexError::Config(format!(
            "token id {bad} exceeds model vocab_size {}",
            cfg.vocab_size
        )));
    }
    Ok(Sample { input, target })
}

/// Encodes many triples in parallel; output order follows input order.
pub fn encode_samples(vocab: &Vocab, triples: &[ExplanationTriple], cfg: &ModelConfig) -> Result<Vec<Sample>> {
    use rayon::prelude::*;
    triples.par_iter().map(|t| encode_sample(vocab, t, cfg)).collect()
}

impl EncodedInput {
    fn seqs_ids(&self) -> Box<dyn Iterator<Item = &u32> + '_> {
        match &self.seqs {
            InputSeqs::Joint(s) => Box::new(s.ids.iter()),
            InputSeqs::Split { query, doc } => Box::new(query.ids.iter().chain(&doc.ids)),
        }
    }
}
