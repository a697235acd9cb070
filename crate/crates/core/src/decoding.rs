//! Greedy autoregressive generation.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{GenexError, Result};
use crate::model::{decode_batch, encode_batch, encode_input, Bound, EncodedInput, EncoderOut, ModelConfig, ModelParams, Sample};
use crate::tensor::{Graph, Scalar};
use crate::tokenizer::{Vocab, BOS, EOS};

/// Anything that scores the next token given the tokens so far.
pub trait StepModel {
    /// Unnormalised scores over the vocabulary for the token after `prefix`.
    fn next_logits(&mut self, prefix: &[u32]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Maximum generated tokens, EOS excluded.
    pub max_len: usize,
    /// Forbid query token ids in the output.
    pub ban_query_logits: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_len: 16,
            ban_query_logits: false,
        }
    }
}

/// Takes the arg-max token (lowest id on ties) from BOS until EOS or
/// `max_len` tokens. Returned ids exclude BOS and EOS.
pub fn greedy(model: &mut impl StepModel, max_len: usize, banned: &HashSet<u32>) -> Result<Vec<u32>> {
    let mut prefix = vec![BOS];
    for _ in 0..max_len {
        let logits = model.next_logits(&prefix)?;
        let mut best: Option<(u32, f64)> = None;
        for (id, &s) in logits.iter().enumerate() {
            let id = id as u32;
            if banned.contains(&id) || s.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((id, s));
            }
        }
        let (next, _) = best.ok_or_else(|| GenexError::NonFinite("no admissible token".into()))?;
        if next == EOS {
            break;
        }
        prefix.push(next);
    }
    Ok(prefix.split_off(1))
}

/// Steps a trained model over one encoded input.
pub struct ModelStepper<'a, T: Scalar> {
    cfg: &'a ModelConfig,
    graph: Graph<T>,
    bound: Bound,
    enc: EncoderOut,
    /// Cross-attention weights of the last position, per step and decoder layer
    /// (`heads × memory` row-major), when recording.
    pub cross_log: Option<Vec<Vec<Vec<T>>>>,
}

impl<'a, T: Scalar> ModelStepper<'a, T> {
    pub fn new(params: &ModelParams<T>, cfg: &'a ModelConfig, input: &EncodedInput) -> Result<Self> {
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph);
        let enc = encode_batch(&mut graph, &bound, cfg, &[input])?;
        Ok(ModelStepper {
            cfg,
            graph,
            bound,
            enc,
            cross_log: None,
        })
    }

    pub fn recording(mut self) -> Self {
        self.cross_log = Some(Vec::new());
        self
    }

    pub fn memory_mask(&self) -> &[bool] {
        &self.enc.masks[0].dec_cross
    }
}

impl<T: Scalar> StepModel for ModelStepper<'_, T> {
    fn next_logits(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        let dec = decode_batch(&mut self.graph, &self.bound, self.cfg, &self.enc, &[prefix])?;
        let v = self.cfg.vocab_size;
        let lp = self.graph.value(dec.log_probs);
        let last = &lp[(prefix.len() - 1) * v..prefix.len() * v];
        let out = last.iter().map(|x| x.as_f64()).collect();
        if let Some(log) = self.cross_log.as_mut() {
            let t = prefix.len();
            let mut layers = Vec::new();
            for &w in &dec.cross_attn {
                let blocks = self.graph.attention_weights(w).expect("attention node");
                let k = blocks[0][0].len() / t;
                let mut row = Vec::new();
                for head in &blocks[0] {
                    row.extend_from_slice(&head[(t - 1) * k..t * k]);
                }
                layers.push(row);
            }
            log.push(layers);
        }
        Ok(out)
    }
}

fn banned_ids(input: &EncodedInput, opts: &DecodeOptions) -> HashSet<u32> {
    if opts.ban_query_logits {
        input.query_ids.iter().copied().collect()
    } else {
        HashSet::new()
    }
}

fn check_len(cfg: &ModelConfig, opts: &DecodeOptions) -> Result<()> {
    if opts.max_len == 0 || opts.max_len > cfg.max_target_len {
        return Err(GenexError::InvalidInput(format!(
            "max_len {} outside 1..={}",
            opts.max_len, cfg.max_target_len
        )));
    }
    Ok(())
}

pub fn greedy_decode_ids<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &EncodedInput,
    opts: &DecodeOptions,
) -> Result<Vec<u32>> {
    check_len(cfg, opts)?;
    let mut stepper = ModelStepper::new(params, cfg, input)?;
    greedy(&mut stepper, opts.max_len, &banned_ids(input, opts))
}

/// Decodes every input in parallel; results keep input order.
pub fn decode_many<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    inputs: &[EncodedInput],
    opts: &DecodeOptions,
) -> Result<Vec<Vec<u32>>> {
    check_len(cfg, opts)?;
    inputs
        .par_iter()
        .map(|x| greedy_decode_ids(params, cfg, x, opts))
        .collect()
}

/// Fraction of target positions (EOS included) whose arg-max prediction
/// under teacher forcing equals the gold token.
pub fn teacher_forced_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    samples: &[Sample],
) -> Result<f64> {
    let counts: Vec<(usize, usize)> = samples
        .par_chunks(32)
        .map(|chunk| -> Result<(usize, usize)> {
            let mut g = Graph::new();
            let b = params.bind(&mut g);
            let inputs: Vec<&EncodedInput> = chunk.iter().map(|s| &s.input).collect();
            let enc = encode_batch(&mut g, &b, cfg, &inputs)?;
            let dec_in: Vec<&[u32]> = chunk.iter().map(|s| &s.target[..s.target.len() - 1]).collect();
            let dec = decode_batch(&mut g, &b, cfg, &enc, &dec_in)?;
            let lp = g.value(dec.log_probs);
            let v = cfg.vocab_size;
            let gold = chunk.iter().flat_map(|s| s.target[1..].iter());
            let mut hit = 0;
            let mut total = 0;
            for (row, &want) in lp.chunks_exact(v).zip(gold) {
                let mut best = 0;
                for (i, x) in row.iter().enumerate() {
                    if *x > row[best] {
                        best = i;
                    }
                }
                hit += usize::from(best as u32 == want);
                total += 1;
            }
            Ok((hit, total))
        })
        .collect::<Result<_>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    if total == 0 {
        return Err(GenexError::InvalidInput("no samples".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Generates an explanation string for `query` and `document`.
pub fn greedy_decode<T: Scalar>(
    query: &str,
    document: &str,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    opts: &DecodeOptions,
) -> Result<String> {
    if query.trim().is_empty() || document.trim().is_empty() {
        return Err(GenexError::InvalidInput("query and document must be nonempty".into()));
    }
    let input = encode_input(vocab, query, document, cfg)?;
    vocab.decode(&greedy_decode_ids(params, cfg, &input, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>);

    impl StepModel for Fixed {
        fn next_logits(&mut self, _: &[u32]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn constant_top_token_runs_to_max_len() {
        let mut m = Fixed(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 5.0]);
        assert_eq!(greedy(&mut m, 4, &HashSet::new()).unwrap(), vec![7, 7, 7, 7]);
    }

    #[test]
    fn eos_first_gives_empty_output() {
        let mut m = Fixed(vec![0.0, 0.0, 0.0, 9.0, 1.0]);
        assert!(greedy(&mut m, 16, &HashSet::new()).unwrap().is_empty());
    }

    #[test]
    fn ties_go_to_lowest_id_and_bans_apply() {
        let mut m = Fixed(vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        assert_eq!(greedy(&mut m, 2, &HashSet::new()).unwrap(), vec![5, 5]);
        assert_eq!(greedy(&mut m, 2, &HashSet::from([5])).unwrap(), vec![6, 6]);
    }
}
