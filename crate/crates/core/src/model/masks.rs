use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::config::Variant;
use super::EncodedInput;
use crate::tokenizer::InputSeqs;

static FALLBACKS: AtomicUsize = AtomicUsize::new(0);

/// Number of times a cross-attention mask had to be lifted because it
/// would have hidden every memory position.
pub fn fallback_count() -> usize {
    FALLBACKS.load(Ordering::Relaxed)
}

/// Row-major `n × (m + n)` mask: document row `i` sees every query column
/// and only its own document column `m + i`.
pub fn qattn_mask(m: usize, n: usize) -> Vec<bool> {
    let cols = m + n;
    let mut mask = vec![false; n * cols];
    for i in 0..n {
        mask[i * cols..i * cols + m].fill(true);
        mask[i * cols + m + i] = true;
    }
    mask
}

/// Row-major `t × t` lower-triangular mask.
pub fn causal_mask(t: usize) -> Vec<bool> {
    (0..t * t).map(|k| k % t <= k / t).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    /// `Some((m, n))` for split inputs: query-attention layers use [`qattn_mask`].
    pub qattn: Option<(usize, usize)>,
    /// One flag per decoder memory position.
    pub dec_cross: Vec<bool>,
    /// True when every memory position would have been masked and all were re-allowed.
    pub fallback: bool,
}

impl MaskSet {
    pub fn qattn_mask(&self) -> Option<Vec<bool>> {
        self.qattn.map(|(m, n)| qattn_mask(m, n))
    }

    pub fn dec_self_mask(target_len: usize) -> Vec<bool> {
        causal_mask(target_len)
    }
}

/// Variant-specific attention masks for one input.
///
/// Decoder memory is the document sequence for split inputs and the whole
/// concatenated sequence otherwise. GENEX hides document positions whose id
/// occurs in the query; SEG_Q_TOKS hides the query part (with its separator)
/// and every position labelled as a query occurrence.
pub fn build_masks(input: &EncodedInput, variant: Variant) -> MaskSet {
    let qset: HashSet<u32> = input.query_ids.iter().copied().collect();
    let (qattn, mut dec_cross) = match &input.seqs {
        InputSeqs::Split { query, doc } => {
            let allowed = match variant {
                Variant::Genex => doc.ids.iter().map(|id| !qset.contains(id)).collect(),
                _ => vec![true; doc.len()],
            };
            (Some((query.len(), doc.len())), allowed)
        }
        InputSeqs::Joint(seq) => {
            let allowed = match variant {
                Variant::SegQToks => {
                    let query_part = input.query_ids.len() + 1;
                    seq.segments
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| i >= query_part && s != 0)
                        .collect()
                }
                _ => vec![true; seq.len()],
            };
            (None, allowed)
        }
    };
    let fallback = !dec_cross.is_empty() && dec_cross.iter().all(|a| !a);
    if fallback {
        FALLBACKS.fetch_add(1, Ordering::Relaxed);
        log::warn!("every memory position is a query token; decoder attends to all of them");
        dec_cross.fill(true);
    }
    MaskSet {
        qattn,
        dec_cross,
        fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::TokenSeq;

    fn split(q: &[u32], d: &[u32]) -> EncodedInput {
        EncodedInput {
            seqs: InputSeqs::Split {
                query: TokenSeq {
                    ids: q.to_vec(),
                    segments: vec![0; q.len()],
                },
                doc: TokenSeq {
                    ids: d.to_vec(),
                    segments: vec![1; d.len()],
                },
            },
            query_ids: q.to_vec(),
        }
    }

    #[test]
    fn genex_hides_query_ids() {
        let m = build_masks(&split(&[7, 9], &[3, 7, 5]), Variant::Genex);
        assert_eq!(m.dec_cross, vec![true, false, true]);
        assert!(!m.fallback);
        let m = build_masks(&split(&[7, 9], &[3, 8, 5]), Variant::Genex);
        assert!(m.dec_cross.iter().all(|&a| a));
    }

    #[test]
    fn fallback_allows_everything() {
        let before = fallback_count();
        let m = build_masks(&split(&[7], &[7, 7]), Variant::Genex);
        assert_eq!(m.dec_cross, vec![true, true]);
        assert!(m.fallback);
        assert!(fallback_count() > before);
    }

    #[test]
    fn qattn_structure() {
        let mask = qattn_mask(2, 3);
        #[rustfmt::skip]
        let expected = [
            true, true, true, false, false,
            true, true, false, true, false,
            true, true, false, false, true,
        ];
        assert_eq!(mask, expected);
    }

    #[test]
    fn causal_structure() {
        assert_eq!(causal_mask(2), vec![true, false, true, true]);
    }
}
