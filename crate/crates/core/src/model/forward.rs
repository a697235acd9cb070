use std::sync::Arc;

use super::masks::{build_masks, causal_mask, qattn_mask, MaskSet};
use super::params::Bound;
use super::{EncodedInput, ModelConfig, Sample};
use crate::error::{GenexError, Result};
use crate::tensor::{AttnBlock, AttnLayout, Graph, Scalar, Var};
use crate::tokenizer::{InputSeqs, TokenSeq};

const LN_EPS: f64 = 1e-5;

/// Sinusoidal position table, `len × d` row-major: even columns use sine,
/// odd columns cosine, wavelength `10000^(2i/d)`.
pub fn positional_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len * d);
    for pos in 0..len {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
            out.push(if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

fn embed_rows<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &ModelConfig,
    seqs: &[&[u32]],
    segments: Option<&[&[u8]]>,
    max_len: usize,
) -> Result<Var> {
    let d = cfg.d_model;
    let mut ids = Vec::new();
    let mut pe = Vec::new();
    for s in seqs {
        if s.is_empty() || s.len() > max_len {
            return Err(GenexError::InvalidInput(format!(
                "sequence of {} tokens outside 1..={max_len}",
                s.len()
            )));
        }
        if let Some(&bad) = s.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(GenexError::Index {
                what: "vocabulary",
                index: bad as usize,
                size: cfg.vocab_size,
            });
        }
        ids.extend(s.iter().map(|&id| id as usize));
        pe.extend(positional_encoding(s.len(), d).into_iter().map(T::of));
    }
    let tok = g.embedding(b.var("tok_emb")?, &ids)?;
    let tok = g.scale(tok, T::of((d as f64).sqrt()));
    let pos = g.constant(vec![ids.len(), d], pe)?;
    let mut x = g.add(tok, pos)?;
    if let Some(segs) = segments {
        let seg_ids: Vec<usize> = segs.iter().flat_map(|s| s.iter().map(|&v| v as usize)).collect();
        let seg = g.embedding(b.var("seg_emb")?, &seg_ids)?;
        x = g.add(x, seg)?;
    }
    Ok(g.dropout(x, cfg.dropout))
}

/// Token, position and segment embeddings of stacked sequences.
pub fn embed<T: Scalar>(g: &mut Graph<T>, b: &Bound, cfg: &ModelConfig, seqs: &[&TokenSeq]) -> Result<Var> {
    let ids: Vec<&[u32]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
    let segs: Vec<&[u8]> = seqs.iter().map(|s| s.segments.as_slice()).collect();
    embed_rows(g, b, cfg, &ids, Some(&segs), cfg.max_input_len)
}

fn linear<T: Scalar>(g: &mut Graph<T>, b: &Bound, x: Var, prefix: &str, w: &str, bias: &str) -> Result<Var> {
    let y = g.matmul(x, b.var(&format!("{prefix}.{w}"))?)?;
    g.add_bias(y, b.var(&format!("{prefix}.{bias}"))?)
}

/// Projected multi-head attention; returns the output and the attention node.
fn mha<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    xq: Var,
    xkv: Var,
    layout: Arc<AttnLayout>,
) -> Result<(Var, Var)> {
    let q = linear(g, b, xq, prefix, "wq", "bq")?;
    let k = linear(g, b, xkv, prefix, "wk", "bk")?;
    let v = linear(g, b, xkv, prefix, "wv", "bv")?;
    let a = g.attention(q, k, v, cfg.n_heads, layout)?;
    Ok((linear(g, b, a, prefix, "wo", "bo")?, a))
}

/// `LayerNorm(x + dropout(y))`
fn add_norm<T: Scalar>(g: &mut Graph<T>, b: &Bound, cfg: &ModelConfig, x: Var, y: Var, ln: &str) -> Result<Var> {
    let y = g.dropout(y, cfg.dropout);
    let s = g.add(x, y)?;
    g.layer_norm(s, b.var(&format!("{ln}.g"))?, b.var(&format!("{ln}.b"))?, T::of(LN_EPS))
}

fn ffn<T: Scalar>(g: &mut Graph<T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, b, x, prefix, "w1", "b1")?;
    let h = g.relu(h);
    linear(g, b, h, prefix, "w2", "b2")
}

/// Attention sublayer followed by the feed-forward sublayer, both post-norm.
#[allow(clippy::too_many_arguments)]
fn attn_ffn_layer<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    xq: Var,
    xkv: Var,
    layout: Arc<AttnLayout>,
) -> Result<(Var, Var)> {
    let (a, weights) = mha(g, b, cfg, &format!("{prefix}.attn"), xq, xkv, layout)?;
    let h = add_norm(g, b, cfg, xq, a, &format!("{prefix}.ln1"))?;
    let f = ffn(g, b, &format!("{prefix}.ffn"), h)?;
    Ok((add_norm(g, b, cfg, h, f, &format!("{prefix}.ln2"))?, weights))
}

fn self_attention_layout(lens: &[usize]) -> AttnLayout {
    let mut start = 0;
    let blocks = lens
        .iter()
        .map(|&n| {
            let blk = AttnBlock::full(start, n, start, n);
            start += n;
            blk
        })
        .collect();
    AttnLayout { blocks }
}

/// Encoder states of a packed batch.
#[derive(Clone, Debug)]
pub struct EncoderOut {
    /// Decoder memory rows of all samples, stacked.
    pub memory: Var,
    /// `(first row, rows)` of each sample within `memory`.
    pub memory_spans: Vec<(usize, usize)>,
    pub masks: Vec<MaskSet>,
    /// Shared-encoder outputs for split inputs: query rows and document rows.
    pub z_q: Option<Var>,
    pub z_d: Option<Var>,
    pub enc_attn: Vec<Var>,
    pub qattn_attn: Vec<Var>,
}

/// Runs the variant's encoder over a packed batch.
pub fn encode_batch<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &ModelConfig,
    inputs: &[&EncodedInput],
) -> Result<EncoderOut> {
    if inputs.is_empty() {
        return Err(GenexError::InvalidInput("empty batch".into()));
    }
    let masks: Vec<MaskSet> = inputs.iter().map(|x| build_masks(x, cfg.variant)).collect();
    let mut seqs: Vec<&TokenSeq> = Vec::new();
    for x in inputs {
        match (&x.seqs, cfg.variant.is_split()) {
            (InputSeqs::Split { query, doc }, true) => {
                seqs.push(query);
                seqs.push(doc);
            }
            (InputSeqs::Joint(s), false) => seqs.push(s),
            _ => {
                return Err(GenexError::InvalidInput(format!(
                    "input layout does not match variant {}",
                    cfg.variant
                )))
            }
        }
    }
    let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    let layout = Arc::new(self_attention_layout(&lens));
    let mut x = embed(g, b, cfg, &seqs)?;
    let mut enc_attn = Vec::new();
    for i in 0..cfg.n_layers_enc1 {
        let (h, w) = attn_ffn_layer(g, b, cfg, &format!("enc.{i}"), x, x, layout.clone())?;
        x = h;
        enc_attn.push(w);
    }
    if !cfg.variant.is_split() {
        let mut start = 0;
        let memory_spans = lens
            .iter()
            .map(|&n| {
                let s = (start, n);
                start += n;
                s
            })
            .collect();
        return Ok(EncoderOut {
            memory: x,
            memory_spans,
            masks,
            z_q: None,
            z_d: None,
            enc_attn,
            qattn_attn: Vec::new(),
        });
    }

    // rows alternate query, document per sample
    let (mut q_idx, mut d_idx) = (Vec::new(), Vec::new());
    let mut row = 0;
    for pair in lens.chunks(2) {
        q_idx.extend(row..row + pair[0]);
        row += pair[0];
        d_idx.extend(row..row + pair[1]);
        row += pair[1];
    }
    let z_q = g.gather_rows(x, &q_idx)?;
    let z_d = g.gather_rows(x, &d_idx)?;
    let total_q = q_idx.len();
    // key/value rows per sample: its query rows then its document rows
    let mut kv_idx = Vec::with_capacity(total_q + d_idx.len());
    let mut blocks = Vec::with_capacity(inputs.len());
    let mut memory_spans = Vec::with_capacity(inputs.len());
    let (mut q_off, mut d_off) = (0, 0);
    for pair in lens.chunks(2) {
        let (m, n) = (pair[0], pair[1]);
        let k_start = kv_idx.len();
        kv_idx.extend(q_off..q_off + m);
        kv_idx.extend(total_q + d_off..total_q + d_off + n);
        blocks.push(AttnBlock {
            q_start: d_off,
            q_len: n,
            k_start,
            k_len: m + n,
            allowed: qattn_mask(m, n),
        });
        memory_spans.push((d_off, n));
        q_off += m;
        d_off += n;
    }
    let qlayout = Arc::new(AttnLayout { blocks });
    let mut h = z_d;
    let mut qattn_attn = Vec::new();
    for i in 0..cfg.qattn_layers() {
        let cat = g.concat_rows(&[z_q, h])?;
        let kv = g.gather_rows(cat, &kv_idx)?;
        let (out, w) = attn_ffn_layer(g, b, cfg, &format!("qattn.{i}"), h, kv, qlayout.clone())?;
        h = out;
        qattn_attn.push(w);
    }
    Ok(EncoderOut {
        memory: h,
        memory_spans,
        masks,
        z_q: Some(z_q),
        z_d: Some(z_d),
        enc_attn,
        qattn_attn,
    })
}

#[derive(Clone, Debug)]
pub struct DecoderOut {
    /// Log-probabilities, one row per target input position, samples stacked.
    pub log_probs: Var,
    /// `(first row, rows)` of each sample within `log_probs`.
    pub spans: Vec<(usize, usize)>,
    pub self_attn: Vec<Var>,
    pub cross_attn: Vec<Var>,
}

/// Teacher-forced decoder over `targets` (each starting with BOS).
pub fn decode_batch<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &ModelConfig,
    enc: &EncoderOut,
    targets: &[&[u32]],
) -> Result<DecoderOut> {
    if targets.len() != enc.memory_spans.len() {
        return Err(GenexError::Shape {
            op: "decode_batch",
            left: vec![targets.len()],
            right: vec![enc.memory_spans.len()],
        });
    }
    let mut self_blocks = Vec::with_capacity(targets.len());
    let mut cross_blocks = Vec::with_capacity(targets.len());
    let mut spans = Vec::with_capacity(targets.len());
    let mut start = 0;
    for ((t, &(m_start, m_len)), masks) in targets.iter().zip(&enc.memory_spans).zip(&enc.masks) {
        let n = t.len();
        self_blocks.push(AttnBlock {
            q_start: start,
            q_len: n,
            k_start: start,
            k_len: n,
            allowed: causal_mask(n),
        });
        cross_blocks.push(AttnBlock {
            q_start: start,
            q_len: n,
            k_start: m_start,
            k_len: m_len,
            allowed: masks.dec_cross.repeat(n),
        });
        spans.push((start, n));
        start += n;
    }
    let self_layout = Arc::new(AttnLayout { blocks: self_blocks });
    let cross_layout = Arc::new(AttnLayout { blocks: cross_blocks });
    let mut y = embed_rows(g, b, cfg, targets, None, cfg.max_target_len)?;
    let (mut self_attn, mut cross_attn) = (Vec::new(), Vec::new());
    for i in 0..cfg.n_layers_dec {
        let (a, w) = mha(g, b, cfg, &format!("dec.{i}.self"), y, y, self_layout.clone())?;
        y = add_norm(g, b, cfg, y, a, &format!("dec.{i}.ln1"))?;
        self_attn.push(w);
        let (c, w) = mha(g, b, cfg, &format!("dec.{i}.cross"), y, enc.memory, cross_layout.clone())?;
        y = add_norm(g, b, cfg, y, c, &format!("dec.{i}.ln2"))?;
        cross_attn.push(w);
        let f = ffn(g, b, &format!("dec.{i}.ffn"), y)?;
        y = add_norm(g, b, cfg, y, f, &format!("dec.{i}.ln3"))?;
    }
    let logits = linear(g, b, y, "out", "w", "b")?;
    Ok(DecoderOut {
        log_probs: g.log_softmax(logits),
        spans,
        self_attn,
        cross_attn,
    })
}

/// Label-smoothed cross-entropy averaged over every target position in the batch.
pub fn batch_loss<T: Scalar>(g: &mut Graph<T>, b: &Bound, cfg: &ModelConfig, samples: &[&Sample]) -> Result<Var> {
    let inputs: Vec<&EncodedInput> = samples.iter().map(|s| &s.input).collect();
    let enc = encode_batch(g, b, cfg, &inputs)?;
    let mut dec_in = Vec::with_capacity(samples.len());
    let mut gold = Vec::new();
    for s in samples {
        if s.target.len() < 2 {
            return Err(GenexError::InvalidInput("target needs BOS and EOS".into()));
        }
        dec_in.push(&s.target[..s.target.len() - 1]);
        gold.extend(s.target[1..].iter().map(|&t| t as usize));
    }
    let dec = decode_batch(g, b, cfg, &enc, &dec_in)?;
    g.cross_entropy_smoothed(dec.log_probs, &gold, cfg.label_smoothing)
}
