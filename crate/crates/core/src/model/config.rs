use std::fmt;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::error::{GenexError, Result};
use crate::tokenizer::SegmentScheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Concatenated input, plain encoder-decoder.
    Orig,
    /// Concatenated input with occurrence segments; query tokens hidden from the decoder.
    SegQToks,
    /// Separate encoding plus query attention; decoder sees all document rows.
    SepQDoc,
    /// Separate encoding plus query attention; query tokens hidden from the decoder.
    Genex,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Orig, Variant::SegQToks, Variant::SepQDoc, Variant::Genex];

    pub fn is_split(self) -> bool {
        matches!(self, Variant::SepQDoc | Variant::Genex)
    }

    pub fn scheme(self) -> SegmentScheme {
        match self {
            Variant::Orig => SegmentScheme::Part,
            Variant::SegQToks => SegmentScheme::Occur,
            Variant::SepQDoc | Variant::Genex => SegmentScheme::Split,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Orig => "orig",
            Variant::SegQToks => "seg_q_toks",
            Variant::SepQDoc => "sep_q_doc",
            Variant::Genex => "genex",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = GenexError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| GenexError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_layers_enc1: usize,
    pub n_layers_qattn: usize,
    pub n_layers_dec: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_input_len: usize,
    pub max_target_len: usize,
    pub vocab_size: usize,
    pub label_smoothing: f64,
}

const KEYS: [&str; 13] = [
    "variant",
    "d_model",
    "n_heads",
    "head_dim",
    "n_layers_enc1",
    "n_layers_qattn",
    "n_layers_dec",
    "ffn_dim",
    "dropout",
    "max_input_len",
    "max_target_len",
    "vocab_size",
    "label_smoothing",
];

impl ModelConfig {
    /// Small configuration that trains on one CPU core.
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            variant,
            d_model: 64,
            n_heads: 2,
            head_dim: 32,
            n_layers_enc1: 2,
            n_layers_qattn: 2,
            n_layers_dec: 2,
            ffn_dim: 256,
            dropout: 0.1,
            max_input_len: 256,
            max_target_len: 16,
            vocab_size: 4096,
            label_smoothing: 0.1,
        }
    }

    /// The full-size configuration (768 wide, 8 heads of 96, 6-layer stacks).
    pub fn full(variant: Variant) -> Self {
        ModelConfig {
            variant,
            d_model: 768,
            n_heads: 8,
            head_dim: 96,
            n_layers_enc1: 6,
            n_layers_qattn: 6,
            n_layers_dec: 6,
            ffn_dim: 3072,
            dropout: 0.1,
            max_input_len: 256,
            max_target_len: 16,
            vocab_size: 30522,
            label_smoothing: 0.1,
        }
    }

    /// Gradient-check size: width 8, one layer per stack, no dropout.
    pub fn tiny(variant: Variant, vocab_size: usize) -> Self {
        ModelConfig {
            variant,
            d_model: 8,
            n_heads: 2,
            head_dim: 4,
            n_layers_enc1: 1,
            n_layers_qattn: 1,
            n_layers_dec: 1,
            ffn_dim: 16,
            dropout: 0.0,
            max_input_len: 32,
            max_target_len: 16,
            vocab_size,
            label_smoothing: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GenexError::Config(m));
        if self.n_heads == 0 || self.n_heads * self.head_dim != self.d_model {
            return err(format!(
                "n_heads {} × head_dim {} must equal d_model {}",
                self.n_heads, self.head_dim, self.d_model
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return err(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.max_input_len < 3 || self.max_target_len < 2 {
            return err("max_input_len must be at least 3 and max_target_len at least 2".into());
        }
        if self.vocab_size <= crate::tokenizer::SEP as usize || self.ffn_dim == 0 || self.n_layers_dec == 0 {
            return err("vocab_size, ffn_dim and n_layers_dec must be positive".into());
        }
        Ok(())
    }

    /// Applies recognised keys from `kv` on top of `self`.
    pub fn apply(mut self, kv: &KeyValues) -> Result<Self> {
        if let Some(v) = kv.get_str("variant") {
            self.variant = v.parse()?;
        }
        kv.update("d_model", &mut self.d_model)?;
        kv.update("n_heads", &mut self.n_heads)?;
        kv.update("head_dim", &mut self.head_dim)?;
        kv.update("n_layers_enc1", &mut self.n_layers_enc1)?;
        kv.update("n_layers_qattn", &mut self.n_layers_qattn)?;
        kv.update("n_layers_dec", &mut self.n_layers_dec)?;
        kv.update("ffn_dim", &mut self.ffn_dim)?;
        kv.update("dropout", &mut self.dropout)?;
        kv.update("max_input_len", &mut self.max_input_len)?;
        kv.update("max_target_len", &mut self.max_target_len)?;
        kv.update("vocab_size", &mut self.vocab_size)?;
        kv.update("label_smoothing", &mut self.label_smoothing)?;
        Ok(self)
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let variant = kv
            .get_str("variant")
            .ok_or_else(|| GenexError::Config("missing variant".into()))?
            .parse()?;
        let cfg = Self::desk(variant).apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("variant", self.variant);
        kv.set("d_model", self.d_model);
        kv.set("n_heads", self.n_heads);
        kv.set("head_dim", self.head_dim);
        kv.set("n_layers_enc1", self.n_layers_enc1);
        kv.set("n_layers_qattn", self.n_layers_qattn);
        kv.set("n_layers_dec", self.n_layers_dec);
        kv.set("ffn_dim", self.ffn_dim);
        kv.set("dropout", self.dropout);
        kv.set("max_input_len", self.max_input_len);
        kv.set("max_target_len", self.max_target_len);
        kv.set("vocab_size", self.vocab_size);
        kv.set("label_smoothing", self.label_smoothing);
        kv
    }

    /// Query-attention layers exist only in the split variants.
    pub fn qattn_layers(&self) -> usize {
        if self.variant.is_split() {
            self.n_layers_qattn
        } else {
            0
        }
    }
}
