//! Weak-supervision training data: Wikipedia sections, anchor-text facets,
//! query-biased summaries, and a synthetic key-value task.

mod anchor;
mod porter;
mod summary;
mod synth;
mod wiki;

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{GenexError, Result};
use crate::tokenizer::Vocab;

pub use anchor::{build_anchor_triples, AnchorConfig, AnchorStats, DEFAULT_FACET_BLOCKLIST};
pub use porter::porter_stem;
pub use summary::{query_biased_summary, split_sentences, EmbeddingTable, SIMILARITY_THRESHOLD};
pub use synth::{synth_keyvalue_dataset, synth_with_config, synth_word_list, SynthConfig};
pub use wiki::{build_wiki_triples, WikiStats, DEFAULT_STOP_HEADERS};

/// Documents must be strictly longer than this many tokens.
pub const MIN_DOC_TOKENS: usize = 20;
/// Explanations may not exceed this many tokens.
pub const MAX_EXPLANATION_TOKENS: usize = 15;
/// Articles with fewer body characters than this are discarded.
pub const MIN_ARTICLE_CHARS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Wiki,
    Anchor,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationTriple {
    pub query: String,
    pub document: String,
    pub explanation: String,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiSection {
    pub header: String,
    pub body: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiArticle {
    pub title: String,
    pub sections: Vec<WikiSection>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRecord {
    #[serde(rename = "page")]
    pub target_page_id: String,
    #[serde(rename = "anchor")]
    pub anchor_text: String,
}

/// One line of a page-text file: `{"page": id, "text": …}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page: String,
    pub text: String,
}

/// Token counting used by the length gates.
#[derive(Clone, Copy, Debug)]
pub enum TokenCounter<'a> {
    Whitespace,
    Subword(&'a Vocab),
}

impl TokenCounter<'_> {
    pub fn count(&self, text: &str) -> usize {
        match self {
            TokenCounter::Whitespace => text.split_whitespace().count(),
            TokenCounter::Subword(v) => v.count_tokens(text),
        }
    }

    /// Document longer than [`MIN_DOC_TOKENS`], explanation nonempty and at
    /// most [`MAX_EXPLANATION_TOKENS`], query nonempty.
    pub fn passes_gates(&self, t: &ExplanationTriple) -> bool {
        let e = self.count(&t.explanation);
        !t.query.trim().is_empty()
            && self.count(&t.document) > MIN_DOC_TOKENS
            && e >= 1
            && e <= MAX_EXPLANATION_TOKENS
    }
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercase word with surrounding punctuation removed; `None` when nothing is left.
pub fn clean_term(word: &str) -> Option<String> {
    let t: String = word
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    (!t.is_empty()).then_some(t)
}

pub fn default_stopwords() -> HashSet<String> {
    include_str!("../../data/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Reads a one-term-per-line list, lowercasing entries.
pub fn load_word_list(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| GenexError::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Parses JSONL text, keeping per-line failures so callers can count them.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Vec<std::result::Result<T, String>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<std::result::Result<T, String>>> {
    let text = fs::read_to_string(path).map_err(|e| GenexError::io(path, e))?;
    Ok(parse_jsonl(&text))
}

/// Reads JSONL where every line must parse.
pub fn read_jsonl_strict<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(path)?
        .into_iter()
        .map(|r| r.map_err(|e| GenexError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| GenexError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| GenexError::io(path, e))?;
    }
    w.flush().map_err(|e| GenexError::io(path, e))
}
