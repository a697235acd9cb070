use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use super::{clean_term, porter_stem, TokenCounter};
use crate::error::{GenexError, Result};

/// Cosine similarity at or above which a sentence counts as query-related.
pub const SIMILARITY_THRESHOLD: f64 = 0.8;

/// Word vectors keyed by lowercase token.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(vectors: HashMap<String, Vec<f32>>) -> Result<Self> {
        let dim = vectors.values().next().map_or(0, Vec::len);
        if vectors.values().any(|v| v.len() != dim) {
            return Err(GenexError::Data("embedding vectors differ in length".into()));
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    /// Parses `token v1 v2 … vk` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let v: std::result::Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
            let v = v.map_err(|e| GenexError::Data(format!("embedding line {}: {e}", i + 1)))?;
            vectors.insert(token.to_lowercase(), v);
        }
        Self::new(vectors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GenexError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (x, y) = (self.vectors.get(a)?, self.vectors.get(b)?);
        let dot: f64 = x.iter().zip(y).map(|(&p, &q)| f64::from(p) * f64::from(q)).sum();
        let nx: f64 = x.iter().map(|&p| f64::from(p).powi(2)).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|&p| f64::from(p).powi(2)).sum::<f64>().sqrt();
        (nx > 0.0 && ny > 0.0).then(|| dot / (nx * ny))
    }
}

/// Splits after `.`, `!` or `?` when followed by whitespace and an uppercase letter.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j].1.is_uppercase() {
                let end = pos + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = chars[j].0;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Condenses `doc` to at most `cap` tokens of whole sentences, favouring
/// sentences related to `query`.
///
/// Sentences containing a query term after Porter stemming are selected,
/// as are sentences whose best embedding cosine to a query term reaches
/// [`SIMILARITY_THRESHOLD`] (only with a table). If the selection fits,
/// remaining sentences are tried by descending best similarity (document
/// order on ties), each added when it still fits. Output keeps document order.
pub fn query_biased_summary(
    doc: &str,
    query: &str,
    embeddings: Option<&EmbeddingTable>,
    cap: usize,
    counter: TokenCounter<'_>,
) -> Result<String> {
    if doc.trim().is_empty() {
        return Err(GenexError::InvalidInput("empty document".into()));
    }
    let sentences = split_sentences(doc);
    let q_terms: Vec<String> = query.split_whitespace().filter_map(clean_term).collect();
    let q_stems: HashSet<String> = q_terms.iter().map(|t| porter_stem(t)).collect();

    let mut selected = Vec::with_capacity(sentences.len());
    let mut similarity = Vec::with_capacity(sentences.len());
    for s in &sentences {
        let terms: Vec<String> = s.split_whitespace().filter_map(clean_term).collect();
        let exact = terms.iter().any(|t| q_stems.contains(&porter_stem(t)));
        let best = embeddings
            .and_then(|table| {
                q_terms
                    .iter()
                    .flat_map(|q| terms.iter().filter_map(move |t| table.cosine(q, t)))
                    .reduce(f64::max)
            })
            .unwrap_or(0.0);
        let similar = embeddings.is_some() && best >= SIMILARITY_THRESHOLD;
        selected.push(exact || similar);
        similarity.push(best);
    }
    let lengths: Vec<usize> = sentences.iter().map(|s| counter.count(s)).collect();
    let mut chosen = vec![false; sentences.len()];
    let mut total = 0;
    let selected_len: usize = (0..sentences.len()).filter(|&i| selected[i]).map(|i| lengths[i]).sum();
    if selected_len <= cap {
        for i in (0..sentences.len()).filter(|&i| selected[i]) {
            chosen[i] = true;
        }
        total = selected_len;
        let mut rest: Vec<usize> = (0..sentences.len()).filter(|&i| !selected[i]).collect();
        rest.sort_by(|&a, &b| similarity[b].total_cmp(&similarity[a]).then(a.cmp(&b)));
        for i in rest {
            if total + lengths[i] <= cap {
                chosen[i] = true;
                total += lengths[i];
            }
        }
    } else {
        for i in (0..sentences.len()).filter(|&i| selected[i]) {
            if total + lengths[i] > cap {
                break;
            }
            chosen[i] = true;
            total += lengths[i];
        }
    }
    if total == 0 {
        // no whole sentence fits: keep the leading words
        let mut words = Vec::new();
        let mut used = 0;
        for w in doc.split_whitespace() {
            let n = counter.count(w);
            if used + n > cap {
                break;
            }
            used += n;
            words.push(w);
        }
        return Ok(words.join(" "));
    }
    Ok(sentences
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c)
        .map(|(s, _)| s.as_str())
        .collect::<Vec<_>>()
        .join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    const WS: TokenCounter<'static> = TokenCounter::Whitespace;

    #[test]
    fn sentence_splitting() {
        let s = split_sentences("One two. Three four! five six. Seven? eight");
        assert_eq!(s, vec!["One two.", "Three four! five six.", "Seven? eight"]);
    }

    #[test]
    fn stem_match_selects_sentence() {
        let doc = "The weather was mild. New taxes took effect. Dogs bark loudly.";
        let out = query_biased_summary(doc, "tax", None, 4, WS).unwrap();
        assert_eq!(out, "New taxes took effect.");
    }

    #[test]
    fn no_match_without_table_keeps_leading_sentences() {
        let doc = "Alpha beta gamma. Delta epsilon zeta. Eta theta iota. Kappa lambda mu.";
        let out = query_biased_summary(doc, "unrelated", None, 7, WS).unwrap();
        assert_eq!(out, "Alpha beta gamma. Delta epsilon zeta.");
    }

    #[test]
    fn oversized_selection_truncates_at_sentence_boundary() {
        let doc = "Tax one two three. Tax four five six. Tax seven eight nine.";
        let out = query_biased_summary(doc, "tax", None, 9, WS).unwrap();
        assert_eq!(out, "Tax one two three. Tax four five six.");
        assert!(out.split_whitespace().count() <= 9);
    }

    #[test]
    fn embedding_similarity_selects_and_orders_fill() {
        let table = EmbeddingTable::parse("car 1 0\nautomobile 0.9 0.1\nvehicle 0.6 0.8\nbanana 0 1\n").unwrap();
        let doc = "Banana bread here. A vehicle passed. The automobile stalled.";
        // automobile is above threshold; vehicle (0.6) ranks ahead of banana for filling
        let out = query_biased_summary(doc, "car", Some(&table), 6, WS).unwrap();
        assert_eq!(out, "A vehicle passed. The automobile stalled.");
    }

    #[test]
    fn empty_document_is_an_error() {
        assert!(query_biased_summary("  ", "q", None, 20, WS).is_err());
    }
}
