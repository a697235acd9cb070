//! Extractive explainers used as baselines: keyword ranking with TextRank and
//! its topic-sensitive form, and perturbation explainers over a TF.IDF ranker.

mod graph;
mod perturb;
mod tfidf;

use std::collections::HashSet;

pub use graph::{pagerank, textrank_keywords, ts_textrank_keywords, PageRank, PageRankOptions, TermGraph};
pub use perturb::{lime_explain, sensitivity_explain, LIME_RIDGE, LIME_SAMPLES};
pub use tfidf::{Ranker, TfIdfIndex};

use crate::datagen::clean_term;

/// Co-occurrence window used when building term graphs.
pub const DEFAULT_WINDOW: usize = 10;

/// A term with its importance.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TermScore {
    pub term: String,
    pub score: f64,
}

/// Lowercased words with edge punctuation stripped.
pub fn analyze(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(clean_term).collect()
}

/// Analyzed words minus stopwords.
pub fn content_terms(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    analyze(text).into_iter().filter(|w| !stopwords.contains(w)).collect()
}

/// Keeps terms scoring at least a tenth of the best, at most three of them,
/// best first. `scores` is in first-occurrence order, which breaks ties.
/// When no score is positive the single best term is returned.
pub fn select_top_tokens(scores: &[TermScore]) -> Vec<String> {
    let Some(max) = scores.iter().map(|s| s.score).reduce(f64::max) else {
        return Vec::new();
    };
    let mut order: Vec<&TermScore> = scores.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    if max <= 0.0 {
        return vec![order[0].term.clone()];
    }
    order
        .into_iter()
        .filter(|s| s.score >= 0.1 * max)
        .take(3)
        .map(|s| s.term.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[(&str, f64)]) -> Vec<TermScore> {
        v.iter()
            .map(|&(t, s)| TermScore {
                term: t.into(),
                score: s,
            })
            .collect()
    }

    #[test]
    fn threshold_and_cap() {
        assert_eq!(select_top_tokens(&scores(&[("a", 10.0), ("b", 5.0), ("c", 0.9)])), ["a", "b"]);
        assert_eq!(
            select_top_tokens(&scores(&[("a", 10.0), ("b", 9.0), ("c", 8.0), ("d", 7.0)])),
            ["a", "b", "c"]
        );
        assert_eq!(select_top_tokens(&scores(&[("x", 0.3)])), ["x"]);
    }

    #[test]
    fn ties_keep_document_order_and_nonpositive_gives_one() {
        assert_eq!(select_top_tokens(&scores(&[("p", 1.0), ("q", 2.0), ("r", 2.0)])), ["q", "r", "p"]);
        assert_eq!(select_top_tokens(&scores(&[("p", -1.0), ("q", 0.0), ("r", 0.0)])), ["q"]);
    }

    #[test]
    fn analysis_strips_punctuation() {
        assert_eq!(analyze("Hello, World! (x)"), ["hello", "world", "x"]);
    }
}
