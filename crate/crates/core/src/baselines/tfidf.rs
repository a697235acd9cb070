use std::collections::{BTreeMap, HashMap, HashSet};

use super::analyze;
use crate::error::{GenexError, Result};

/// Scores a query against a document, both as analyzed terms.
pub trait Ranker: Sync {
    fn score(&self, query: &[String], doc: &[String]) -> f64;
}

impl<F> Ranker for F
where
    F: Fn(&[String], &[String]) -> f64 + Sync,
{
    fn score(&self, query: &[String], doc: &[String]) -> f64 {
        self(query, doc)
    }
}

/// Document frequencies over a corpus; ranks by tf·idf cosine.
#[derive(Clone, Debug, PartialEq)]
pub struct TfIdfIndex {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl TfIdfIndex {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>) -> Result<TfIdfIndex> {
        let mut n_docs = 0;
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            n_docs += 1;
            let unique: HashSet<String> = analyze(doc).into_iter().collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(GenexError::InvalidInput("tf-idf index needs at least one document".into()));
        }
        Ok(TfIdfIndex { n_docs, df })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// `ln(N / df)`, with unseen terms counted as occurring once.
    pub fn idf(&self, term: &str) -> f64 {
        (self.n_docs as f64 / self.df(term).max(1) as f64).ln()
    }

    /// Raw-count tf times idf, keyed in term order for a stable summation order.
    pub fn vector<'a>(&self, terms: &'a [String]) -> BTreeMap<&'a str, f64> {
        let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
        for t in terms {
            *tf.entry(t).or_default() += 1.0;
        }
        for (t, w) in tf.iter_mut() {
            *w *= self.idf(t);
        }
        tf
    }

    pub fn score_text(&self, query: &str, doc: &str) -> f64 {
        self.score(&analyze(query), &analyze(doc))
    }
}

impl Ranker for TfIdfIndex {
    /// Cosine of the two tf·idf vectors; 0 when either is all zero.
    fn score(&self, query: &[String], doc: &[String]) -> f64 {
        let q = self.vector(query);
        let d = self.vector(doc);
        let dot: f64 = q.iter().filter_map(|(t, w)| d.get(t).map(|v| w * v)).sum();
        let nq = q.values().map(|w| w * w).sum::<f64>().sqrt();
        let nd = d.values().map(|w| w * w).sum::<f64>().sqrt();
        if nq == 0.0 || nd == 0.0 {
            0.0
        } else {
            (dot / (nq * nd)).clamp(0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idf_values() {
        let idx = TfIdfIndex::build(["a b", "a c", "a"]).unwrap();
        assert_eq!(idx.idf("a"), 0.0);
        assert!((idx.idf("b") - 3f64.ln()).abs() < 1e-15);
        assert!((idx.idf("zzz") - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identical_and_disjoint() {
        let idx = TfIdfIndex::build(["x", "y", "z"]).unwrap();
        assert!((idx.score_text("x", "x") - 1.0).abs() < 1e-15);
        assert_eq!(idx.score_text("x", "y"), 0.0);
    }
}
