use std::collections::{BTreeMap, HashMap, HashSet};

use super::{content_terms, TermScore};
use crate::datagen::porter_stem;
use crate::error::{GenexError, Result};

/// Undirected co-occurrence graph over stemmed terms.
#[derive(Clone, Debug, PartialEq)]
pub struct TermGraph {
    /// Stems in first-occurrence order.
    pub terms: Vec<String>,
    /// The first surface form seen for each stem.
    pub surfaces: Vec<String>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl TermGraph {
    /// Links distinct stems appearing fewer than `window` positions apart in
    /// the stopword-free term sequence; each co-occurrence adds 1.
    pub fn build(text: &str, stopwords: &HashSet<String>, window: usize) -> TermGraph {
        let mut terms = Vec::new();
        let mut surfaces = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut seq = Vec::new();
        for w in content_terms(text, stopwords) {
            let stem = porter_stem(&w);
            let id = *index.entry(stem.clone()).or_insert_with(|| {
                terms.push(stem);
                surfaces.push(w);
                terms.len() - 1
            });
            seq.push(id);
        }
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); terms.len()];
        for i in 0..seq.len() {
            for j in i + 1..seq.len().min(i + window.max(1)) {
                let (a, b) = (seq[i], seq[j]);
                if a != b {
                    *acc[a].entry(b).or_default() += 1.0;
                    *acc[b].entry(a).or_default() += 1.0;
                }
            }
        }
        TermGraph {
            terms,
            surfaces,
            adjacency: acc.into_iter().map(|m| m.into_iter().collect()).collect(),
        }
    }

    /// A graph on vertices `v0…` from weighted edges; repeated edges add up.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<TermGraph> {
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(GenexError::InvalidInput(format!("edge ({a}, {b}) outside {n} vertices")));
            }
            if a == b {
                return Err(GenexError::InvalidInput(format!("self-loop at {a}")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(GenexError::InvalidInput(format!("edge weight {w} must be positive")));
            }
            *acc[a].entry(b).or_default() += w;
            *acc[b].entry(a).or_default() += w;
        }
        let terms: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        Ok(TermGraph {
            surfaces: terms.clone(),
            terms,
            adjacency: acc.into_iter().map(|m| m.into_iter().collect()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map_or(0.0, |&(_, w)| w)
    }

    pub fn index_of(&self, stem: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == stem)
    }

    /// Surface terms paired with `scores`, in first-occurrence order.
    pub fn scored(&self, scores: &[f64]) -> Vec<TermScore> {
        self.surfaces
            .iter()
            .zip(scores)
            .map(|(t, &s)| TermScore {
                term: t.clone(),
                score: s,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PageRankOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankOptions {
    fn default() -> Self {
        PageRankOptions {
            damping: 0.85,
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageRank {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted power iteration. Mass on vertices without edges follows the
/// teleport distribution, which is uniform when `teleport` is `None`.
pub fn pagerank(g: &TermGraph, teleport: Option<&[f64]>, opts: &PageRankOptions) -> Result<PageRank> {
    let n = g.len();
    if n == 0 {
        return Err(GenexError::InvalidInput("pagerank needs a nonempty graph".into()));
    }
    let tele = match teleport {
        None => vec![1.0 / n as f64; n],
        Some(t) => {
            let sum: f64 = t.iter().sum();
            if t.len() != n || t.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(GenexError::InvalidInput("teleport must be a distribution over the vertices".into()));
            }
            t.to_vec()
        }
    };
    let strength: Vec<f64> = (0..n).map(|v| g.neighbors(v).iter().map(|e| e.1).sum()).collect();
    let d = opts.damping;
    let mut x = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for it in 1..=opts.max_iter {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut dangling = 0.0;
        for u in 0..n {
            if strength[u] > 0.0 {
                for &(v, w) in g.neighbors(u) {
                    next[v] += x[u] * w / strength[u];
                }
            } else {
                dangling += x[u];
            }
        }
        let mut residual = 0.0;
        for v in 0..n {
            next[v] = d * (next[v] + dangling * tele[v]) + (1.0 - d) * tele[v];
            residual += (next[v] - x[v]).abs();
        }
        std::mem::swap(&mut x, &mut next);
        if residual < opts.tol {
            return Ok(PageRank {
                scores: x,
                iterations: it,
                converged: true,
            });
        }
    }
    log::warn!("pagerank did not converge in {} iterations", opts.max_iter);
    Ok(PageRank {
        scores: x,
        iterations: opts.max_iter,
        converged: false,
    })
}

fn top_k(mut scored: Vec<TermScore>, k: usize) -> Vec<TermScore> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(k);
    scored
}

/// All graph terms with their TextRank scores, in document order.
fn textrank_scores(g: &TermGraph, teleport: Option<&[f64]>) -> Result<Vec<TermScore>> {
    if g.is_empty() {
        return Ok(Vec::new());
    }
    let pr = pagerank(g, teleport, &PageRankOptions::default())?;
    Ok(g.scored(&pr.scores))
}

/// Top `k` terms by TextRank, best first.
pub fn textrank_keywords(doc: &str, k: usize, window: usize, stopwords: &HashSet<String>) -> Result<Vec<TermScore>> {
    let g = TermGraph::build(doc, stopwords, window);
    Ok(top_k(textrank_scores(&g, None)?, k))
}

/// TextRank teleporting uniformly to the query's terms found in the
/// document, or plain TextRank when none are.
pub fn ts_textrank_keywords(
    doc: &str,
    query: &str,
    k: usize,
    window: usize,
    stopwords: &HashSet<String>,
) -> Result<Vec<TermScore>> {
    let g = TermGraph::build(doc, stopwords, window);
    let present: HashSet<usize> = content_terms(query, stopwords)
        .iter()
        .filter_map(|w| g.index_of(&porter_stem(w)))
        .collect();
    let teleport = (!present.is_empty()).then(|| {
        let share = 1.0 / present.len() as f64;
        (0..g.len())
            .map(|v| if present.contains(&v) { share } else { 0.0 })
            .collect::<Vec<f64>>()
    });
    Ok(top_k(textrank_scores(&g, teleport.as_deref())?, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_graphs() {
        let one = TermGraph::from_edges(1, &[]).unwrap();
        assert_eq!(pagerank(&one, None, &PageRankOptions::default()).unwrap().scores, vec![1.0]);
        let two = TermGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let s = pagerank(&two, None, &PageRankOptions::default()).unwrap().scores;
        assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn window_limits_edges() {
        let g = TermGraph::build("alpha beta gamma", &HashSet::new(), 2);
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.weight(0, 2), 0.0);
        assert_eq!(g.weight(1, 2), 1.0);
    }

    #[test]
    fn stems_merge_and_surface_is_first_form() {
        let g = TermGraph::build("Running runs run", &HashSet::new(), 10);
        assert_eq!(g.terms, ["run"]);
        assert_eq!(g.surfaces, ["running"]);
    }

    #[test]
    fn bad_teleport_rejected() {
        let g = TermGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        assert!(pagerank(&g, Some(&[0.7, 0.7]), &PageRankOptions::default()).is_err());
    }
}
