use std::collections::HashSet;

use genex_core::baselines::*;
use genex_core::datagen::default_stopwords;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Stationary vector from the linear system `(I − d·Pᵀ) x = (1 − d)·t`,
/// valid when no vertex is isolated.
fn dense_oracle(n: usize, w: &DMatrix<f64>, tele: &[f64], d: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let s: f64 = w.row(i).sum();
        for j in 0..n {
            p[(i, j)] = w[(i, j)] / s;
        }
    }
    let a = DMatrix::identity(n, n) - p.transpose() * d;
    let b = DVector::from_column_slice(tele) * (1.0 - d);
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &(a, b) in edges {
            for (x, y) in [(a, b), (b, a)] {
                if x == u && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    seen.iter().all(|&s| s)
}

#[test]
fn pagerank_matches_dense_oracle_on_all_small_connected_graphs() {
    let opts = PageRankOptions::default();
    let mut checked = 0;
    for n in 1..=6usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<(usize, usize)> =
                pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e).collect();
            if !connected(n, &edges) {
                continue;
            }
            for weighted in [false, true] {
                let weight = |k: usize| if weighted { 1.0 + ((k * 7 + mask as usize) % 5) as f64 } else { 1.0 };
                let triples: Vec<(usize, usize, f64)> =
                    edges.iter().enumerate().map(|(k, &(a, b))| (a, b, weight(k))).collect();
                let g = TermGraph::from_edges(n, &triples).unwrap();
                let mut w = DMatrix::zeros(n, n);
                for &(a, b, x) in &triples {
                    w[(a, b)] = x;
                    w[(b, a)] = x;
                }
                let uniform = vec![1.0 / n as f64; n];
                let mut personal = vec![0.0; n];
                personal[mask as usize % n] = 1.0;
                for tele in [None, Some(personal.as_slice())] {
                    let pr = pagerank(&g, tele, &opts).unwrap();
                    assert!(pr.converged);
                    let want = dense_oracle(n, &w, tele.unwrap_or(&uniform), opts.damping);
                    for (a, b) in pr.scores.iter().zip(&want) {
                        assert!((a - b).abs() < 1e-6, "n {n} mask {mask}: {:?} vs {want:?}", pr.scores);
                    }
                    assert!((pr.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 100_000);
}

#[test]
fn path_graph_center_wins() {
    let g = TermGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
    let s = pagerank(&g, None, &PageRankOptions::default()).unwrap().scores;
    assert!(s[1] > s[0]);
    assert_eq!(s[0], s[2]);
}

#[test]
fn iteration_cap_reports_nonconvergence() {
    let g = TermGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
    let opts = PageRankOptions {
        max_iter: 2,
        ..Default::default()
    };
    let pr = pagerank(&g, None, &opts).unwrap();
    assert!(!pr.converged);
    assert_eq!(pr.iterations, 2);
}

#[test]
fn ts_textrank_falls_back_bit_exactly() {
    let stop = default_stopwords();
    let doc = "solar panels convert sunlight into electricity while wind turbines convert moving air \
               into electricity for homes and farms across windy regions";
    for query in ["hydrogen fuel", "", "the and of"] {
        let plain = textrank_keywords(doc, 50, DEFAULT_WINDOW, &stop).unwrap();
        let ts = ts_textrank_keywords(doc, query, 50, DEFAULT_WINDOW, &stop).unwrap();
        assert_eq!(plain.len(), ts.len());
        for (a, b) in plain.iter().zip(&ts) {
            assert_eq!(a.term, b.term);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }
}

#[test]
fn ts_textrank_favours_query_neighbourhood() {
    // window 2 makes the graph the path w - x - y - z
    let none = HashSet::new();
    let r = ts_textrank_keywords("wolf xenon yak zebra", "wolf", 4, 2, &none).unwrap();
    let score = |t: &str| r.iter().find(|s| s.term == t).unwrap().score;
    assert!(score("xenon") > score("zebra"));
    assert!(score("wolf") > score("yak"));
    let g = TermGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
    let mut w = DMatrix::zeros(4, 4);
    for (a, b) in [(0, 1), (1, 2), (2, 3)] {
        w[(a, b)] = 1.0;
        w[(b, a)] = 1.0;
    }
    let want = dense_oracle(4, &w, &[1.0, 0.0, 0.0, 0.0], 0.85);
    let got = pagerank(&g, Some(&[1.0, 0.0, 0.0, 0.0]), &PageRankOptions::default()).unwrap();
    for (t, expect) in ["wolf", "xenon", "yak", "zebra"].iter().zip(&want) {
        assert!((score(t) - expect).abs() < 1e-6);
    }
    assert!(got.scores[1] > got.scores[3]);
}

#[test]
fn textrank_edge_cases() {
    let none = HashSet::new();
    let r = textrank_keywords("apple apple apple", 3, DEFAULT_WINDOW, &none).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].term, "apple");
    assert_eq!(r[0].score, 1.0);
    assert!(textrank_keywords("the of and", 3, DEFAULT_WINDOW, &default_stopwords()).unwrap().is_empty());
}

fn terms(s: &str) -> Vec<String> {
    analyze(s)
}

#[test]
fn tfidf_hand_computed_cosine() {
    let idx = TfIdfIndex::build(["apple pie", "apple tart", "banana"]).unwrap();
    let (a, p) = ((1.5f64).ln(), 3f64.ln());
    let want = (a * 2.0 * a) / ((a * a + p * p).sqrt() * (2.0 * a));
    assert!((idx.score_text("apple pie", "apple apple") - want).abs() < 1e-12);
}

fn fruit_index() -> TfIdfIndex {
    TfIdfIndex::build(["apple pie recipe", "banana bread recipe", "cherry pie", "plum jam"]).unwrap()
}

#[test]
fn lime_ranks_matching_term_first_and_is_deterministic() {
    let idx = fruit_index();
    let q = terms("apple");
    let d = terms("apple pie recipe");
    let s = lime_explain(&q, &d, &idx, LIME_SAMPLES, 5).unwrap();
    let best = s.iter().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
    assert_eq!(best.term, "apple");
    assert_eq!(s, lime_explain(&q, &d, &idx, LIME_SAMPLES, 5).unwrap());
    assert_eq!(select_top_tokens(&s), ["apple"]);
}

#[test]
fn sensitivity_properties() {
    let idx = fruit_index();
    let s = sensitivity_explain(&terms("apple"), &terms("apple pie recipe"), &idx);
    assert_eq!(s[0].term, "apple");
    assert!(s[1..].iter().all(|t| t.score < s[0].score));
    let zero = sensitivity_explain(&terms("kiwi"), &terms("banana bread recipe"), &idx);
    assert!(zero.iter().all(|t| t.score == 0.0));
}

proptest! {
    #[test]
    fn selection_size_is_one_to_three(scores in prop::collection::vec(-5.0f64..10.0, 1..12)) {
        let s: Vec<TermScore> = scores.iter().enumerate().map(|(i, &x)| TermScore { term: format!("t{i}"), score: x }).collect();
        let out = select_top_tokens(&s);
        prop_assert!((1..=3).contains(&out.len()));
    }

    #[test]
    fn tfidf_is_symmetric_and_bounded(a in "[a-e]( [a-e]){0,6}", b in "[a-e]( [a-e]){0,6}") {
        let idx = TfIdfIndex::build(["a b", "c d", "e", "a c e"]).unwrap();
        let x = idx.score_text(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, idx.score_text(&b, &a));
    }

    #[test]
    fn pagerank_is_a_distribution(edges in prop::collection::vec((0usize..7, 0usize..7, 0.5f64..3.0), 0..15)) {
        let edges: Vec<_> = edges.into_iter().filter(|e| e.0 != e.1).collect();
        let g = TermGraph::from_edges(7, &edges).unwrap();
        let pr = pagerank(&g, None, &PageRankOptions::default()).unwrap();
        prop_assert!((pr.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
