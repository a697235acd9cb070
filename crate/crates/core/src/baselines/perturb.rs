use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Ranker, TermScore};
use crate::error::{GenexError, Result};

pub const LIME_SAMPLES: usize = 500;
/// Ridge penalty of the LIME surrogate.
pub const LIME_RIDGE: f64 = 1e-3;

/// Distinct terms in first-occurrence order.
fn unique_terms(doc: &[String]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    doc.iter().filter(|t| seen.insert(t.as_str())).cloned().collect()
}

fn without(doc: &[String], term: &str) -> Vec<String> {
    doc.iter().filter(|t| *t != term).cloned().collect()
}

/// Drop in ranker score when every occurrence of a term is removed, per
/// distinct term.
pub fn sensitivity_explain(query: &[String], doc: &[String], ranker: &impl Ranker) -> Vec<TermScore> {
    let base = ranker.score(query, doc);
    unique_terms(doc)
        .into_iter()
        .map(|t| {
            let score = base - ranker.score(query, &without(doc, &t));
            TermScore { term: t, score }
        })
        .collect()
}

/// Fits a ridge surrogate on presence indicators. Row 0 is the intact
/// document; each other sample removes one uniformly drawn term. The
/// intercept is unpenalised.
pub fn lime_explain(
    query: &[String],
    doc: &[String],
    ranker: &impl Ranker,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<TermScore>> {
    let terms = unique_terms(doc);
    match terms.len() {
        0 => return Ok(Vec::new()),
        1 => {
            let score = ranker.score(query, doc) - ranker.score(query, &[]);
            return Ok(vec![TermScore {
                term: terms[0].clone(),
                score,
            }]);
        }
        _ => {}
    }
    if n_samples == 0 {
        return Err(GenexError::InvalidInput("lime needs at least one sample".into()));
    }
    let m = terms.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dropped: Vec<Option<usize>> = std::iter::once(None)
        .chain((0..n_samples).map(|_| Some(rng.random_range(0..m))))
        .collect();
    let rows = dropped.len();
    let x = DMatrix::from_fn(rows, m, |r, c| if dropped[r] == Some(c) { 0.0 } else { 1.0 });
    let y = DVector::from_iterator(
        rows,
        dropped.iter().map(|d| match d {
            None => ranker.score(query, doc),
            Some(c) => ranker.score(query, &without(doc, &terms[*c])),
        }),
    );
    let x_mean = x.row_mean();
    let y_mean = y.mean();
    let xc = DMatrix::from_fn(rows, m, |r, c| x[(r, c)] - x_mean[c]);
    let yc = y.add_scalar(-y_mean);
    let mut gram = xc.transpose() * &xc;
    for i in 0..m {
        gram[(i, i)] += LIME_RIDGE;
    }
    let rhs = xc.transpose() * yc;
    let coef = gram
        .cholesky()
        .ok_or_else(|| GenexError::NonFinite("ridge system is not positive definite".into()))?
        .solve(&rhs);
    Ok(terms
        .into_iter()
        .zip(coef.iter())
        .map(|(term, &score)| TermScore { term, score })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn constant_ranker_gives_zero_coefficients() {
        let r = |_: &[String], _: &[String]| 0.7;
        let s = lime_explain(&words("q"), &words("a b c a"), &r, 200, 3).unwrap();
        assert!(s.iter().all(|t| t.score.abs() < 1e-8));
    }

    #[test]
    fn additive_ranker_recovered() {
        // score = 2·[a present] + 1·[b present]
        let r = |_: &[String], d: &[String]| {
            2.0 * f64::from(d.iter().any(|t| t == "a")) + f64::from(d.iter().any(|t| t == "b"))
        };
        let s = lime_explain(&words("q"), &words("a b c"), &r, 500, 1).unwrap();
        assert!((s[0].score - 2.0).abs() < 0.01, "{s:?}");
        assert!((s[1].score - 1.0).abs() < 0.01, "{s:?}");
        assert!(s[2].score.abs() < 0.01, "{s:?}");
    }

    #[test]
    fn single_term_uses_direct_delta() {
        let r = |_: &[String], d: &[String]| d.len() as f64;
        let s = lime_explain(&words("q"), &words("z z"), &r, 10, 0).unwrap();
        assert_eq!(s, vec![TermScore { term: "z".into(), score: 2.0 }]);
    }
}
