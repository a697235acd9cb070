//! BLEU, ROUGE-1/2/L, the paired t-test and corpus reports.
//!
//! Metrics work on lowercased whitespace words of detokenized text.

mod report;
mod ttest;

use std::collections::HashMap;

pub use report::{corpus_report, read_predictions, CorpusReport, GoldRecord, Metric, MetricReport, PredictionRecord};
pub use ttest::{paired_ttest, regularized_incomplete_beta, student_t_two_tailed, TTest};

use crate::error::{GenexError, Result};

pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_default() += 1;
        }
    }
    out
}

/// Clipped matches and candidate n-gram total (at least 1, as in the common
/// reference implementation); clipping uses the largest count among the
/// references.
fn clipped(cand: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
    let matched = c
        .iter()
        .map(|(g, &k)| {
            let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            k.min(max_ref)
        })
        .sum();
    (matched, cand.len().saturating_sub(n - 1).max(1))
}

/// Reference length closest to `c`, the shorter one on ties.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn check_order(max_n: usize) -> Result<()> {
    if !(1..=4).contains(&max_n) {
        return Err(GenexError::InvalidInput(format!("BLEU order {max_n} unsupported")));
    }
    Ok(())
}

/// Corpus BLEU with uniform weights up to `max_n`; zero if any order has no
/// match. `references[i]` holds every reference of candidate `i`.
pub fn corpus_bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], max_n: usize) -> Result<f64> {
    check_order(max_n)?;
    if candidates.is_empty() {
        return Err(GenexError::InvalidInput("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(GenexError::InvalidInput(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in candidates.iter().zip(references) {
        for n in 1..=max_n {
            let (m, t) = clipped(cand, refs, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    if matched.iter().zip(&total).any(|(&m, &t)| m == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / max_n as f64;
    Ok(brevity_penalty(c, r) * log_p.exp())
}

/// Sentence BLEU with add-one smoothing on orders two and up; the
/// per-sample stream for significance tests.
pub fn sentence_bleu(candidate: &[String], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    check_order(max_n)?;
    let mut log_p = 0.0;
    for n in 1..=max_n {
        let (m, t) = clipped(candidate, references, n);
        let (m, t) = if n == 1 { (m, t) } else { (m + 1, t + 1) };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_p += (m as f64 / t as f64).ln();
    }
    let bp = brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), references));
    Ok(bp * (log_p / max_n as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hit: usize, cand: usize, reference: usize) -> Prf {
        let precision = if cand == 0 { 0.0 } else { hit as f64 / cand as f64 };
        let recall = if reference == 0 { 0.0 } else { hit as f64 / reference as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> Prf {
    let (hit, _) = clipped(candidate, std::slice::from_ref(&reference.to_vec()), n);
    let cand_total = candidate.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    Prf::from_counts(hit, cand_total, ref_total)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L over the longest common subsequence.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}
