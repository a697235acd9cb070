use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExplanationTriple, Source, MIN_DOC_TOKENS};
use crate::error::{GenexError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub fields_per_doc: usize,
    pub min_value_words: usize,
    pub max_value_words: usize,
    /// Words per filler clause, excluding the closing period.
    pub filler_words: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fields_per_doc: 4,
            min_value_words: 1,
            max_value_words: 2,
            filler_words: 3,
        }
    }
}

const ONSETS: [&str; 15] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "h"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// `n` distinct pronounceable two-syllable words ("baba", "babe", …).
pub fn synth_word_list(n: usize) -> Vec<String> {
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let mut out = Vec::with_capacity(n);
    'outer: for a in &syllables {
        for b in &syllables {
            if out.len() == n {
                break 'outer;
            }
            out.push(format!("{a}{b}"));
        }
    }
    // three syllables once two run out
    'more: for a in &syllables {
        for b in &syllables {
            for c in &syllables {
                if out.len() >= n {
                    break 'more;
                }
                out.push(format!("{a}{b}{c}"));
            }
        }
    }
    out
}

/// Key-value documents: each is a shuffle of `key is v1 [v2] .` clauses and
/// filler clauses; the query is one key and the explanation its value words.
///
/// `vocab_words` is split into disjoint pools: the first quarter are keys,
/// the next half values, the rest filler.
pub fn synth_keyvalue_dataset(
    n: usize,
    vocab_words: &[String],
    fields_per_doc: usize,
    seed: u64,
) -> Result<Vec<ExplanationTriple>> {
    let cfg = SynthConfig {
        fields_per_doc,
        ..SynthConfig::default()
    };
    synth_with_config(n, vocab_words, &cfg, seed)
}

pub fn synth_with_config(
    n: usize,
    vocab_words: &[String],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<ExplanationTriple>> {
    if cfg.fields_per_doc < 2 {
        return Err(GenexError::InvalidInput("fields_per_doc must be at least 2".into()));
    }
    if cfg.min_value_words == 0 || cfg.min_value_words > cfg.max_value_words || cfg.filler_words == 0 {
        return Err(GenexError::InvalidInput("bad value or filler lengths".into()));
    }
    let n_keys = vocab_words.len() / 4;
    let n_values = vocab_words.len() / 2;
    let (keys, rest) = vocab_words.split_at(n_keys);
    let (values, filler) = rest.split_at(n_values);
    if keys.len() < cfg.fields_per_doc || values.len() < cfg.max_value_words || filler.is_empty() {
        return Err(GenexError::InvalidInput(format!(
            "{} words are too few for {} fields per document",
            vocab_words.len(),
            cfg.fields_per_doc
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let fields: Vec<&String> = keys.choose_multiple(&mut rng, cfg.fields_per_doc).collect();
        let mut clauses: Vec<Vec<&str>> = Vec::new();
        let mut answers = Vec::new();
        for key in &fields {
            let len = rng.random_range(cfg.min_value_words..=cfg.max_value_words);
            let vals: Vec<&str> = values.choose_multiple(&mut rng, len).map(String::as_str).collect();
            let mut clause = vec![key.as_str(), "is"];
            clause.extend(&vals);
            clause.push(".");
            answers.push(vals.join(" "));
            clauses.push(clause);
        }
        let mut total: usize = clauses.iter().map(Vec::len).sum();
        loop {
            let mut clause: Vec<&str> = (0..cfg.filler_words)
                .map(|_| filler.choose(&mut rng).expect("nonempty").as_str())
                .collect();
            clause.push(".");
            total += clause.len();
            clauses.push(clause);
            if total > MIN_DOC_TOKENS {
                break;
            }
        }
        clauses.shuffle(&mut rng);
        let pick = rng.random_range(0..fields.len());
        out.push(ExplanationTriple {
            query: fields[pick].clone(),
            document: clauses.concat().join(" "),
            explanation: answers[pick].clone(),
            source: Source::Synthetic,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::TokenCounter;

    #[test]
    fn word_list_is_distinct() {
        let w = synth_word_list(500);
        let set: std::collections::HashSet<_> = w.iter().collect();
        assert_eq!(set.len(), 500);
    }

    #[test]
    fn deterministic_and_well_formed() {
        let words = synth_word_list(64);
        let a = synth_keyvalue_dataset(50, &words, 3, 9).unwrap();
        let b = synth_keyvalue_dataset(50, &words, 3, 9).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert!(TokenCounter::Whitespace.passes_gates(t));
            let clause = format!("{} is {} .", t.query, t.explanation);
            assert!(t.document.contains(&clause), "{clause} not in {}", t.document);
            for w in t.explanation.split(' ') {
                assert!(!t.query.split(' ').any(|q| q == w));
            }
        }
    }

    #[test]
    fn too_few_words() {
        assert!(synth_keyvalue_dataset(1, &synth_word_list(6), 4, 0).is_err());
        assert!(synth_keyvalue_dataset(1, &synth_word_list(64), 1, 0).is_err());
    }
}
