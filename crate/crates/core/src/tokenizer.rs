//! Subword vocabulary with greedy longest-match tokenization.
//!
//! Word-initial pieces are stored verbatim; word-internal pieces carry the
//! `##` continuation prefix. Ids 0–4 are reserved for the special tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{GenexError, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SEP: u32 = 4;

pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[BOS]", "[EOS]", "[SEP]"];
pub const CONTINUATION: &str = "##";

pub fn is_special(id: u32) -> bool {
    id <= SEP
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
}

/// Token ids with a parallel segment label per position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// How query and document tokens are laid out and labelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentScheme {
    /// `[q…, SEP, d…]`, segment 0 on the query part (and separator), 1 on the document.
    Part,
    /// `[q…, SEP, d…]`, segment 0 wherever the id occurs in the query, else 1.
    Occur,
    /// Separate `[q…, SEP]` and `[d…, SEP]` sequences labelled by query occurrence.
    Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputSeqs {
    Joint(TokenSeq),
    Split { query: TokenSeq, doc: TokenSeq },
}

fn occur_segments(ids: &[u32], query: &HashSet<u32>) -> Vec<u8> {
    ids.iter().map(|id| u8::from(!query.contains(id))).collect()
}

/// Lays out already-tokenized query and document ids under `scheme`.
pub fn layout_ids(query: &[u32], doc: &[u32], scheme: SegmentScheme) -> Result<InputSeqs> {
    if query.is_empty() || doc.is_empty() {
        return Err(GenexError::InvalidInput(
            "query and document must be nonempty".into(),
        ));
    }
    let qset: HashSet<u32> = query.iter().copied().collect();
    Ok(match scheme {
        SegmentScheme::Part | SegmentScheme::Occur => {
            let mut ids = query.to_vec();
            ids.push(SEP);
            ids.extend_from_slice(doc);
            let segments = if scheme == SegmentScheme::Part {
                let mut s = vec![0u8; query.len() + 1];
                s.resize(ids.len(), 1);
                s
            } else {
                occur_segments(&ids, &qset)
            };
            InputSeqs::Joint(TokenSeq { ids, segments })
        }
        SegmentScheme::Split => {
            let mut q = query.to_vec();
            q.push(SEP);
            let mut d = doc.to_vec();
            d.push(SEP);
            InputSeqs::Split {
                query: TokenSeq {
                    segments: occur_segments(&q, &qset),
                    ids: q,
                },
                doc: TokenSeq {
                    segments: occur_segments(&d, &qset),
                    ids: d,
                },
            }
        }
    })
}

/// A tokenized triple before model-specific truncation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedText {
    pub query_ids: Vec<u32>,
    pub doc_ids: Vec<u32>,
    pub input: InputSeqs,
    /// `[BOS, e…, EOS]`
    pub target: Vec<u32>,
}

pub fn lowercase_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Vocab {
    /// Builds a vocabulary from the specials, every observed character (in
    /// word-initial and continuation form) and then the most frequent adjacent
    /// piece merges until `target_size` pieces exist. Ties go to the
    /// lexicographically smallest pair.
    pub fn train<'a, I>(corpus: I, target_size: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for w in lowercase_words(text) {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(GenexError::InvalidInput("empty corpus".into()));
        }
        let mut words: Vec<(Vec<String>, usize)> = word_counts
            .into_iter()
            .map(|(w, c)| {
                let pieces = w
                    .chars()
                    .enumerate()
                    .map(|(i, ch)| {
                        if i == 0 {
                            ch.to_string()
                        } else {
                            format!("{CONTINUATION}{ch}")
                        }
                    })
                    .collect();
                (pieces, c)
            })
            .collect();
        let alphabet: BTreeSet<String> = words.iter().flat_map(|(p, _)| p.iter().cloned()).collect();
        if target_size < alphabet.len() + SPECIALS.len() {
            return Err(GenexError::InvalidInput(format!(
                "target size {target_size} below alphabet size {} + {} specials",
                alphabet.len(),
                SPECIALS.len()
            )));
        }
        let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        pieces.extend(alphabet);
        let mut known: HashSet<String> = pieces.iter().cloned().collect();

        while pieces.len() < target_size {
            let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
            for (w, c) in &words {
                for pair in w.windows(2) {
                    *pairs.entry((&pair[0], &pair[1])).or_default() += c;
                }
            }
            let Some((best, _)) = pairs
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            else {
                break;
            };
            let (left, right) = (best.0.to_string(), best.1.to_string());
            let merged = format!("{left}{}", right.trim_start_matches(CONTINUATION));
            for (w, _) in words.iter_mut() {
                let mut i = 0;
                while i + 1 < w.len() {
                    if w[i] == left && w[i + 1] == right {
                        w[i] = merged.clone();
                        w.remove(i + 1);
                    }
                    i += 1;
                }
            }
            if known.insert(merged.clone()) {
                pieces.push(merged);
            }
        }
        Self::from_pieces(pieces)
    }

    pub fn from_pieces(pieces: Vec<String>) -> Result<Vocab> {
        if pieces.len() < SPECIALS.len() || pieces[..SPECIALS.len()] != SPECIALS {
            return Err(GenexError::Data(
                "vocabulary must start with the five special tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.chars().any(char::is_whitespace) {
                return Err(GenexError::Data(format!("invalid piece {p:?} at line {}", i + 1)));
            }
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(GenexError::Data(format!("duplicate piece {p:?}")));
            }
        }
        Ok(Vocab { pieces, index })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Lowercases, splits on whitespace and greedily matches the longest
    /// piece at each position. Characters with no piece become `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in lowercase_words(text) {
            let bounds: Vec<usize> = word
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(word.len()))
                .collect();
            let mut start = 0;
            while start + 1 < bounds.len() {
                let prefix = if start == 0 { "" } else { CONTINUATION };
                let found = (start + 1..bounds.len()).rev().find_map(|end| {
                    let cand = format!("{prefix}{}", &word[bounds[start]..bounds[end]]);
                    self.index.contains_key(&cand).then_some((cand, end))
                });
                match found {
                    Some((piece, end)) => {
                        out.push(piece);
                        start = end;
                    }
                    None => {
                        out.push(SPECIALS[UNK as usize].to_string());
                        start += 1;
                    }
                }
            }
        }
        out
    }

    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        self.tokenize(text)
            .iter()
            .map(|p| self.id(p).unwrap_or(UNK))
            .collect()
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }

    /// Tokenizes a triple and lays out the model input under `scheme`.
    pub fn encode(
        &self,
        query: &str,
        doc: &str,
        explanation: &str,
        scheme: SegmentScheme,
    ) -> Result<EncodedText> {
        let query_ids = self.encode_text(query);
        let doc_ids = self.encode_text(doc);
        let input = layout_ids(&query_ids, &doc_ids, scheme)?;
        let mut target = vec![BOS];
        target.extend(self.encode_text(explanation));
        target.push(EOS);
        Ok(EncodedText {
            query_ids,
            doc_ids,
            input,
            target,
        })
    }

    /// Joins pieces, fusing continuation pieces onto their predecessor and
    /// dropping special tokens.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let piece = self.piece(id).ok_or(GenexError::Index {
                what: "vocabulary",
                index: id as usize,
                size: self.len(),
            })?;
            if is_special(id) {
                continue;
            }
            match piece.strip_prefix(CONTINUATION) {
                Some(rest) if !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(piece);
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.pieces.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| GenexError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path).map_err(|e| GenexError::io(path, e))?;
        Self::from_pieces(text.lines().map(str::to_string).collect())
    }
}
