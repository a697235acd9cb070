use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde::Serialize;

use super::{
    normalize_text, query_biased_summary, AnchorRecord, EmbeddingTable, ExplanationTriple, Source,
    TokenCounter,
};
use crate::error::Result;

pub const DEFAULT_FACET_BLOCKLIST: [&str; 9] = [
    "homepage", "website", "webpage", "site", "official", "click", "here", "link", "links",
];

#[derive(Clone, Debug)]
pub struct AnchorConfig<'a> {
    pub stopwords: HashSet<String>,
    pub blocklist: HashSet<String>,
    /// When set, documents are condensed with a query-biased summary of this many tokens.
    pub summary_cap: Option<usize>,
    pub embeddings: Option<&'a EmbeddingTable>,
}

impl AnchorConfig<'_> {
    pub fn new(stopwords: HashSet<String>) -> Self {
        AnchorConfig {
            stopwords,
            blocklist: DEFAULT_FACET_BLOCKLIST.iter().map(|s| s.to_string()).collect(),
            summary_cap: None,
            embeddings: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AnchorStats {
    pub records: usize,
    pub pages: usize,
    pub missing_pages: usize,
    pub groups: usize,
    pub empty_facets: usize,
    pub blocked_facets: usize,
    pub gated: usize,
    pub emitted: usize,
}

/// Repeatedly takes the longest word prefix shared by at least two unused
/// anchors that continue with distinct nonempty suffixes. Each anchor joins
/// at most one group. Groups come out in discovery order, each with its
/// distinct suffixes in first-seen order.
fn group_anchors(anchors: &[Vec<String>]) -> Vec<(Vec<String>, Vec<Vec<String>>)> {
    let mut used = vec![false; anchors.len()];
    let mut groups = Vec::new();
    loop {
        let longest = anchors
            .iter()
            .zip(&used)
            .filter(|(_, &u)| !u)
            .map(|(a, _)| a.len())
            .max()
            .unwrap_or(0);
        let mut found = None;
        for len in (1..longest).rev() {
            let mut by_prefix: IndexMap<&[String], Vec<usize>> = IndexMap::new();
            for (i, a) in anchors.iter().enumerate() {
                if !used[i] && a.len() > len {
                    by_prefix.entry(&a[..len]).or_default().push(i);
                }
            }
            found = by_prefix.into_iter().find(|(_, members)| {
                let distinct: HashSet<&[String]> = members.iter().map(|&i| &anchors[i][len..]).collect();
                distinct.len() >= 2
            });
            if found.is_some() {
                break;
            }
        }
        let Some((prefix, members)) = found else { break };
        let len = prefix.len();
        let prefix = prefix.to_vec();
        let mut suffixes: Vec<Vec<String>> = Vec::new();
        for &i in &members {
            used[i] = true;
            let s = anchors[i][len..].to_vec();
            if !suffixes.contains(&s) {
                suffixes.push(s);
            }
        }
        groups.push((prefix, suffixes));
    }
    groups
}

/// Mines `(shared anchor prefix, page text, facet)` triples.
///
/// Anchors are grouped per target page in first-seen page order. Facets lose
/// leading stopwords; empty facets and facets containing a blocklisted word
/// are dropped. Records pointing at pages missing from `pages` are skipped
/// and counted.
pub fn build_anchor_triples(
    records: &[AnchorRecord],
    pages: &HashMap<String, String>,
    cfg: &AnchorConfig<'_>,
    counter: TokenCounter<'_>,
) -> Result<(Vec<ExplanationTriple>, AnchorStats)> {
    let mut stats = AnchorStats {
        records: records.len(),
        ..AnchorStats::default()
    };
    let mut by_page: IndexMap<&str, Vec<Vec<String>>> = IndexMap::new();
    for r in records {
        let words: Vec<String> = normalize_text(&r.anchor_text)
            .split(' ')
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect();
        let entry = by_page.entry(r.target_page_id.as_str()).or_default();
        if !words.is_empty() {
            entry.push(words);
        }
    }
    stats.pages = by_page.len();

    let mut out = Vec::new();
    for (page, anchors) in &by_page {
        let Some(text) = pages.get(*page) else {
            log::warn!("anchor target page {page:?} has no text");
            stats.missing_pages += 1;
            continue;
        };
        for (prefix, suffixes) in group_anchors(anchors) {
            stats.groups += 1;
            let query = prefix.join(" ");
            let document = match cfg.summary_cap {
                Some(cap) => normalize_text(&query_biased_summary(text, &query, cfg.embeddings, cap, counter)?),
                None => normalize_text(text),
            };
            let mut seen = HashSet::new();
            for suffix in suffixes {
                let start = suffix
                    .iter()
                    .position(|w| !cfg.stopwords.contains(w))
                    .unwrap_or(suffix.len());
                let facet = &suffix[start..];
                if facet.is_empty() {
                    stats.empty_facets += 1;
                    continue;
                }
                if facet.iter().any(|w| cfg.blocklist.contains(w)) {
                    stats.blocked_facets += 1;
                    continue;
                }
                let explanation = facet.join(" ");
                if !seen.insert(explanation.clone()) {
                    continue;
                }
                let t = ExplanationTriple {
                    query: query.clone(),
                    document: document.clone(),
                    explanation,
                    source: Source::Anchor,
                };
                if counter.passes_gates(&t) {
                    out.push(t);
                } else {
                    stats.gated += 1;
                }
            }
        }
    }
    stats.emitted = out.len();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::default_stopwords;

    fn split(s: &[&str]) -> Vec<Vec<String>> {
        s.iter()
            .map(|a| a.split(' ').map(str::to_string).collect())
            .collect()
    }

    fn rec(page: &str, anchor: &str) -> AnchorRecord {
        AnchorRecord {
            target_page_id: page.into(),
            anchor_text: anchor.into(),
        }
    }

    #[test]
    fn grouping_prefers_longest_prefix() {
        let g = group_anchors(&split(&[
            "new york times",
            "new york post",
            "new jersey",
            "new mexico",
        ]));
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].0, vec!["new", "york"]);
        assert_eq!(g[0].1, split(&["times", "post"]));
        assert_eq!(g[1].0, vec!["new"]);
        assert_eq!(g[1].1, split(&["jersey", "mexico"]));
    }

    #[test]
    fn identical_suffixes_do_not_form_a_group() {
        assert!(group_anchors(&split(&["tax law", "tax law", "tax"])).is_empty());
    }

    #[test]
    fn tax_page_example() {
        let page: String = (0..25).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let pages = HashMap::from([("p1".to_string(), page.clone())]);
        let recs = [
            rec("p1", "tax on rental income"),
            rec("p1", "tax on capital gains"),
            rec("p1", "tax official website"),
        ];
        let cfg = AnchorConfig::new(default_stopwords());
        let (out, stats) = build_anchor_triples(&recs, &pages, &cfg, TokenCounter::Whitespace).unwrap();
        let got: Vec<(&str, &str)> = out.iter().map(|t| (t.query.as_str(), t.explanation.as_str())).collect();
        assert_eq!(got, vec![("tax on", "rental income"), ("tax on", "capital gains")]);
        assert_eq!(out[0].document, page);
        assert_eq!(stats.groups, 1);
    }

    #[test]
    fn blocklisted_and_stopword_facets() {
        let page: String = vec!["word"; 30].join(" ");
        let pages = HashMap::from([("p".to_string(), page)]);
        let recs = [
            rec("p", "solar the"),
            rec("p", "solar official site"),
            rec("p", "solar panels"),
            rec("missing", "a b"),
            rec("missing", "a c"),
        ];
        let cfg = AnchorConfig::new(default_stopwords());
        let (out, stats) = build_anchor_triples(&recs, &pages, &cfg, TokenCounter::Whitespace).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].explanation, "panels");
        assert_eq!(stats.empty_facets, 1);
        assert_eq!(stats.blocked_facets, 1);
        assert_eq!(stats.missing_pages, 1);
    }
}
