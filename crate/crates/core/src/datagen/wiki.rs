use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    normalize_text, ExplanationTriple, Source, TokenCounter, WikiArticle, MAX_EXPLANATION_TOKENS,
    MIN_ARTICLE_CHARS, MIN_DOC_TOKENS,
};

pub const DEFAULT_STOP_HEADERS: [&str; 6] = [
    "references",
    "see also",
    "external links",
    "further reading",
    "notes",
    "bibliography",
];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WikiStats {
    pub articles: usize,
    pub malformed: usize,
    pub short_articles: usize,
    pub stop_header_sections: usize,
    pub short_sections: usize,
    pub long_headers: usize,
    pub emitted: usize,
}

impl WikiStats {
    fn merge(mut self, o: &WikiStats) -> Self {
        self.articles += o.articles;
        self.malformed += o.malformed;
        self.short_articles += o.short_articles;
        self.stop_header_sections += o.stop_header_sections;
        self.short_sections += o.short_sections;
        self.long_headers += o.long_headers;
        self.emitted += o.emitted;
        self
    }
}

fn article_triples(
    article: &WikiArticle,
    stop_headers: &HashSet<String>,
    counter: TokenCounter<'_>,
) -> (Vec<ExplanationTriple>, WikiStats) {
    let mut stats = WikiStats {
        articles: 1,
        ..WikiStats::default()
    };
    let query = normalize_text(&article.title);
    if query.is_empty() || article.sections.iter().any(|s| s.header.trim().is_empty()) {
        stats.malformed = 1;
        return (Vec::new(), stats);
    }
    let chars: usize = article.sections.iter().map(|s| s.body.chars().count()).sum();
    if chars < MIN_ARTICLE_CHARS {
        stats.short_articles = 1;
        return (Vec::new(), stats);
    }
    let mut out = Vec::new();
    for section in &article.sections {
        let header = normalize_text(&section.header);
        if stop_headers.contains(&header) {
            stats.stop_header_sections += 1;
            continue;
        }
        let body = normalize_text(&section.body);
        if counter.count(&body) <= MIN_DOC_TOKENS {
            stats.short_sections += 1;
            continue;
        }
        if counter.count(&header) > MAX_EXPLANATION_TOKENS {
            stats.long_headers += 1;
            continue;
        }
        out.push(ExplanationTriple {
            query: query.clone(),
            document: body,
            explanation: header,
            source: Source::Wiki,
        });
    }
    stats.emitted = out.len();
    (out, stats)
}

/// Turns each qualifying article section into `(title, body, header)`.
///
/// Output follows input order regardless of how many worker threads run.
/// Unparseable records (`Err`) and articles with empty titles or headers
/// are skipped and counted as malformed.
pub fn build_wiki_triples(
    articles: &[std::result::Result<WikiArticle, String>],
    stop_headers: &HashSet<String>,
    counter: TokenCounter<'_>,
) -> (Vec<ExplanationTriple>, WikiStats) {
    let per_article: Vec<(Vec<ExplanationTriple>, WikiStats)> = articles
        .par_iter()
        .map(|a| match a {
            Ok(article) => article_triples(article, stop_headers, counter),
            Err(e) => {
                log::warn!("skipping malformed article record: {e}");
                (
                    Vec::new(),
                    WikiStats {
                        articles: 1,
                        malformed: 1,
                        ..WikiStats::default()
                    },
                )
            }
        })
        .collect();
    let mut stats = WikiStats::default();
    let mut out = Vec::new();
    for (triples, s) in per_article {
        stats = stats.merge(&s);
        out.extend(triples);
    }
    if stats.malformed > 0 {
        log::warn!("{} malformed article records skipped", stats.malformed);
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::WikiSection;

    fn words(n: usize, w: &str) -> String {
        vec![w; n].join(" ")
    }

    fn stops() -> HashSet<String> {
        DEFAULT_STOP_HEADERS.iter().map(|s| s.to_string()).collect()
    }

    fn article(title: &str, sections: &[(&str, String)]) -> WikiArticle {
        WikiArticle {
            title: title.into(),
            sections: sections
                .iter()
                .map(|(h, b)| WikiSection {
                    header: h.to_string(),
                    body: b.clone(),
                })
                .collect(),
        }
    }

    #[test]
    fn solar_energy_example() {
        // 30 tokens of 20 characters each keeps the article above 500 characters
        let body = words(30, "photovoltaicsystems");
        let a = article(
            "Solar Energy",
            &[("History", body.clone()), ("See also", words(25, "link"))],
        );
        let (out, stats) = build_wiki_triples(&[Ok(a)], &stops(), TokenCounter::Whitespace);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].query, "solar energy");
        assert_eq!(out[0].explanation, "history");
        assert_eq!(out[0].document, body);
        assert_eq!(stats.stop_header_sections, 1);
    }

    #[test]
    fn short_article_dropped() {
        let a = article("Tiny", &[("Intro", "x".repeat(400))]);
        let (out, stats) = build_wiki_triples(&[Ok(a)], &stops(), TokenCounter::Whitespace);
        assert!(out.is_empty());
        assert_eq!(stats.short_articles, 1);
    }

    #[test]
    fn section_token_gate() {
        let a = article(
            "Gate",
            &[
                ("Nineteen", words(19, "abcdefghijklmnopqrstuvwxy")),
                ("Twenty one", words(21, "abcdefghijklmnopqrstuvwxy")),
            ],
        );
        let (out, stats) = build_wiki_triples(&[Ok(a)], &stops(), TokenCounter::Whitespace);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].explanation, "twenty one");
        assert_eq!(stats.short_sections, 1);
    }

    #[test]
    fn malformed_records_are_counted() {
        let bad = article("", &[("History", words(30, "word"))]);
        let (out, stats) = build_wiki_triples(
            &[Ok(bad), Err("line 2: eof".into())],
            &stops(),
            TokenCounter::Whitespace,
        );
        assert!(out.is_empty());
        assert_eq!(stats.malformed, 2);
    }
}
