use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{corpus_bleu, rouge_l, rouge_n, sentence_bleu, words};
use crate::datagen::read_jsonl_strict;
use crate::error::{GenexError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Bleu1,
    Bleu2,
    Rouge1,
    Rouge2,
    RougeL,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Bleu1, Metric::Bleu2, Metric::Rouge1, Metric::Rouge2, Metric::RougeL];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu1 => "bleu1",
            Metric::Bleu2 => "bleu2",
            Metric::Rouge1 => "rouge1",
            Metric::Rouge2 => "rouge2",
            Metric::RougeL => "rougeL",
        }
    }

    /// Per-sample score against one reference.
    fn sample(self, cand: &[String], reference: &[String]) -> Result<f64> {
        let refs = std::slice::from_ref(&reference.to_vec()).to_vec();
        Ok(match self {
            Metric::Bleu1 => sentence_bleu(cand, &refs, 1)?,
            Metric::Bleu2 => sentence_bleu(cand, &refs, 2)?,
            Metric::Rouge1 => rouge_n(cand, reference, 1).f1,
            Metric::Rouge2 => rouge_n(cand, reference, 2).f1,
            Metric::RougeL => rouge_l(cand, reference).f1,
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = GenexError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GenexError::Config(format!("unknown metric {s:?}")))
    }
}

/// A system output. An `explanation` field is read as the prediction, so a
/// gold file doubles as a perfect system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub query: String,
    pub document: String,
    #[serde(alias = "explanation")]
    pub prediction: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub query: String,
    pub document: String,
    pub explanation: String,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl_strict(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Corpus BLEU for BLEU metrics, mean F1 for ROUGE.
    pub corpus: f64,
    /// Best score over the sample's references; BLEU uses add-one smoothing
    /// on orders two and up here.
    pub per_sample: Vec<f64>,
    pub sample_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub ids: Vec<String>,
    pub metrics: IndexMap<String, MetricReport>,
}

impl CorpusReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<CorpusReport> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per sample, then a `corpus` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id");
        for name in self.metrics.keys() {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(&id.replace(['\t', '\n'], " "));
            for m in self.metrics.values() {
                out.push_str(&format!("\t{}", m.per_sample[i]));
            }
            out.push('\n');
        }
        out.push_str("corpus");
        for m in self.metrics.values() {
            out.push_str(&format!("\t{}", m.corpus));
        }
        out.push('\n');
        out
    }

    pub fn metric(&self, m: Metric) -> Option<&MetricReport> {
        self.metrics.get(m.name())
    }
}

fn key(id: &Option<String>, query: &str, document: &str) -> String {
    match id {
        Some(id) => format!("id:{id}"),
        None => format!("qd:{query}\u{1f}{document}"),
    }
}

/// Scores predictions against gold explanations. Records align by `id`
/// when present, otherwise by (query, document); every prediction needs
/// gold and every gold pair needs a prediction.
pub fn corpus_report(preds: &[PredictionRecord], gold: &[GoldRecord], metrics: &[Metric]) -> Result<CorpusReport> {
    if preds.is_empty() {
        return Err(GenexError::Data("no predictions".into()));
    }
    let mut refs: IndexMap<String, Vec<Vec<String>>> = IndexMap::new();
    for g in gold {
        refs.entry(key(&g.id, &g.query, &g.document))
            .or_default()
            .push(words(&g.explanation));
    }
    let mut seen = std::collections::HashSet::new();
    let mut cands = Vec::with_capacity(preds.len());
    let mut cand_refs = Vec::with_capacity(preds.len());
    let mut ids = Vec::with_capacity(preds.len());
    for (i, p) in preds.iter().enumerate() {
        let k = key(&p.id, &p.query, &p.document);
        let r = refs
            .get(&k)
            .ok_or_else(|| GenexError::Data(format!("prediction {} has no gold explanation", i + 1)))?;
        if !seen.insert(k.clone()) {
            return Err(GenexError::Data(format!("prediction {} duplicates an earlier one", i + 1)));
        }
        cands.push(words(&p.prediction));
        cand_refs.push(r.clone());
        ids.push(p.id.clone().unwrap_or_else(|| (i + 1).to_string()));
    }
    if let Some((k, _)) = refs.iter().find(|(k, _)| !seen.contains(*k)) {
        let shown = k.split_once(':').map_or(k.as_str(), |x| x.1).replace('\u{1f}', " | ");
        return Err(GenexError::Data(format!("gold record without prediction: {shown}")));
    }
    let mut out = IndexMap::new();
    for &m in metrics {
        let per_sample: Vec<f64> = cands
            .par_iter()
            .zip(&cand_refs)
            .map(|(c, rs)| {
                rs.iter()
                    .map(|r| m.sample(c, r))
                    .try_fold(0.0f64, |best, s| s.map(|s| best.max(s)))
            })
            .collect::<Result<_>>()?;
        let sample_mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let corpus = match m {
            Metric::Bleu1 => corpus_bleu(&cands, &cand_refs, 1)?,
            Metric::Bleu2 => corpus_bleu(&cands, &cand_refs, 2)?,
            _ => sample_mean,
        };
        out.insert(
            m.name().to_string(),
            MetricReport {
                corpus,
                per_sample,
                sample_mean,
            },
        );
    }
    Ok(CorpusReport { ids, metrics: out })
}
