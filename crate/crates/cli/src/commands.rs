use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use genex_core::baselines::{
    analyze, lime_explain, select_top_tokens, sensitivity_explain, textrank_keywords, ts_textrank_keywords,
    TermScore, TfIdfIndex,
};
use genex_core::config::KeyValues;
use genex_core::datagen::{
    build_anchor_triples, build_wiki_triples, default_stopwords, load_word_list, query_biased_summary,
    read_jsonl, read_jsonl_strict, synth_with_config, synth_word_list, write_jsonl, AnchorConfig, AnchorRecord,
    EmbeddingTable, ExplanationTriple, PageRecord, SynthConfig, TokenCounter, WikiArticle, DEFAULT_STOP_HEADERS,
};
use genex_core::decoding::{decode_many, DecodeOptions};
use genex_core::metrics::{corpus_report, paired_ttest, read_predictions, CorpusReport, GoldRecord, Metric, PredictionRecord, TTest};
use genex_core::model::{encode_input, encode_samples, ModelConfig, ModelParams, Variant};
use genex_core::selftest::{self, CheckOutcome};
use genex_core::tokenizer::Vocab;
use genex_core::training::{load_checkpoint, mix_seed, save_checkpoint, train, TrainConfig, TrainState};
use genex_core::{GenexError, Result};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    BaselineArgs, BuildAnchorsArgs, BuildVocabArgs, BuildWikiArgs, CliError, Command, DecodeArgs, EvaluateArgs,
    GradcheckArgs, Method, SelftestArgs, SummarizeArgs, SynthArgs, TrainArgs,
};

type CliResult = std::result::Result<(), CliError>;

pub fn run(cmd: Command, seed: u64) -> CliResult {
    match cmd {
        Command::BuildVocab(a) => build_vocab(a),
        Command::BuildWiki(a) => build_wiki(a),
        Command::BuildAnchors(a) => build_anchors(a),
        Command::Summarize(a) => summarize(a),
        Command::Synth(a) => synth(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Decode(a) => decode(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Baseline(a) => baseline(a, seed),
        Command::Gradcheck(a) => gradcheck(a, seed),
        Command::Selftest(a) => selftest_cmd(a, seed),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GenexError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn load_vocab(path: Option<&Path>) -> Result<Option<Vocab>> {
    path.map(Vocab::load).transpose()
}

fn counter(vocab: &Option<Vocab>) -> TokenCounter<'_> {
    match vocab {
        Some(v) => TokenCounter::Subword(v),
        None => TokenCounter::Whitespace,
    }
}

/// Keeps good records and logs how many lines failed to parse.
fn lenient<T>(path: &Path, rows: Vec<std::result::Result<T, String>>) -> Vec<T> {
    let mut bad = 0;
    let good: Vec<T> = rows
        .into_iter()
        .filter_map(|r| r.map_err(|e| {
            bad += 1;
            log::debug!("{}: {e}", path.display());
        }).ok())
        .collect();
    if bad > 0 {
        log::warn!("{}: skipped {bad} malformed lines", path.display());
    }
    good
}

fn build_vocab(a: BuildVocabArgs) -> CliResult {
    let mut texts = Vec::new();
    for p in &a.input {
        for t in read_jsonl_strict::<ExplanationTriple>(p)? {
            texts.extend([t.query, t.document, t.explanation]);
        }
    }
    let vocab = Vocab::train(texts.iter().map(String::as_str), a.size)?;
    vocab.save(&a.out)?;
    log::info!("{} pieces from {} texts", vocab.len(), texts.len());
    Ok(())
}

fn build_wiki(a: BuildWikiArgs) -> CliResult {
    let articles = read_jsonl::<WikiArticle>(&a.input)?;
    let headers: HashSet<String> = match &a.stop_headers {
        Some(p) => load_word_list(p)?,
        None => DEFAULT_STOP_HEADERS.iter().map(|s| s.to_string()).collect(),
    };
    let vocab = load_vocab(a.vocab.as_deref())?;
    let (triples, stats) = build_wiki_triples(&articles, &headers, counter(&vocab));
    write_jsonl(&a.out, &triples)?;
    log::info!("{} articles -> {} triples ({} malformed)", stats.articles, stats.emitted, stats.malformed);
    if let Some(p) = &a.stats {
        write_json(p, &stats)?;
    }
    Ok(())
}

fn build_anchors(a: BuildAnchorsArgs) -> CliResult {
    let records = lenient(&a.anchors, read_jsonl::<AnchorRecord>(&a.anchors)?);
    let pages: HashMap<String, String> = lenient(&a.pages, read_jsonl::<PageRecord>(&a.pages)?)
        .into_iter()
        .map(|p| (p.page, p.text))
        .collect();
    let stopwords = match &a.stopwords {
        Some(p) => load_word_list(p)?,
        None => default_stopwords(),
    };
    let embeddings = a.embeddings.as_deref().map(EmbeddingTable::load).transpose()?;
    let mut cfg = AnchorConfig::new(stopwords);
    if let Some(p) = &a.blocklist {
        cfg.blocklist = load_word_list(p)?;
    }
    cfg.summary_cap = a.summary_cap;
    cfg.embeddings = embeddings.as_ref();
    let vocab = load_vocab(a.vocab.as_deref())?;
    let (triples, stats) = build_anchor_triples(&records, &pages, &cfg, counter(&vocab))?;
    write_jsonl(&a.out, &triples)?;
    log::info!(
        "{} anchors -> {} triples ({} missing pages)",
        stats.records,
        stats.emitted,
        stats.missing_pages
    );
    if let Some(p) = &a.stats {
        write_json(p, &stats)?;
    }
    Ok(())
}

fn summarize(a: SummarizeArgs) -> CliResult {
    let triples: Vec<ExplanationTriple> = read_jsonl_strict(&a.input)?;
    let embeddings = a.embeddings.as_deref().map(EmbeddingTable::load).transpose()?;
    let vocab = load_vocab(a.vocab.as_deref())?;
    let count = counter(&vocab);
    let out: Vec<ExplanationTriple> = triples
        .into_par_iter()
        .map(|mut t| {
            t.document = query_biased_summary(&t.document, &t.query, embeddings.as_ref(), a.cap, count)?;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    write_jsonl(&a.out, &out)?;
    Ok(())
}

fn synth(a: SynthArgs, seed: u64) -> CliResult {
    let cfg = SynthConfig {
        fields_per_doc: a.fields,
        min_value_words: a.min_value_words,
        max_value_words: a.max_value_words,
        filler_words: a.filler_words,
    };
    let triples = synth_with_config(a.n, &synth_word_list(a.words), &cfg, seed)?;
    write_jsonl(&a.out, &triples)?;
    Ok(())
}

/// Config file, then `--set` overrides.
fn settings(config: Option<&Path>, set: &[String]) -> std::result::Result<KeyValues, CliError> {
    let mut kv = match config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new(),
    };
    for s in set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

fn model_config(kv: &KeyValues) -> Result<ModelConfig> {
    let variant = match kv.get_str("variant") {
        Some(v) => v.parse()?,
        None => Variant::Genex,
    };
    let cfg = ModelConfig::desk(variant).apply(kv)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct EpochLine {
    epoch: u64,
    global_step: u64,
    batches: usize,
    mean_loss: f64,
}

fn train_cmd(a: TrainArgs, seed: u64) -> CliResult {
    let vocab = Vocab::load(&a.vocab)?;
    let mut kv = settings(a.config.as_deref(), &a.set)?;
    let known: Vec<&str> = ModelConfig::keys().iter().chain(TrainConfig::keys()).copied().collect();
    kv.reject_unknown(&known)?;
    if let Some(e) = a.epochs {
        kv.set("epochs", e);
    }
    match kv.get::<usize>("vocab_size")? {
        Some(v) if v != vocab.len() => {
            return Err(GenexError::Config(format!(
                "vocab_size {v} in the settings but the vocabulary has {} pieces",
                vocab.len()
            ))
            .into())
        }
        _ => kv.set("vocab_size", vocab.len()),
    }
    let mut state = match &a.resume {
        Some(p) => {
            let mut s = load_checkpoint(p)?;
            if s.model.vocab_size != vocab.len() {
                return Err(GenexError::Config("checkpoint and vocabulary sizes differ".into()).into());
            }
            s.train = s.train.clone().apply(&kv)?;
            s
        }
        None => {
            let model = model_config(&kv)?;
            let train = TrainConfig::default().apply(&kv)?;
            TrainState::new(model, train, seed)?
        }
    };
    let triples: Vec<ExplanationTriple> = read_jsonl_strict(&a.data)?;
    let samples = encode_samples(&vocab, &triples, &state.model)?;
    let remaining = state.train.epochs.saturating_sub(state.epoch as usize);
    log::info!(
        "{} samples, {} parameters, epochs {}..{}",
        samples.len(),
        state.params.num_elements(),
        state.epoch,
        state.train.epochs
    );
    let mut lines = String::new();
    save_checkpoint(&state, &a.out)?;
    train(&mut state, &samples, remaining, |s, r| {
        save_checkpoint(s, &a.out)?;
        let line = EpochLine {
            epoch: r.epoch,
            global_step: r.global_step,
            batches: r.batches,
            mean_loss: r.mean_loss,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
        Ok(())
    })?;
    if let Some(p) = &a.log {
        write_text(p, &lines)?;
    }
    Ok(())
}

/// Input rows for decoding and baselines; extra fields are ignored.
#[derive(Deserialize)]
struct QueryDoc {
    #[serde(default)]
    id: Option<String>,
    query: String,
    document: String,
}

fn decode(a: DecodeArgs) -> CliResult {
    let state = load_checkpoint(&a.checkpoint)?;
    let vocab = Vocab::load(&a.vocab)?;
    if vocab.len() != state.model.vocab_size {
        return Err(GenexError::Config(format!(
            "vocabulary has {} pieces, model expects {}",
            vocab.len(),
            state.model.vocab_size
        ))
        .into());
    }
    let rows: Vec<QueryDoc> = read_jsonl_strict(&a.input)?;
    let cfg = &state.model;
    let inputs = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            encode_input(&vocab, &r.query, &r.document, cfg)
                .map_err(|e| GenexError::Data(format!("record {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = DecodeOptions {
        max_len: a.max_len,
        ban_query_logits: a.ban_query,
    };
    let params: ModelParams<f32> = state.params;
    let ids = decode_many(&params, cfg, &inputs, &opts)?;
    let preds = rows
        .into_iter()
        .zip(ids)
        .map(|(r, ids)| {
            Ok(PredictionRecord {
                id: r.id,
                query: r.query,
                document: r.document,
                prediction: vocab.decode(&ids)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&a.out, &preds)?;
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    system: String,
    baseline: String,
    ttest: IndexMap<String, TTest>,
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let metrics = a
        .metrics
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Metric>>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if metrics.is_empty() {
        return Err(CliError::Usage("--metrics lists no metric".into()));
    }
    let gold: Vec<GoldRecord> = read_jsonl_strict(&a.gold)?;
    let report = corpus_report(&read_predictions(&a.pred)?, &gold, &metrics)?;
    for m in &metrics {
        let r = report.metric(*m).expect("requested metric");
        println!("{}\tcorpus {:.6}\tmean {:.6}", m.name(), r.corpus, r.sample_mean);
    }
    let comparison = match &a.compare {
        Some(p) => Some(compare(&a.pred, p, &report, &corpus_report(&read_predictions(p)?, &gold, &metrics)?, &metrics)?),
        None => None,
    };
    if let Some(p) = &a.out {
        match &comparison {
            None => write_text(p, &report.to_json()?)?,
            Some(c) => {
                #[derive(Serialize)]
                struct Full<'a> {
                    #[serde(flatten)]
                    report: &'a CorpusReport,
                    comparison: &'a Comparison,
                }
                write_json(p, &Full { report: &report, comparison: c })?;
            }
        }
    }
    if let Some(p) = &a.tsv {
        write_text(p, &report.to_tsv())?;
    }
    Ok(())
}

fn compare(pa: &Path, pb: &Path, a: &CorpusReport, b: &CorpusReport, metrics: &[Metric]) -> Result<Comparison> {
    if a.ids != b.ids {
        return Err(GenexError::Data("compared systems must list the same samples in the same order".into()));
    }
    let mut out = IndexMap::new();
    for m in metrics {
        let t = paired_ttest(
            &a.metric(*m).expect("requested").per_sample,
            &b.metric(*m).expect("requested").per_sample,
        )?;
        println!("{}\tt {:.4}\tp {:.6}", m.name(), t.t, t.p);
        out.insert(m.name().to_string(), t);
    }
    Ok(Comparison {
        system: pa.display().to_string(),
        baseline: pb.display().to_string(),
        ttest: out,
    })
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    scores: &'a [TermScore],
}

fn baseline(a: BaselineArgs, seed: u64) -> CliResult {
    let rows: Vec<QueryDoc> = read_jsonl_strict(&a.input)?;
    let stopwords = match &a.stopwords {
        Some(p) => load_word_list(p)?,
        None => default_stopwords(),
    };
    let index = if matches!(a.method, Method::Lime | Method::Sensitivity) {
        let corpus: Vec<String> = match &a.corpus {
            Some(p) => read_jsonl_strict::<QueryDoc>(p)?.into_iter().map(|r| r.document).collect(),
            None => rows.iter().map(|r| r.document.clone()).collect(),
        };
        Some(TfIdfIndex::build(corpus.iter().map(String::as_str))?)
    } else {
        None
    };
    let scores: Vec<Vec<TermScore>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| match a.method {
            Method::Textrank => textrank_keywords(&r.document, a.k, a.window, &stopwords),
            Method::TsTextrank => ts_textrank_keywords(&r.document, &r.query, a.k, a.window, &stopwords),
            Method::Lime => lime_explain(
                &analyze(&r.query),
                &analyze(&r.document),
                index.as_ref().expect("built for lime"),
                a.samples,
                mix_seed(seed, 0x4c49, i as u64),
            ),
            Method::Sensitivity => Ok(sensitivity_explain(
                &analyze(&r.query),
                &analyze(&r.document),
                index.as_ref().expect("built for sensitivity"),
            )),
        })
        .collect::<Result<_>>()?;
    let preds: Vec<PredictionRecord> = rows
        .iter()
        .zip(&scores)
        .map(|(r, s)| PredictionRecord {
            id: r.id.clone(),
            query: r.query.clone(),
            document: r.document.clone(),
            prediction: select_top_tokens(s).join(" "),
        })
        .collect();
    write_jsonl(&a.out, &preds)?;
    if let Some(p) = &a.scores {
        let lines: Vec<ScoreLine> = rows
            .iter()
            .zip(&scores)
            .map(|(r, s)| ScoreLine {
                id: r.id.as_deref(),
                scores: s,
            })
            .collect();
        write_jsonl(p, &lines)?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs, seed: u64) -> CliResult {
    let configs: Vec<ModelConfig> = if a.config.is_none() && a.set.is_empty() {
        Variant::ALL.iter().map(|&v| ModelConfig::tiny(v, 16)).collect()
    } else {
        let kv = settings(a.config.as_deref(), &a.set)?;
        let known: Vec<&str> = ModelConfig::keys().iter().chain(TrainConfig::keys()).copied().collect();
        kv.reject_unknown(&known)?;
        vec![model_config(&kv)?]
    };
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for cfg in &configs {
        let r = selftest::gradcheck_config(cfg, seed, a.per_tensor, a.rtol, a.atol)?;
        println!(
            "{}\tchecked {}\tmax relative error {:.3e}\tmax absolute error {:.3e}",
            cfg.variant, r.checked, r.max_rel_error, r.max_abs_error
        );
        worst = worst.max(r.max_rel_error);
        if !r.passed() {
            failed.push(format!("{} ({} mismatches)", cfg.variant, r.mismatches.len()));
        }
    }
    println!("max relative error {worst:.3e}");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn selftest_cmd(a: SelftestArgs, seed: u64) -> CliResult {
    let mut outcomes: Vec<CheckOutcome> = selftest::run_quick(seed);
    if a.full {
        outcomes.extend(selftest::run_learning(seed));
    }
    let mut text = String::new();
    for o in &outcomes {
        text.push_str(&o.to_string());
        text.push('\n');
    }
    print!("{text}");
    if let Some(p) = &a.out {
        write_text(p, &text)?;
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed checks: {}", failed.join(", "))))
    }
}
