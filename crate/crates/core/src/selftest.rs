//! Invariant checks runnable outside the test harness.
//!
//! Every check is deterministic given its seed and prints no timings, so the
//! report is byte-identical across runs and thread counts.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{pagerank, select_top_tokens, PageRankOptions, TermGraph, TermScore};
use crate::datagen::{
    build_anchor_triples, build_wiki_triples, default_stopwords, parse_jsonl, to_jsonl, AnchorConfig, AnchorRecord,
    PageRecord, TokenCounter, WikiArticle, DEFAULT_STOP_HEADERS,
};
use crate::metrics::{corpus_bleu, paired_ttest, rouge_l, rouge_n, words};
use crate::model::{
    batch_loss, decode_batch, encode_batch, encode_ids, encode_target, qattn_mask, Bound, ModelConfig,
    ModelParams, Sample, Variant,
};
use crate::error::{GenexError, Result};
use crate::tensor::gradcheck::{analytic_grads, compare_elements, GradCheckReport};
use crate::tokenizer::SEP;
use crate::tensor::{AttnBlock, AttnLayout, Graph};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: std::result::Result<String, String>) -> Self {
        match r {
            Ok(d) => CheckOutcome::new(name, true, d),
            Err(d) => CheckOutcome::new(name, false, d),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn fail<T>(msg: impl Into<String>) -> std::result::Result<T, String> {
    Err(msg.into())
}

fn err_str(e: crate::GenexError) -> String {
    e.to_string()
}

/// Finite-difference check of a freshly initialised model of `cfg` on one
/// random sample. `per_tensor` limits how many elements of each parameter
/// are probed; `None` probes all of them.
pub fn gradcheck_config(
    cfg: &ModelConfig,
    seed: u64,
    per_tensor: Option<usize>,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let params = ModelParams::<f64>::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772);
    let lo = SEP + 1;
    let hi = cfg.vocab_size as u32;
    if hi <= lo {
        return Err(GenexError::Config("vocab_size leaves no ordinary tokens".into()));
    }
    let q: Vec<u32> = (0..3).map(|_| rng.random_range(lo..hi)).collect();
    let mut d: Vec<u32> = (0..6).map(|_| rng.random_range(lo..hi)).collect();
    d[2] = q[0];
    let e: Vec<u32> = (0..3).map(|_| rng.random_range(lo..hi)).collect();
    let sample = Sample {
        input: encode_ids(&q, &d, cfg)?,
        target: encode_target(&e, cfg),
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let tensors = params.tensors();
    let mut f = |g: &mut Graph<f64>, vars: &[crate::tensor::Var]| {
        let b = Bound::new(names.iter().map(String::as_str), vars.to_vec());
        batch_loss(g, &b, cfg, &[&sample])
    };
    let (_, analytic) = analytic_grads(&mut f, &tensors)?;
    let mut positions = Vec::new();
    for (pi, t) in tensors.iter().enumerate() {
        match per_tensor {
            Some(k) if k < t.numel() => {
                let mut picked = rand::seq::index::sample(&mut rng, t.numel(), k).into_vec();
                picked.sort_unstable();
                positions.extend(picked.into_iter().map(|e| (pi, e)));
            }
            _ => positions.extend((0..t.numel()).map(|e| (pi, e))),
        }
    }
    compare_elements(&mut f, &tensors, &analytic, &positions, 1e-5, rtol, atol)
}

/// Finite-difference check of every parameter of every variant at
/// d = 8, V = 16 with one-layer stacks.
pub fn check_gradients(seed: u64) -> CheckOutcome {
    let run = || -> std::result::Result<String, String> {
        let mut worst = 0.0f64;
        let mut total = 0;
        for variant in Variant::ALL {
            let cfg = ModelConfig::tiny(variant, 16);
            let report = gradcheck_config(&cfg, seed, None, 1e-3, 1e-6).map_err(err_str)?;
            let expected: usize = ModelParams::<f64>::expected_shapes(&cfg)
                .iter()
                .map(|(_, s)| s.iter().product::<usize>())
                .sum();
            if report.checked != expected {
                return fail(format!("{variant}: checked {} of {expected}", report.checked));
            }
            if let Some(m) = report.mismatches.first() {
                let shapes = ModelParams::<f64>::expected_shapes(&cfg);
                return fail(format!(
                    "{variant}: {} mismatches, first {}[{}] analytic {:e} numeric {:e}",
                    report.mismatches.len(),
                    shapes[m.param].0,
                    m.element,
                    m.analytic,
                    m.numeric
                ));
            }
            worst = worst.max(report.max_rel_error);
            total += report.checked;
        }
        Ok(format!("{total} parameters over 4 variants, max relative error {worst:.3e}"))
    };
    CheckOutcome::from_result("gradcheck", run())
}

fn random_ids(rng: &mut ChaCha8Rng, len: usize, from: &[u32], reuse: &[u32], p_reuse: f64) -> Vec<u32> {
    (0..len)
        .map(|_| {
            if !reuse.is_empty() && rng.random_bool(p_reuse) {
                reuse[rng.random_range(0..reuse.len())]
            } else {
                from[rng.random_range(0..from.len())]
            }
        })
        .collect()
}

/// One randomized mask-structure case with `m` query and `n` document
/// tokens (separators excluded).
pub fn mask_case(m: usize, n: usize, seed: u64) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<u32> = (5..16).collect();
    let q = random_ids(&mut rng, m, &pool, &[], 0.0);
    let d = random_ids(&mut rng, n, &pool, &q, 0.3);
    let e_len = rng.random_range(1..6);
    let e = random_ids(&mut rng, e_len, &pool, &[], 0.0);
    for variant in [Variant::Genex, Variant::SegQToks] {
        let mut cfg = ModelConfig::tiny(variant, 16);
        cfg.max_input_len = 48;
        let params = ModelParams::<f64>::init(&cfg, seed).map_err(err_str)?;
        let input = encode_ids(&q, &d, &cfg).map_err(err_str)?;
        let target = encode_target(&e, &cfg);
        let dec_in = &target[..target.len() - 1];
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let enc = encode_batch(&mut g, &b, &cfg, &[&input]).map_err(err_str)?;
        let dec = decode_batch(&mut g, &b, &cfg, &enc, &[dec_in]).map_err(err_str)?;
        let mask = &enc.masks[0];

        if let Some((mq, nd)) = mask.qattn {
            for &w in &enc.qattn_attn {
                let weights = g.attention_weights(w).ok_or("missing attention record")?;
                for head in &weights[0] {
                    for i in 0..nd {
                        let row = &head[i * (mq + nd)..(i + 1) * (mq + nd)];
                        let sum: f64 = row.iter().sum();
                        if (sum - 1.0).abs() > 1e-9 {
                            return fail(format!("query-attention row {i} sums to {sum}"));
                        }
                        for j in 0..nd {
                            if j != i && row[mq + j] != 0.0 {
                                return fail(format!("doc {i} attends doc {j} with {}", row[mq + j]));
                            }
                        }
                    }
                }
            }
        }

        let mem_len = mask.dec_cross.len();
        for &w in &dec.cross_attn {
            let weights = g.attention_weights(w).ok_or("missing attention record")?;
            for head in &weights[0] {
                for (r, row) in head.chunks(mem_len).enumerate() {
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return fail(format!("{variant} cross row {r} sums to {sum}"));
                    }
                    for (c, (&p, &ok)) in row.iter().zip(&mask.dec_cross).enumerate() {
                        if !ok && p != 0.0 {
                            return fail(format!("{variant} masked memory {c} has weight {p}"));
                        }
                    }
                }
            }
        }

        // Overwrite masked memory rows with noise: the decoder must not notice.
        if mask.dec_cross.iter().any(|&ok| !ok) {
            let base = g.value(dec.log_probs).to_vec();
            let dm = cfg.d_model;
            let mut mem = g.value(enc.memory).to_vec();
            for (c, &ok) in mask.dec_cross.iter().enumerate() {
                if !ok {
                    for x in &mut mem[c * dm..(c + 1) * dm] {
                        *x += rng.random_range(-5.0..5.0);
                    }
                }
            }
            let mut enc2 = enc.clone();
            enc2.memory = g.constant(vec![mem_len, dm], mem).map_err(err_str)?;
            let again = decode_batch(&mut g, &b, &cfg, &enc2, &[dec_in]).map_err(err_str)?;
            if g.value(again.log_probs) != base.as_slice() {
                return fail(format!("{variant}: perturbing masked memory changed the output"));
            }
        }
    }

    // Query attention in isolation: document rows j ≠ i never reach row i.
    let (mq, nd, dm) = (m + 1, n + 1, 8);
    let mut g = Graph::<f64>::new();
    let rand_mat = |rows: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..rows * dm).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let qv = rand_mat(nd, &mut rng);
    let kv = rand_mat(mq + nd, &mut rng);
    let vv = rand_mat(mq + nd, &mut rng);
    let layout = Arc::new(AttnLayout {
        blocks: vec![AttnBlock {
            q_start: 0,
            q_len: nd,
            k_start: 0,
            k_len: mq + nd,
            allowed: qattn_mask(mq, nd),
        }],
    });
    let attend = |g: &mut Graph<f64>, k: Vec<f64>, v: Vec<f64>| -> std::result::Result<Vec<f64>, String> {
        let q = g.constant(vec![nd, dm], qv.clone()).map_err(err_str)?;
        let k = g.constant(vec![mq + nd, dm], k).map_err(err_str)?;
        let v = g.constant(vec![mq + nd, dm], v).map_err(err_str)?;
        let out = g.attention(q, k, v, 2, layout.clone()).map_err(err_str)?;
        Ok(g.value(out).to_vec())
    };
    let base = attend(&mut g, kv.clone(), vv.clone())?;
    let j = rng.random_range(0..nd);
    let (mut k2, mut v2) = (kv, vv);
    for x in k2[(mq + j) * dm..(mq + j + 1) * dm].iter_mut().chain(&mut v2[(mq + j) * dm..(mq + j + 1) * dm]) {
        *x += 3.0;
    }
    let out = attend(&mut g, k2, v2)?;
    for i in (0..nd).filter(|&i| i != j) {
        if out[i * dm..(i + 1) * dm] != base[i * dm..(i + 1) * dm] {
            return fail(format!("perturbing document row {j} changed query-attention row {i}"));
        }
    }
    Ok(())
}

/// `cases` random mask cases with `m ≤ 8`, `n ≤ 32`.
pub fn check_masks(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let (m, n) = (rng.random_range(1..=8), rng.random_range(1..=32));
        if let Err(e) = mask_case(m, n, rng.random()) {
            return CheckOutcome::new("masks", false, format!("case {case} (m={m}, n={n}): {e}"));
        }
    }
    CheckOutcome::new("masks", true, format!("{cases} random cases"))
}

/// Stationary distribution from a dense linear solve; needs every vertex
/// to have an edge when `n > 1`.
pub fn dense_pagerank(w: &DMatrix<f64>, teleport: &[f64], damping: f64) -> Option<Vec<f64>> {
    let n = w.nrows();
    if n == 1 {
        return Some(vec![1.0]);
    }
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let s: f64 = w.row(i).sum();
        if s <= 0.0 {
            return None;
        }
        for j in 0..n {
            p[(i, j)] = w[(i, j)] / s;
        }
    }
    let a = DMatrix::identity(n, n) - p.transpose() * damping;
    let b = DVector::from_column_slice(teleport) * (1.0 - damping);
    a.lu().solve(&b).map(|x| x.iter().copied().collect())
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
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
    seen.into_iter().all(|s| s)
}

/// Every connected graph on up to `max_n` vertices against the dense solve,
/// plus the topic-sensitive fallback.
pub fn check_pagerank(max_n: usize) -> CheckOutcome {
    let run = || -> std::result::Result<String, String> {
        let opts = PageRankOptions::default();
        let mut graphs = 0;
        let mut worst = 0.0f64;
        for n in 1..=max_n {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            for bits in 0u64..(1 << pairs.len()) {
                let edges: Vec<(usize, usize)> =
                    pairs.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, &e)| e).collect();
                if !is_connected(n, &edges) {
                    continue;
                }
                let triples: Vec<(usize, usize, f64)> = edges.iter().map(|&(a, b)| (a, b, 1.0)).collect();
                let g = TermGraph::from_edges(n, &triples).map_err(err_str)?;
                let mut w = DMatrix::zeros(n, n);
                for &(a, b) in &edges {
                    w[(a, b)] = 1.0;
                    w[(b, a)] = 1.0;
                }
                let pr = pagerank(&g, None, &opts).map_err(err_str)?;
                let want = dense_pagerank(&w, &vec![1.0 / n as f64; n], opts.damping).ok_or("singular oracle")?;
                for (a, b) in pr.scores.iter().zip(&want) {
                    worst = worst.max((a - b).abs());
                }
                let uniform = vec![1.0 / n as f64; n];
                let explicit = pagerank(&g, Some(&uniform), &opts).map_err(err_str)?;
                if explicit != pr {
                    return fail(format!("explicit uniform teleport differs on graph {bits} (n={n})"));
                }
                graphs += 1;
            }
        }
        if worst >= 1e-6 {
            return fail(format!("max deviation {worst:e} over {graphs} graphs"));
        }
        let stop = default_stopwords();
        let doc = "river barges carry grain downstream while river ferries carry passengers across busy harbours";
        let plain = crate::baselines::textrank_keywords(doc, 20, 10, &stop).map_err(err_str)?;
        let ts = crate::baselines::ts_textrank_keywords(doc, "volcano", 20, 10, &stop).map_err(err_str)?;
        let same = plain.len() == ts.len()
            && plain.iter().zip(&ts).all(|(a, b)| a.term == b.term && a.score.to_bits() == b.score.to_bits());
        if !same {
            return fail("topic-sensitive fallback differs from TextRank");
        }
        Ok(format!("{graphs} connected graphs, max deviation {worst:.1e}; fallback bit-exact"))
    };
    CheckOutcome::from_result("pagerank", run())
}

/// Hand-derived metric values and exact identities.
pub fn check_metrics() -> CheckOutcome {
    let run = || -> std::result::Result<String, String> {
        let w = |s: &str| words(s);
        let mut checks: Vec<(&str, f64, f64, f64)> = vec![
            ("bleu1 partial", corpus_bleu(&[w("a b c")], &[vec![w("a b d")]], 1).map_err(err_str)?, 2.0 / 3.0, 1e-6),
            ("bleu1 brevity", corpus_bleu(&[w("a")], &[vec![w("a b")]], 1).map_err(err_str)?, (-1f64).exp(), 1e-6),
            ("rouge1 f", rouge_n(&w("a b"), &w("a b c"), 1).f1, 0.8, 1e-6),
            ("rougeL reversed", rouge_l(&w("c b a"), &w("a b c")).f1, 1.0 / 3.0, 1e-6),
        ];
        let t = paired_ttest(&[1.0, 2.0, 3.0], &[0.0; 3]).map_err(err_str)?;
        checks.push(("t statistic", t.t, 12f64.sqrt(), 1e-6));
        checks.push(("t-test p", t.p, 0.0742, 1e-4));
        for (name, got, want, tol) in &checks {
            if (got - want).abs() > *tol {
                return fail(format!("{name}: {got} vs {want}"));
            }
        }
        let x = w("query focused explanation");
        let exact = [
            corpus_bleu(&[x.clone()], &[vec![x.clone()]], 1).map_err(err_str)?,
            corpus_bleu(&[x.clone()], &[vec![x.clone()]], 2).map_err(err_str)?,
            rouge_n(&x, &x, 1).f1,
            rouge_n(&x, &x, 2).f1,
            rouge_l(&x, &x).f1,
        ];
        if exact.iter().any(|&v| v != 1.0) {
            return fail(format!("identity scores {exact:?}"));
        }
        let same = paired_ttest(&[0.1, 0.4], &[0.1, 0.4]).map_err(err_str)?;
        if same.p != 1.0 {
            return fail("identical samples do not give p = 1");
        }
        Ok(format!("{} hand values and 6 identities", checks.len()))
    };
    CheckOutcome::from_result("metrics", run())
}

const WIKI_INPUT: &str = include_str!("../data/golden/wiki_input.jsonl");
const WIKI_EXPECTED: &str = include_str!("../data/golden/wiki_expected.jsonl");
const ANCHORS_INPUT: &str = include_str!("../data/golden/anchors_input.jsonl");
const PAGES: &str = include_str!("../data/golden/pages.jsonl");
const ANCHORS_EXPECTED: &str = include_str!("../data/golden/anchors_expected.jsonl");

/// Byte-exact JSONL for the bundled wiki and anchor fixtures.
pub fn check_golden() -> CheckOutcome {
    let run = || -> std::result::Result<String, String> {
        let articles: Vec<std::result::Result<WikiArticle, String>> = parse_jsonl(WIKI_INPUT);
        let headers: HashSet<String> = DEFAULT_STOP_HEADERS.iter().map(|s| s.to_string()).collect();
        let (wiki, _) = build_wiki_triples(&articles, &headers, TokenCounter::Whitespace);
        if to_jsonl(&wiki).map_err(err_str)? != WIKI_EXPECTED {
            return fail("wiki output differs from the fixture");
        }
        let records: Vec<AnchorRecord> = parse_jsonl(ANCHORS_INPUT).into_iter().collect::<std::result::Result<_, _>>()?;
        let pages: HashMap<String, String> = parse_jsonl::<PageRecord>(PAGES)
            .into_iter()
            .map(|p| p.map(|p| (p.page, p.text)))
            .collect::<std::result::Result<_, _>>()?;
        let cfg = AnchorConfig::new(default_stopwords());
        let (anchors, _) = build_anchor_triples(&records, &pages, &cfg, TokenCounter::Whitespace).map_err(err_str)?;
        if to_jsonl(&anchors).map_err(err_str)? != ANCHORS_EXPECTED {
            return fail("anchor output differs from the fixture");
        }
        let gated = wiki.iter().chain(&anchors).all(|t| TokenCounter::Whitespace.passes_gates(t));
        if !gated {
            return fail("an emitted triple violates the length gates");
        }
        Ok(format!(
            "{} articles -> {} triples, {} anchors -> {} triples",
            articles.len(),
            wiki.len(),
            records.len(),
            anchors.len()
        ))
    };
    CheckOutcome::from_result("datagen-golden", run())
}

/// The selection rule on its defining examples.
pub fn check_select_top_tokens() -> CheckOutcome {
    let mk = |v: &[(&str, f64)]| -> Vec<TermScore> {
        v.iter()
            .map(|&(t, s)| TermScore {
                term: t.to_string(),
                score: s,
            })
            .collect()
    };
    let cases: [(&[(&str, f64)], &[&str]); 3] = [
        (&[("a", 10.0), ("b", 5.0), ("c", 0.9)], &["a", "b"]),
        (&[("a", 10.0), ("b", 9.0), ("c", 8.0), ("d", 7.0)], &["a", "b", "c"]),
        (&[("solo", 0.2)], &["solo"]),
    ];
    for (scores, want) in cases {
        let got = select_top_tokens(&mk(scores));
        if got != want {
            return CheckOutcome::new("select-top-tokens", false, format!("{scores:?} -> {got:?}, want {want:?}"));
        }
    }
    CheckOutcome::new("select-top-tokens", true, "3 cases")
}

/// Runs the fast suite in a fixed order.
pub fn run_quick(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_gradients(seed),
        check_masks(200, seed),
        check_metrics(),
        check_pagerank(5),
        check_golden(),
        check_select_top_tokens(),
    ]
}

/// Sizes for the synthetic learning runs.
#[derive(Clone, Debug)]
pub struct LearningPlan {
    pub overfit_n: usize,
    pub overfit_epochs: usize,
    pub overfit_target: f64,
    pub train_n: usize,
    pub test_n: usize,
    pub train_epochs: usize,
    pub em_target: f64,
    pub ablation_train_n: usize,
    pub ablation_epochs: usize,
    pub ablation_seeds: u64,
    pub lr: f64,
    pub batch_tokens: usize,
}

impl Default for LearningPlan {
    fn default() -> Self {
        LearningPlan {
            overfit_n: 64,
            overfit_epochs: 200,
            overfit_target: 0.95,
            train_n: 2000,
            test_n: 200,
            train_epochs: 30,
            em_target: 0.80,
            ablation_train_n: 500,
            ablation_epochs: 20,
            ablation_seeds: 3,
            lr: 3e-4,
            batch_tokens: 128,
        }
    }
}

struct ToyTask {
    vocab: crate::tokenizer::Vocab,
    triples: Vec<crate::datagen::ExplanationTriple>,
}

impl ToyTask {
    // The input layout depends on the variant.
    fn samples(&self, variant: Variant) -> Result<Vec<Sample>> {
        crate::model::encode_samples(&self.vocab, &self.triples, &toy_config(variant, self.vocab.len()))
    }
}

// Two single-word fields per document; every query word occurs in its document.
fn toy_task(n: usize, seed: u64) -> Result<ToyTask> {
    use crate::datagen::{synth_with_config, synth_word_list, SynthConfig};
    let sc = SynthConfig {
        fields_per_doc: 2,
        min_value_words: 1,
        max_value_words: 1,
        filler_words: 3,
    };
    let triples = synth_with_config(n, &synth_word_list(120), &sc, seed)?;
    let texts: Vec<&str> = triples
        .iter()
        .flat_map(|t| [t.query.as_str(), t.document.as_str(), t.explanation.as_str()])
        .collect();
    let vocab = crate::tokenizer::Vocab::train(texts.into_iter(), 100_000)?;
    Ok(ToyTask { vocab, triples })
}

fn toy_config(variant: Variant, vocab_size: usize) -> ModelConfig {
    let mut cfg = ModelConfig::desk(variant);
    cfg.vocab_size = vocab_size;
    cfg
}

fn toy_state(plan: &LearningPlan, variant: Variant, vocab_size: usize, seed: u64) -> Result<crate::training::TrainState> {
    let mut tc = crate::training::TrainConfig {
        batch_tokens: plan.batch_tokens,
        ..Default::default()
    };
    tc.adam.lr = plan.lr;
    crate::training::TrainState::new(toy_config(variant, vocab_size), tc, seed)
}

fn exact_match(state: &crate::training::TrainState, test: &[Sample]) -> Result<f64> {
    use crate::decoding::{decode_many, DecodeOptions};
    let inputs: Vec<_> = test.iter().map(|s| s.input.clone()).collect();
    let out = decode_many(&state.params, &state.model, &inputs, &DecodeOptions::default())?;
    let hits = out
        .iter()
        .zip(test)
        .filter(|(o, s)| o[..] == s.target[1..s.target.len() - 1])
        .count();
    Ok(hits as f64 / test.len().max(1) as f64)
}

fn overfit(plan: &LearningPlan, seed: u64) -> Result<CheckOutcome> {
    let task = toy_task(plan.overfit_n, seed)?;
    let samples = task.samples(Variant::Genex)?;
    let mut st = toy_state(plan, Variant::Genex, task.vocab.len(), seed)?;
    let mut acc = 0.0;
    for _ in 0..plan.overfit_epochs {
        st.train_epoch(&samples)?;
        acc = crate::decoding::teacher_forced_accuracy(&st.params, &st.model, &samples)?;
        if acc >= plan.overfit_target {
            break;
        }
    }
    Ok(CheckOutcome::new(
        "learn-overfit",
        acc >= plan.overfit_target,
        format!("{} triples, accuracy {acc:.3} after {} epochs", plan.overfit_n, st.epoch),
    ))
}

fn generalise(plan: &LearningPlan, seed: u64) -> Result<CheckOutcome> {
    let task = toy_task(plan.train_n + plan.test_n, seed)?;
    let samples = task.samples(Variant::Genex)?;
    let (train, test) = samples.split_at(plan.train_n);
    let mut st = toy_state(plan, Variant::Genex, task.vocab.len(), seed)?;
    for _ in 0..plan.train_epochs {
        st.train_epoch(train)?;
    }
    let em = exact_match(&st, test)?;
    Ok(CheckOutcome::new(
        "learn-heldout",
        em >= plan.em_target,
        format!("{} train, {} held out, EM {em:.3} after {} epochs", train.len(), test.len(), st.epoch),
    ))
}

fn ablation(plan: &LearningPlan, seed: u64) -> Result<CheckOutcome> {
    let mut means = [0.0; 2];
    for k in 0..plan.ablation_seeds {
        let s = crate::training::mix_seed(seed, 0x4142, k);
        let task = toy_task(plan.ablation_train_n + plan.test_n, s)?;
        for (i, variant) in [Variant::Orig, Variant::Genex].into_iter().enumerate() {
            let samples = task.samples(variant)?;
            let (train, test) = samples.split_at(plan.ablation_train_n);
            let mut st = toy_state(plan, variant, task.vocab.len(), s)?;
            for _ in 0..plan.ablation_epochs {
                st.train_epoch(train)?;
            }
            means[i] += exact_match(&st, test)? / plan.ablation_seeds as f64;
        }
    }
    Ok(CheckOutcome::new(
        "learn-ablation",
        means[1] >= means[0],
        format!("mean EM over {} seeds: genex {:.3}, orig {:.3}", plan.ablation_seeds, means[1], means[0]),
    ))
}

/// Synthetic learning checks with the toy model; minutes at the default plan.
pub fn run_learning(seed: u64) -> Vec<CheckOutcome> {
    run_learning_with(&LearningPlan::default(), seed)
}

pub fn run_learning_with(plan: &LearningPlan, seed: u64) -> Vec<CheckOutcome> {
    let runs: [(&str, fn(&LearningPlan, u64) -> Result<CheckOutcome>); 3] =
        [("learn-overfit", overfit), ("learn-heldout", generalise), ("learn-ablation", ablation)];
    runs.iter()
        .map(|(name, f)| f(plan, seed).unwrap_or_else(|e| CheckOutcome::new(name, false, format!("error: {e}"))))
        .collect()
}
