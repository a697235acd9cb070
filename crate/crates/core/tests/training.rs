use genex_core::datagen::{synth_keyvalue_dataset, synth_word_list};
use genex_core::model::{encode_samples, ModelConfig, Sample, Variant};
use genex_core::tokenizer::Vocab;
use genex_core::training::*;
use genex_core::GenexError;

fn toy_samples(n: usize, variant: Variant, seed: u64) -> (ModelConfig, Vec<Sample>) {
    let words = synth_word_list(60);
    let triples = synth_keyvalue_dataset(n, &words, 3, seed).unwrap();
    let corpus: Vec<&str> = triples
        .iter()
        .flat_map(|t| [t.query.as_str(), t.document.as_str(), t.explanation.as_str()])
        .collect();
    let vocab = Vocab::train(corpus, 10_000).unwrap();
    let mut cfg = ModelConfig::tiny(variant, vocab.len());
    cfg.max_input_len = 64;
    let samples = encode_samples(&vocab, &triples, &cfg).unwrap();
    (cfg, samples)
}

fn small_train() -> TrainConfig {
    let mut t = TrainConfig::default();
    t.adam.lr = 1e-3;
    t.batch_tokens = 200;
    t
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (cfg, samples) = toy_samples(12, Variant::Genex, 1);
    let mut st = TrainState::new(cfg, small_train(), 9).unwrap();
    st.train_epoch(&samples).unwrap();
    let bytes = checkpoint_bytes(&st);
    assert!(bytes.starts_with(MAGIC));
    let back = parse_checkpoint(&bytes, None).unwrap();
    assert_eq!(back, st);
    assert_eq!(checkpoint_bytes(&back), bytes);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (cfg, _) = toy_samples(4, Variant::Orig, 1);
    let st = TrainState::new(cfg, small_train(), 2).unwrap();
    let bytes = checkpoint_bytes(&st);
    for cut in [0, 3, MAGIC.len() + 4, bytes.len() / 2, bytes.len() - 1] {
        let err = parse_checkpoint(&bytes[..cut], None).unwrap_err();
        assert!(matches!(err, GenexError::Checkpoint(_)), "cut {cut}: {err}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(parse_checkpoint(&extra, None).is_err());
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(parse_checkpoint(&bad_magic, None).is_err());
}

#[test]
fn mismatched_config_names_a_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let (cfg, _) = toy_samples(4, Variant::Genex, 1);
    let st = TrainState::new(cfg.clone(), small_train(), 2).unwrap();
    save_checkpoint(&st, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), st);
    let mut wider = cfg.clone();
    wider.ffn_dim = 24;
    let msg = load_checkpoint_for(&path, &wider).unwrap_err().to_string();
    assert!(msg.contains("enc.0.ffn.w1"), "{msg}");
    let orig = ModelConfig { variant: Variant::Orig, ..cfg };
    let msg = load_checkpoint_for(&path, &orig).unwrap_err().to_string();
    assert!(msg.contains("qattn."), "{msg}");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (mut cfg, samples) = toy_samples(16, Variant::Genex, 3);
    cfg.dropout = 0.1;
    let mut straight = TrainState::new(cfg.clone(), small_train(), 4).unwrap();
    train(&mut straight, &samples, 3, |_, _| Ok(())).unwrap();

    let mut first = TrainState::new(cfg, small_train(), 4).unwrap();
    train(&mut first, &samples, 2, |_, _| Ok(())).unwrap();
    let mut resumed = parse_checkpoint(&checkpoint_bytes(&first), None).unwrap();
    train(&mut resumed, &samples, 1, |_, _| Ok(())).unwrap();
    assert_eq!(checkpoint_bytes(&resumed), checkpoint_bytes(&straight));
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let (cfg, samples) = toy_samples(4, Variant::SepQDoc, 1);
    let mut st = TrainState::new(cfg.clone(), small_train(), 6).unwrap();
    let before = st.clone();
    train(&mut st, &samples, 0, |_, _| Ok(())).unwrap();
    assert_eq!(st, before);
    assert_eq!(st.params, genex_core::model::ModelParams::init(&cfg, mix_seed(6, 1, 0)).unwrap());
}

#[test]
fn every_sample_is_seen_once_per_epoch() {
    let (cfg, samples) = toy_samples(30, Variant::SegQToks, 2);
    let st = TrainState::new(cfg, small_train(), 1).unwrap();
    let mut seen: Vec<usize> = st.epoch_batches(&samples).into_iter().flat_map(|b| b.indices).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..30).collect::<Vec<_>>());
}

#[test]
fn toy_genex_loss_falls_over_five_epochs() {
    let words = synth_word_list(120);
    let triples = synth_keyvalue_dataset(64, &words, 4, 7).unwrap();
    let corpus: Vec<&str> = triples
        .iter()
        .flat_map(|t| [t.query.as_str(), t.document.as_str(), t.explanation.as_str()])
        .collect();
    let vocab = Vocab::train(corpus, 100_000).unwrap();
    let mut cfg = ModelConfig::desk(Variant::Genex);
    cfg.vocab_size = vocab.len();
    let samples = encode_samples(&vocab, &triples, &cfg).unwrap();
    let mut st = TrainState::new(cfg, small_train(), 1).unwrap();
    train(&mut st, &samples, 5, |_, _| Ok(())).unwrap();
    let l = &st.epoch_losses;
    assert!(l[4] < l[0], "{l:?}");
}

#[test]
fn non_finite_loss_is_reported_with_position() {
    let (cfg, samples) = toy_samples(4, Variant::Orig, 1);
    let mut st = TrainState::new(cfg, small_train(), 1).unwrap();
    for (_, t) in st.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = f32::NAN);
    }
    let err = st.train_epoch(&samples).unwrap_err();
    assert!(err.is_numeric(), "{err:?}");
    assert!(err.to_string().contains("epoch 0"), "{err}");
}
