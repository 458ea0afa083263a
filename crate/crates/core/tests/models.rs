use salab::attention::RecordLevel;
use salab::data::{pad_and_batch, EncodedDocument, TruncationPolicy, Vocabulary};
use salab::diagnostics::{check_model, micro_docs};
use salab::models::{extract_attention_maps, predict_proba, Model, ModelConfig, ModelFamily};
use salab::nn::Graph;
use salab::rng::seeded;
use salab::{Error, MappingKind};

const MAPS: [MappingKind; 3] = [MappingKind::Softmax, MappingKind::Entmax15, MappingKind::Sparsemax];
const FAMILIES: [ModelFamily; 2] = [ModelFamily::Att, ModelFamily::Tr];

fn small(family: ModelFamily, mapping: MappingKind, vocab: usize) -> ModelConfig {
    let mut c = ModelConfig::new(family, vocab, mapping);
    c.embed_dim = 8;
    c.hidden = 8;
    c.max_words = 6;
    c.max_sents = 5;
    c
}

fn model(family: ModelFamily, mapping: MappingKind, seed: u64) -> Model {
    Model::init(small(family, mapping, 30), &mut seeded(seed)).unwrap()
}

fn logits(m: &Model, docs: &[EncodedDocument]) -> Vec<f64> {
    m.batches(docs, 64).iter().flat_map(|b| m.logits(b).unwrap()).collect()
}

fn doc(id: &str, sents: &[&[usize]]) -> EncodedDocument {
    EncodedDocument {
        id: id.into(),
        label: 0,
        sentences: sents.iter().map(|s| s.to_vec()).collect(),
    }
}

/// 30 ids; id 7 is the directive "cmo", every other id `i` is `t{i-2}`.
fn vocab() -> Vocabulary {
    let v = Vocabulary::from_tokens(
        (0..28).map(|i| if i + 2 == 7 { "cmo".into() } else { format!("t{i:02}") }).collect(),
        1,
    );
    assert_eq!(v.len(), 30);
    v
}

#[test]
fn one_token_document() {
    for f in FAMILIES {
        for m in MAPS {
            let model = model(f, m, 1);
            let d = doc("a", &[&[5]]);
            assert!(logits(&model, std::slice::from_ref(&d))[0].is_finite());
            let recs = extract_attention_maps(&model, &d, &vocab(), None).unwrap();
            assert!(recs.iter().all(|r| r.weights == vec![vec![1.0]]), "{f}-{m}");
        }
    }
}

#[test]
fn duplicates_score_identically() {
    for f in FAMILIES {
        let model = model(f, MappingKind::Sparsemax, 2);
        let d = doc("a", &[&[3, 4, 9], &[11, 2]]);
        let e = doc("b", &[&[8, 8, 8, 8]]);
        let l = logits(&model, &[d.clone(), e, d]);
        assert_eq!(l[0], l[2]);
    }
}

#[test]
fn padding_never_changes_logits() {
    for f in FAMILIES {
        for m in MAPS {
            let model = model(f, m, 3);
            let d = doc("a", &[&[3, 4], &[12]]);
            let alone = logits(&model, std::slice::from_ref(&d))[0];
            let long = doc("b", &[&[5, 6, 7, 8, 9, 10], &[1, 2, 3], &[4, 4, 4, 4], &[9]]);
            let mixed = logits(&model, &[long, d.clone()])[1];
            assert!((alone - mixed).abs() <= 1e-12, "{f}-{m}");
            // wider padding than the model's caps
            let b = pad_and_batch(std::slice::from_ref(&d), 12, 9, 1, TruncationPolicy::KeepEarliest);
            let wide = model.logits(&b[0]).unwrap()[0];
            assert!((alone - wide).abs() <= 1e-12, "{f}-{m}");
        }
    }
}

#[test]
fn full_model_gradients() {
    for f in FAMILIES {
        for m in MAPS {
            let r = check_model(f, m, 42).unwrap();
            assert!(r.passed(), "{f}-{m}: {r:?}");
        }
    }
}

#[test]
fn mapping_swap_and_checkpoint_reload() {
    let dir = tempfile::tempdir().unwrap();
    for f in FAMILIES {
        let trained = model(f, MappingKind::Sparsemax, 4);
        trained.save(dir.path(), "best").unwrap();
        let loaded = Model::load(&dir.path().join("model.cfg"), &dir.path().join("best.ckpt")).unwrap();
        assert_eq!(loaded.config, trained.config);
        assert_eq!(loaded.params, trained.params.quantized());
        for m in MAPS {
            let mut cfg = trained.config.clone();
            cfg.mapping = m;
            let swapped = Model::with_params(cfg, loaded.params.clone()).unwrap();
            let l = logits(&swapped, &[doc("a", &[&[3, 4, 5]])]);
            assert!(l[0].is_finite());
            assert_eq!(trained.with_mapping(m).unwrap().params, trained.params);
        }
    }
}

#[test]
fn checkpoint_shape_mismatch_rejected() {
    let a = model(ModelFamily::Att, MappingKind::Softmax, 5);
    let mut cfg = a.config.clone();
    cfg.hidden = 4;
    assert!(matches!(Model::with_params(cfg, a.params.clone()), Err(Error::Checkpoint(_))));
    let tr = small(ModelFamily::Tr, MappingKind::Softmax, 30);
    assert!(matches!(Model::with_params(tr, a.params), Err(Error::Checkpoint(_))));
}

#[test]
fn init_is_deterministic() {
    for f in FAMILIES {
        let docs = micro_docs(4, 3, 30, &mut seeded(9));
        assert_eq!(logits(&model(f, MappingKind::Entmax15, 6), &docs), logits(&model(f, MappingKind::Entmax15, 6), &docs));
        assert_ne!(logits(&model(f, MappingKind::Entmax15, 6), &docs), logits(&model(f, MappingKind::Entmax15, 7), &docs));
    }
}

#[test]
fn init_zeroes_padding_row() {
    let m = model(ModelFamily::Att, MappingKind::Softmax, 8);
    let e = m.params.get("embed").unwrap();
    assert!(e.row(0).iter().all(|&v| v == 0.0));
    assert!(m.params.get("proj.b").unwrap().data().iter().all(|&v| v == 0.0));
}

fn zero_count(m: &Model, docs: &[EncodedDocument], v: &Vocabulary) -> usize {
    docs.iter()
        .flat_map(|d| extract_attention_maps(m, d, v, None).unwrap())
        .map(|r| r.zero_count())
        .sum()
}

#[test]
fn zero_counts_order_by_sparsity() {
    let v = vocab();
    let docs = micro_docs(20, 4, 30, &mut seeded(10));
    for f in FAMILIES {
        let base = model(f, MappingKind::Softmax, 11);
        let z: Vec<usize> = MAPS.iter().map(|&m| zero_count(&base.with_mapping(m).unwrap(), &docs, &v)).collect();
        assert_eq!(z[0], 0);
        assert!(z[0] <= z[1] && z[1] <= z[2], "{f}: {z:?}");
    }
}

#[test]
fn single_sentence_hierarchy() {
    let m = model(ModelFamily::Tr, MappingKind::Sparsemax, 12);
    let recs = extract_attention_maps(&m, &doc("a", &[&[3, 4, 5]]), &vocab(), None).unwrap();
    let sent: Vec<_> = recs.iter().filter(|r| r.level == RecordLevel::Sentence).collect();
    assert_eq!(sent.len(), 1);
    assert_eq!(sent[0].weights, vec![vec![1.0]]);
}

#[test]
fn sentence_order_matters_in_the_hierarchy() {
    let m = model(ModelFamily::Tr, MappingKind::Softmax, 13);
    let a = doc("a", &[&[3, 4], &[9, 10, 11], &[20]]);
    let b = doc("b", &[&[20], &[3, 4], &[9, 10, 11]]);
    let l = logits(&m, &[a, b]);
    assert!((l[0] - l[1]).abs() > 1e-9);
}

#[test]
fn local_model_ignores_sentence_order() {
    // one flat mean over all words: reordering sentences is a no-op
    let m = model(ModelFamily::Att, MappingKind::Sparsemax, 14);
    let l = logits(&m, &[doc("a", &[&[3, 4], &[9, 10, 11]]), doc("b", &[&[9, 10, 11], &[3, 4]])]);
    assert!((l[0] - l[1]).abs() < 1e-12);
}

#[test]
fn predict_proba_examples() {
    assert_eq!(predict_proba(0.0), 0.5);
    assert!(predict_proba(20.0) > 0.9999);
    assert!(predict_proba(-20.0) < 1e-4);
    assert!(predict_proba(-800.0) >= 0.0 && predict_proba(800.0) <= 1.0);
}

#[test]
fn attention_map_filtering() {
    let v = vocab();
    let cmo = v.id("cmo");
    let d = doc("a", &[&[3, 4, 5], &[6, cmo, 8], &[9, 10]]);
    for f in FAMILIES {
        let m = model(f, MappingKind::Sparsemax, 15);
        let all = extract_attention_maps(&m, &d, &v, None).unwrap();
        let words = all.iter().filter(|r| r.level == RecordLevel::Word).count();
        let sents = all.iter().filter(|r| r.level == RecordLevel::Sentence).count();
        assert_eq!(words, 3);
        assert_eq!(sents, (f == ModelFamily::Tr) as usize);
        for r in &all {
            r.validate(1e-6).unwrap();
            assert_eq!(r.rows, r.cols);
        }

        let only = extract_attention_maps(&m, &d, &v, Some(&["cmo".to_string(), "nonsense".to_string()])).unwrap();
        let word: Vec<_> = only.iter().filter(|r| r.level == RecordLevel::Word).collect();
        assert_eq!(word.len(), 1);
        assert_eq!(word[0].sentence, Some(1));
        assert_eq!(word[0].cols, vec!["t04", "cmo", "t06"]);

        let none = extract_attention_maps(&m, &d, &v, Some(&["dnr".to_string()])).unwrap();
        assert!(none.is_empty());
    }
}

#[test]
fn multi_head_maps() {
    let mut cfg = small(ModelFamily::Tr, MappingKind::Entmax15, 30);
    cfg.word_heads = 2;
    cfg.sent_heads = 4;
    cfg.word_layers = 2;
    let m = Model::init(cfg, &mut seeded(16)).unwrap();
    let recs = extract_attention_maps(&m, &doc("a", &[&[3, 4], &[5, 6, 7]]), &vocab(), None).unwrap();
    assert_eq!(recs.iter().filter(|r| r.level == RecordLevel::Word).count(), 4);
    assert_eq!(recs.iter().filter(|r| r.level == RecordLevel::Sentence).count(), 4);
}

#[test]
fn empty_document_is_an_error() {
    let m = model(ModelFamily::Att, MappingKind::Softmax, 17);
    let r = extract_attention_maps(&m, &doc("e", &[&[]]), &vocab(), None);
    assert!(matches!(r, Err(Error::EmptyDocument(_))));
}

#[test]
fn config_round_trip() {
    let mut c = small(ModelFamily::Tr, MappingKind::EntmaxAlpha(1.3), 99);
    c.truncation = TruncationPolicy::KeepLatest;
    c.post_norm = false;
    assert_eq!(ModelConfig::from_kv(&c.to_kv(), "t").unwrap(), c);
    assert!(ModelConfig::from_kv("family=cnn\n", "t").is_err());
    assert!(ModelConfig::from_kv("hidden=8\nword_heads=3\n", "t").is_err());
}

#[test]
fn training_mode_dropout_is_seeded() {
    let m = model(ModelFamily::Tr, MappingKind::Sparsemax, 18);
    let docs = micro_docs(3, 2, 30, &mut seeded(1));
    let b = &m.batches(&docs, 8)[0];
    let run = |seed| {
        let mut g = Graph::new();
        let out = m.forward(&mut g, &m.params, b, true, &mut seeded(seed)).unwrap();
        g.value(out.logits).data().to_vec()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}
