//! End-to-end flows through the library: featurization, training, the
//! greedy/multi-order correspondence for order-1 bundles, bundle round-trips
//! and the benchmark harness.

use moseq::corpus::{build_token_vocab, featurize, Sentence};
use moseq::decoder::{decode_corpus, decode_sentence, MultiOrderDecoder, PruneConfig};
use moseq::eval::{bench_decode, f1};
use moseq::synth::{generate, SynthConfig};
use moseq::tagger::{
    greedy_decode, load_bundle, save_bundle, train_single_order, Hyperparams, ModelBundle,
};

fn small_corpus() -> (Vec<Sentence>, Vec<Sentence>, Vec<Sentence>) {
    let cfg = SynthConfig { num_types: 3, ..SynthConfig::default() };
    (
        generate(&cfg, 120, 11).unwrap(),
        generate(&cfg, 30, 12).unwrap(),
        generate(&cfg, 40, 13).unwrap(),
    )
}

fn small_hp() -> Hyperparams {
    Hyperparams {
        d_emb: 10,
        d_hidden: 12,
        dropout: 0.1,
        lr: 5e-3,
        epochs: 4,
    }
}

#[test]
fn featurize_materializes_the_extracted_ids() {
    let (mut train, _, _) = small_corpus();
    let vocab = build_token_vocab(&train, 1).unwrap();
    featurize(&mut train, &vocab).unwrap();
    for sent in &train {
        for (pos, tok) in sent.tokens().iter().enumerate() {
            assert_eq!(tok.feature_ids, vocab.extract_features(sent, pos).unwrap());
            assert!(tok.feature_ids.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[test]
fn order_one_bundle_decodes_like_greedy() {
    let (train, dev, test) = small_corpus();
    let vocab = build_token_vocab(&train, 1).unwrap();
    let model = train_single_order(&train, &dev, &vocab, 1, &small_hp(), 21).unwrap();
    let bundle = ModelBundle::new(vocab, vec![model]).unwrap();
    let decoder = MultiOrderDecoder::from_bundle(&bundle).unwrap();
    for sent in &test {
        let greedy = greedy_decode(&bundle.vocab, &bundle.models[0], sent).unwrap();
        let joint = decode_sentence(&bundle, &decoder, sent, PruneConfig::Off).unwrap();
        assert_eq!(greedy, joint);
    }
}

#[test]
fn bundle_survives_disk_and_keeps_decoding_identically() {
    let (train, dev, test) = small_corpus();
    let vocab = build_token_vocab(&train, 1).unwrap();
    let models = (1..=2)
        .map(|o| train_single_order(&train, &dev, &vocab, o, &small_hp(), 31 + o as u64).unwrap())
        .collect();
    let bundle = ModelBundle::new(vocab, models).unwrap();
    let before = decode_corpus(&bundle, &test, PruneConfig::Width(3), 1).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pipeline.moseq");
    save_bundle(&bundle, &path).unwrap();
    let loaded = load_bundle(&path).unwrap();
    assert_eq!(bundle, loaded);
    let after = decode_corpus(&loaded, &test, PruneConfig::Width(3), 1).unwrap();
    assert_eq!(before, after);
}

#[test]
fn bench_harness_reports_identical_f1_for_lossless_configs() {
    let (train, dev, test) = small_corpus();
    let vocab = build_token_vocab(&train, 1).unwrap();
    let models = (1..=2)
        .map(|o| train_single_order(&train, &dev, &vocab, o, &small_hp(), 41 + o as u64).unwrap())
        .collect();
    let bundle = ModelBundle::new(vocab, models).unwrap();
    let u = MultiOrderDecoder::from_bundle(&bundle).unwrap().unigram_count();
    let timings = bench_decode(
        &bundle,
        &test,
        &[PruneConfig::Off, PruneConfig::Width(u), PruneConfig::Width(2)],
    )
    .unwrap();
    assert_eq!(timings.len(), 3);
    assert_eq!(timings[0].f1, timings[1].f1, "full width must match unpruned");
    for t in &timings {
        assert!(t.seconds > 0.0);
    }

    // the reported f1 agrees with scoring the decodes directly
    let direct = decode_corpus(&bundle, &test, PruneConfig::Off, 1).unwrap();
    let scores = f1(&test, &direct).unwrap();
    assert_eq!(scores.f1, timings[0].f1);
}

#[test]
fn threaded_decoding_matches_single_threaded() {
    let (train, dev, test) = small_corpus();
    let vocab = build_token_vocab(&train, 1).unwrap();
    let model = train_single_order(&train, &dev, &vocab, 1, &small_hp(), 51).unwrap();
    let bundle = ModelBundle::new(vocab, vec![model]).unwrap();
    let one = decode_corpus(&bundle, &test, PruneConfig::Off, 1).unwrap();
    let four = decode_corpus(&bundle, &test, PruneConfig::Off, 4).unwrap();
    assert_eq!(one, four);
}
