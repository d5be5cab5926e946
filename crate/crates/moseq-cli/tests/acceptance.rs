//! Acceptance suite.
//!
//! One test per criterion, each ending in a `[PASS] criterion N` line
//! (run with `-- --nocapture` to see them):
//!
//! 1. decoder exactness against the exhaustive oracle
//! 2. lossless full-width pruning
//! 3. width-5 pruning losslessness on a trained order-3 bundle
//! 4. width-5 pruning speedup ≥ 2× over unpruned decoding
//! 5. multi-order benefit over single-order greedy decoding
//! 6. label-vocabulary sizes against an independent enumeration
//! 7. gradient correctness against central finite differences
//! 8. evaluator fidelity on the hand-traced fixture
//! 9. train/decode determinism through the command line
//!
//! Criteria 3–5 share one trained three-order bundle over the synthetic
//! second-order corpus (2000/500/500 sentences, fixed seeds); training it
//! takes a few minutes on one core.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use moseq::corpus::{build_token_vocab, parse_conll, render_conll, Sentence, TokenVocab};
use moseq::decoder::{decode_corpus, MultiOrderDecoder, PruneConfig};
use moseq::eval::{bench_decode, f1, PrfScores};
use moseq::labelspace::{build_label_vocab, LabelVocab, COMPONENT_SEPARATOR, START_TAG};
use moseq::nn::{
    log_softmax, loss_and_gradients, Dropout, EncodedSentence, Gradients, TaggerParams,
    TENSOR_COUNT, TENSOR_NAMES,
};
use moseq::synth::{generate, unigram_tag_count, SynthConfig};
use moseq::tagger::{greedy_decode, train_single_order, Hyperparams, ModelBundle, ScoreLattice};

// ---------------------------------------------------------------- fixture

struct TrainedFixture {
    train: Vec<Sentence>,
    test: Vec<Sentence>,
    bundle: ModelBundle,
    o1_greedy: PrfScores,
    o3_greedy: PrfScores,
}

static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();

fn fixture() -> &'static TrainedFixture {
    FIXTURE.get_or_init(|| {
        let cfg = SynthConfig::default();
        let train = generate(&cfg, 2000, 42).expect("generate train");
        let dev = generate(&cfg, 500, 43).expect("generate dev");
        let test = generate(&cfg, 500, 44).expect("generate test");
        let vocab = build_token_vocab(&train, 1).expect("vocab");
        let hp = Hyperparams {
            d_emb: 16,
            d_hidden: 32,
            dropout: 0.1,
            lr: 1e-3,
            epochs: 12,
        };
        let models = (1..=3)
            .map(|order| {
                train_single_order(&train, &dev, &vocab, order, &hp, 42 + order as u64)
                    .expect("training")
            })
            .collect::<Vec<_>>();
        let bundle = ModelBundle::new(vocab, models).expect("bundle");

        let greedy_scores = |order: usize| {
            let model = bundle.model(order).unwrap();
            let preds: Vec<Vec<String>> = test
                .iter()
                .map(|s| greedy_decode(&bundle.vocab, model, s).unwrap())
                .collect();
            f1(&test, &preds).unwrap()
        };
        let o1_greedy = greedy_scores(1);
        let o3_greedy = greedy_scores(3);
        TrainedFixture { train, test, bundle, o1_greedy, o3_greedy }
    })
}

// ------------------------------------------------- random decoder instances

fn uni_tags(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{i}")).collect()
}

/// Every order-o label that can occur: j leading STARTs then o−j real tags.
fn all_possible_labels(tags: &[String], order: usize) -> Vec<String> {
    let sep = COMPONENT_SEPARATOR.to_string();
    let mut labels = Vec::new();
    for starts in (0..order).rev() {
        let real = order - starts;
        let mut idx = vec![0usize; real];
        loop {
            let mut parts = vec![START_TAG; starts];
            for &i in &idx {
                parts.push(&tags[i]);
            }
            labels.push(parts.join(&sep));
            let mut j = real;
            let mut rolled_over = true;
            while j > 0 {
                j -= 1;
                idx[j] += 1;
                if idx[j] < tags.len() {
                    rolled_over = false;
                    break;
                }
                idx[j] = 0;
            }
            if rolled_over {
                break;
            }
        }
    }
    labels
}

struct Instance {
    decoder: MultiOrderDecoder,
    lattices: Vec<ScoreLattice>,
}

fn random_instance(rng: &mut ChaCha20Rng, orders: &[usize]) -> Instance {
    let u = rng.random_range(2..=4usize);
    let t_len = rng.random_range(1..=6usize);
    let quantize = rng.random::<f64>() < 0.3; // exact score ties
    let tags = uni_tags(u);
    let mut vocabs = Vec::new();
    for &o in orders {
        let mut labels = all_possible_labels(&tags, o);
        if o > 1 {
            labels.retain(|_| rng.random::<f64>() > 0.3); // missing n-grams
            if labels.is_empty() {
                labels = all_possible_labels(&tags, o)[..1].to_vec();
            }
        }
        vocabs.push(LabelVocab::from_labels(o, labels).unwrap());
    }
    let vocab_refs: Vec<&LabelVocab> = vocabs.iter().collect();
    let decoder = MultiOrderDecoder::new(tags, &vocab_refs).unwrap();
    let lattices = vocabs
        .iter()
        .map(|v| {
            let rows = (0..t_len)
                .map(|_| {
                    let logits: Vec<f64> = (0..v.len())
                        .map(|_| {
                            if quantize {
                                [0.0, 0.5, 1.0][rng.random_range(0..3)]
                            } else {
                                rng.random_range(-2.0..2.0)
                            }
                        })
                        .collect();
                    log_softmax(&logits)
                })
                .collect();
            ScoreLattice::new(v.order(), rows).unwrap()
        })
        .collect();
    Instance { decoder, lattices }
}

fn instances(seed: u64, count: usize) -> Vec<Instance> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let order_sets: [&[usize]; 3] = [&[1], &[1, 2], &[1, 2, 3]];
    (0..count)
        .map(|i| random_instance(&mut rng, order_sets[i % order_sets.len()]))
        .collect()
}

// ---------------------------------------------------------------- criteria

#[test]
fn criterion_1_decoder_exactness() {
    let cases = instances(20240001, 500);
    for (i, inst) in cases.iter().enumerate() {
        let lat: Vec<&ScoreLattice> = inst.lattices.iter().collect();
        let dp = inst.decoder.decode(&lat, PruneConfig::Off).unwrap();
        let brute = inst.decoder.brute_force_decode(&lat).unwrap();
        let dp_score = inst.decoder.score_sequence(&lat, &dp).unwrap();
        let brute_score = inst.decoder.score_sequence(&lat, &brute).unwrap();
        assert!(
            (dp_score - brute_score).abs() < 1e-9,
            "[FAIL] criterion 1: instance {i} scores differ ({dp_score} vs {brute_score})"
        );
        assert_eq!(
            dp, brute,
            "[FAIL] criterion 1: instance {i} sequences differ under the shared tie-break"
        );
    }
    println!("[PASS] criterion 1 (decoder exactness): 500/500 instances match the oracle within 1e-9");
}

#[test]
fn criterion_2_lossless_full_width_pruning() {
    let cases = instances(20240001, 500);
    for (i, inst) in cases.iter().enumerate() {
        let lat: Vec<&ScoreLattice> = inst.lattices.iter().collect();
        let off = inst.decoder.decode(&lat, PruneConfig::Off).unwrap();
        let full = inst
            .decoder
            .decode(&lat, PruneConfig::Width(inst.decoder.unigram_count()))
            .unwrap();
        assert_eq!(off, full, "[FAIL] criterion 2: instance {i} differs at full width");
    }
    println!("[PASS] criterion 2 (lossless full-width pruning): 500/500 instances identical");
}

#[test]
fn criterion_3_width5_pruning_losslessness_on_trained_bundle() {
    let fx = fixture();
    let pruned = decode_corpus(&fx.bundle, &fx.test, PruneConfig::Width(5), 1).unwrap();
    let unpruned = decode_corpus(&fx.bundle, &fx.test, PruneConfig::Off, 1).unwrap();
    let pruned_f1 = f1(&fx.test, &pruned).unwrap().f1;
    let unpruned_f1 = f1(&fx.test, &unpruned).unwrap().f1;
    let differing = pruned
        .iter()
        .zip(&unpruned)
        .filter(|(a, b)| a != b)
        .count();
    if differing == 0 {
        assert_eq!(pruned_f1, unpruned_f1);
        println!(
            "[PASS] criterion 3 (width-5 losslessness): identical decodes on all {} sentences, f1 {:.2}",
            fx.test.len(),
            pruned_f1
        );
    } else {
        // documented downgrade path: a few sentences may decode differently
        // as long as the F1 impact stays within 0.05
        let diff = (pruned_f1 - unpruned_f1).abs();
        assert!(
            diff <= 0.05,
            "[FAIL] criterion 3: {differing} sentences differ and F1 gap {diff:.4} exceeds 0.05"
        );
        println!(
            "[PASS] criterion 3 (width-5 losslessness, downgraded): {differing} sentences differ, f1 {:.2} vs {:.2} (gap {:.4} ≤ 0.05)",
            pruned_f1, unpruned_f1, diff
        );
    }
}

#[test]
fn criterion_4_pruning_speedup() {
    let fx = fixture();
    let decoder = MultiOrderDecoder::from_bundle(&fx.bundle).unwrap();
    assert!(
        decoder.unigram_count() >= 10,
        "[FAIL] criterion 4: needs |Y1| ≥ 10, got {}",
        decoder.unigram_count()
    );
    assert!(fx.test.len() >= 500);
    let timings = bench_decode(
        &fx.bundle,
        &fx.test,
        &[PruneConfig::Off, PruneConfig::Width(5)],
    )
    .unwrap();
    let off = &timings[0];
    let pruned = &timings[1];
    let speedup = off.seconds / pruned.seconds;
    assert!(
        speedup >= 2.0,
        "[FAIL] criterion 4: width-5 only {speedup:.2}x faster ({:.3}s vs {:.3}s)",
        pruned.seconds,
        off.seconds
    );
    println!(
        "[PASS] criterion 4 (pruning speedup): {:.3}s unpruned vs {:.3}s width-5 = {speedup:.2}x (bar: 2x)",
        off.seconds, pruned.seconds
    );
}

#[test]
fn criterion_5_multi_order_benefit() {
    let fx = fixture();
    let preds = decode_corpus(&fx.bundle, &fx.test, PruneConfig::Width(5), 1).unwrap();
    let mo3 = f1(&fx.test, &preds).unwrap();
    let gap = mo3.f1 - fx.o1_greedy.f1;
    assert!(
        gap >= 2.0,
        "[FAIL] criterion 5: multi-order-3 f1 {:.2} vs order-1 greedy {:.2}, gap {gap:.2} < 2.0",
        mo3.f1,
        fx.o1_greedy.f1
    );
    assert!(
        fx.o3_greedy.f1 <= mo3.f1,
        "[FAIL] criterion 5: single order-3 greedy {:.2} exceeds multi-order-3 {:.2}",
        fx.o3_greedy.f1,
        mo3.f1
    );
    println!(
        "[PASS] criterion 5 (multi-order benefit): order-1 greedy {:.2}, order-3 greedy {:.2}, multi-order-3 {:.2} (gap +{gap:.2} ≥ 2.0)",
        fx.o1_greedy.f1, fx.o3_greedy.f1, mo3.f1
    );
}

/// Sliding-window n-gram enumeration written independently of the
/// labelspace module: explicit START padding, sets of component vectors.
fn enumerate_ngrams(sentences: &[Sentence], order: usize) -> HashSet<Vec<String>> {
    let mut seen = HashSet::new();
    for sent in sentences {
        let tags = sent.gold_tags();
        for t in 0..tags.len() {
            let mut gram = Vec::with_capacity(order);
            for k in 0..order {
                let idx = t as i64 - (order - 1 - k) as i64;
                gram.push(if idx < 0 {
                    START_TAG.to_string()
                } else {
                    tags[idx as usize].clone()
                });
            }
            seen.insert(gram);
        }
    }
    seen
}

#[test]
fn criterion_6_tag_set_growth() {
    let fx = fixture();
    let cfg = SynthConfig::default();
    for order in 1..=3usize {
        let vocab = build_label_vocab(&fx.train, order).unwrap();
        let independent = enumerate_ngrams(&fx.train, order);
        assert_eq!(
            vocab.len(),
            independent.len(),
            "[FAIL] criterion 6: order-{order} vocab size {} vs enumeration {}",
            vocab.len(),
            independent.len()
        );
        if order == 1 {
            assert_eq!(vocab.len(), unigram_tag_count(&cfg));
        }
    }
    let sizes: Vec<usize> = (1..=3)
        .map(|o| build_label_vocab(&fx.train, o).unwrap().len())
        .collect();

    match std::env::var("MOSEQ_CONLL2000_TRAIN") {
        Ok(path) => {
            let file = std::fs::File::open(&path).expect("opening CoNLL-2000 train file");
            let sents = parse_conll(file, 0, 2).unwrap();
            let expected = [14usize, 154, 832];
            for (order, expect) in (1..=3).zip(expected) {
                let size = build_label_vocab(&sents, order).unwrap().len();
                assert!(
                    (size as i64 - expect as i64).abs() <= 3,
                    "[FAIL] criterion 6: CoNLL-2000 order-{order} size {size}, expected {expect}±3"
                );
            }
            println!(
                "[PASS] criterion 6 (tag-set growth): synthetic sizes {sizes:?} match enumeration; CoNLL-2000 sizes within ±3 of 14/154/832"
            );
        }
        Err(_) => {
            println!(
                "[PASS] criterion 6 (tag-set growth): synthetic sizes {sizes:?} match the independent enumeration exactly (CoNLL-2000 not available; set MOSEQ_CONLL2000_TRAIN to check 14/154/832 ±3)"
            );
        }
    }
}

/// Central finite differences of the mean NLL; independent of the
/// backpropagation path it checks.
fn numeric_gradient(params: &TaggerParams, input: &EncodedSentence, gold: &[u32], h: f64) -> Gradients {
    let loss_of = |p: &TaggerParams| loss_and_gradients(p, input, gold, Dropout::Off).unwrap().0;
    let mut num = Gradients::zeros_like(params);
    for ti in 0..TENSOR_COUNT {
        for j in 0..params.tensor(ti).len() {
            let mut plus = params.clone();
            plus.tensor_mut(ti)[j] += h;
            let mut minus = params.clone();
            minus.tensor_mut(ti)[j] -= h;
            num.tensor_mut(ti)[j] = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        }
    }
    num
}

#[test]
fn criterion_7_gradient_correctness() {
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(9000 + seed);
        let params = TaggerParams::init(6, 7, 3, 4, 5, &mut rng);
        let input = EncodedSentence {
            token_ids: (0..3).map(|_| rng.random_range(0..6)).collect(),
            feature_ids: (0..3)
                .map(|_| {
                    let mut ids: Vec<u32> = (0..2).map(|_| rng.random_range(0..7)).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    ids
                })
                .collect(),
        };
        let gold: Vec<u32> = (0..3).map(|_| rng.random_range(0..5)).collect();
        let (_, analytic) = loss_and_gradients(&params, &input, &gold, Dropout::Off).unwrap();
        let numeric = numeric_gradient(&params, &input, &gold, 1e-5);
        for ti in 0..TENSOR_COUNT {
            for (j, (&a, &n)) in analytic.tensor(ti).iter().zip(numeric.tensor(ti)).enumerate() {
                // relative error below 1e-4; the absolute term only absorbs
                // finite-difference noise on coordinates that are ~0
                let tol = 1e-8 + 1e-4 * a.abs().max(n.abs());
                assert!(
                    (a - n).abs() <= tol,
                    "[FAIL] criterion 7: seed {seed} {}[{j}] analytic {a:e} vs numeric {n:e}",
                    TENSOR_NAMES[ti]
                );
                checked += 1;
            }
        }
    }
    println!(
        "[PASS] criterion 7 (gradient correctness): {checked} coordinates across 20 seeds within 1e-4 of central differences"
    );
}

#[test]
fn criterion_8_evaluator_fidelity() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../moseq/tests/data/conlleval_fixture.conll");
    let gold = parse_conll(std::fs::File::open(&path).unwrap(), 0, 1).unwrap();
    let pred = parse_conll(std::fs::File::open(&path).unwrap(), 0, 2).unwrap();
    assert_eq!(gold.len(), 30);
    let pred_tags: Vec<Vec<String>> = pred.iter().map(|s| s.gold_tags().to_vec()).collect();
    let scores = f1(&gold, &pred_tags).unwrap();
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    // hand-traced: 41 gold, 40 predicted, 25 correct
    assert_eq!(
        (round2(scores.precision), round2(scores.recall), round2(scores.f1)),
        (62.50, 60.98, 61.73),
        "[FAIL] criterion 8: scores {scores:?}"
    );
    println!(
        "[PASS] criterion 8 (evaluator fidelity): fixture scores {:.2}/{:.2}/{:.2} match the hand trace",
        scores.precision, scores.recall, scores.f1
    );
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_moseq"))
        .args(args)
        .env("MOSEQ_LOG", "warn")
        .output()
        .expect("running moseq binary")
}

fn write_corpus(dir: &Path, name: &str, sentences: &[Sentence]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, render_conll(sentences)).unwrap();
    path
}

#[test]
fn criterion_9_cli_determinism() {
    let cfg = SynthConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let train = write_corpus(dir.path(), "train.conll", &generate(&cfg, 150, 7).unwrap());
    let dev = write_corpus(dir.path(), "dev.conll", &generate(&cfg, 40, 8).unwrap());
    let test = write_corpus(dir.path(), "test.conll", &generate(&cfg, 60, 9).unwrap());

    let train_args = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "train".to_string(),
            "--train".into(),
            train.display().to_string(),
            "--dev".into(),
            dev.display().to_string(),
            "--orders".into(),
            "1,2".into(),
            "--epochs".into(),
            "3".into(),
            "--d-emb".into(),
            "12".into(),
            "--d-hidden".into(),
            "16".into(),
            "--dropout".into(),
            "0.2".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.display().to_string(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        args
    };

    let b1 = dir.path().join("b1.moseq");
    let b2 = dir.path().join("b2.moseq");
    let b3 = dir.path().join("b3.moseq");
    for (out, extra) in [(&b1, &[][..]), (&b2, &[][..]), (&b3, &["--parallel-orders"][..])] {
        let args = train_args(out, extra);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let output = run_cli(&refs);
        assert!(
            output.status.success(),
            "[FAIL] criterion 9: training run failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let bytes1 = std::fs::read(&b1).unwrap();
    let bytes2 = std::fs::read(&b2).unwrap();
    let bytes3 = std::fs::read(&b3).unwrap();
    assert_eq!(bytes1, bytes2, "[FAIL] criterion 9: reruns differ");
    assert_eq!(bytes1, bytes3, "[FAIL] criterion 9: parallel-orders training differs");

    let out1 = dir.path().join("pred1.conll");
    let out4 = dir.path().join("pred4.conll");
    for (threads, out) in [("1", &out1), ("4", &out4)] {
        let output = run_cli(&[
            "decode",
            "--bundle",
            &b1.display().to_string(),
            "--input",
            &test.display().to_string(),
            "--output",
            &out.display().to_string(),
            "--threads",
            threads,
        ]);
        assert!(
            output.status.success(),
            "[FAIL] criterion 9: decode failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out4).unwrap(),
        "[FAIL] criterion 9: decode output depends on --threads"
    );
    println!(
        "[PASS] criterion 9 (determinism): byte-identical bundles across reruns and --parallel-orders; decode identical across --threads 1/4"
    );
}
