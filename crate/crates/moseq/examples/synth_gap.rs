//! Trains the three orders on the synthetic corpus and prints the
//! single-order and multi-order F1s plus decode timings.
//!
//! Usage: `cargo run --release --example synth_gap -- [n_train] [epochs] [d_hidden] [dropout]`

use std::time::Instant;

use moseq::corpus::build_token_vocab;
use moseq::decoder::{decode_corpus, PruneConfig};
use moseq::eval::f1;
use moseq::synth::{generate, SynthConfig};
use moseq::tagger::{greedy_decode, train_single_order, Hyperparams, ModelBundle};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(800);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let d_hidden: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(32);
    let dropout: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.1);

    let cfg = SynthConfig::default();
    let train = generate(&cfg, n_train, 42).unwrap();
    let dev = generate(&cfg, 500, 43).unwrap();
    let test = generate(&cfg, 500, 44).unwrap();
    let vocab = build_token_vocab(&train, 1).unwrap();
    let hp = Hyperparams {
        d_emb: 16,
        d_hidden,
        dropout,
        lr: 1e-3,
        epochs,
    };

    let t0 = Instant::now();
    let mut models = Vec::new();
    for order in 1..=3 {
        let t = Instant::now();
        let m = train_single_order(&train, &dev, &vocab, order, &hp, 42 + order as u64).unwrap();
        eprintln!(
            "order {order}: trained in {:.1}s, best epoch {} dev f1 {:.2}",
            t.elapsed().as_secs_f64(),
            m.meta.best_epoch,
            m.meta.dev_f1
        );
        models.push(m);
    }
    eprintln!("total training {:.1}s", t0.elapsed().as_secs_f64());

    let bundle = ModelBundle::new(vocab.clone(), models).unwrap();

    for order in [1usize, 2, 3] {
        let m = bundle.model(order).unwrap();
        let preds: Vec<Vec<String>> = test.iter().map(|s| greedy_decode(&vocab, m, s).unwrap()).collect();
        let s = f1(&test, &preds).unwrap();
        println!("greedy order-{order}: f1 {:.2} (p {:.2} r {:.2})", s.f1, s.precision, s.recall);
    }

    for (label, prune) in [("width-5", PruneConfig::Width(5)), ("off", PruneConfig::Off)] {
        let t = Instant::now();
        let preds = decode_corpus(&bundle, &test, prune, 1).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let s = f1(&test, &preds).unwrap();
        println!("multi-order-3 {label}: f1 {:.2} (p {:.2} r {:.2}) in {secs:.2}s", s.f1, s.precision, s.recall);
    }
}
