//! Single-order taggers and their bundles.
//!
//! Each requested order trains its own bidirectional tagger over that
//! order's n-gram label vocabulary; the models never share parameters. A
//! bundle groups the trained models behind one token vocabulary for the
//! multi-order decoder.

mod io;

pub use io::{bundle_from_bytes, bundle_to_bytes, load_bundle, save_bundle};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{render_conll, Sentence, TokenVocab};
use crate::error::{Error, Result};
use crate::eval;
use crate::labelspace::{build_label_vocab, last_component, to_ngram, LabelVocab};
use crate::nn::{
    adam_step, encode, log_score_distribution, loss_and_gradients, AdamState, Dropout,
    EncodedSentence, TaggerParams,
};

/// Network and schedule settings for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub d_emb: usize,
    pub d_hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            d_emb: 50,
            d_hidden: 200,
            dropout: 0.5,
            lr: 1e-3,
            epochs: 30,
        }
    }
}

/// Provenance of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: u32,
    pub best_epoch: u32,
    pub dev_f1: f64,
    pub dataset_hash: u64,
}

/// One trained order-n tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleOrderModel {
    pub order: usize,
    pub labels: LabelVocab,
    pub params: TaggerParams,
    pub meta: TrainMeta,
}

/// Trained models over a shared token vocabulary, orders strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub vocab: TokenVocab,
    pub models: Vec<SingleOrderModel>,
}

impl ModelBundle {
    pub fn new(vocab: TokenVocab, models: Vec<SingleOrderModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("a bundle needs at least one model".into()));
        }
        for pair in models.windows(2) {
            if pair[0].order >= pair[1].order {
                return Err(Error::Config(
                    "bundle orders must be strictly increasing".into(),
                ));
            }
        }
        for m in &models {
            if m.order != m.labels.order() {
                return Err(Error::Internal(format!(
                    "model order {} does not match its label vocabulary order {}",
                    m.order,
                    m.labels.order()
                )));
            }
            if m.params.label_count() != m.labels.len() {
                return Err(Error::Internal(format!(
                    "order-{} model projects to {} labels but the vocabulary has {}",
                    m.order,
                    m.params.label_count(),
                    m.labels.len()
                )));
            }
        }
        Ok(ModelBundle { vocab, models })
    }

    /// Highest order in the bundle.
    pub fn max_order(&self) -> usize {
        self.models.last().map(|m| m.order).unwrap_or(0)
    }

    pub fn model(&self, order: usize) -> Option<&SingleOrderModel> {
        self.models.iter().find(|m| m.order == order)
    }
}

/// Per-sentence table of log-probabilities, one row per position over one
/// order's label set. Rows are checked to exponentiate-and-sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLattice {
    order: usize,
    rows: Vec<Vec<f64>>,
}

impl ScoreLattice {
    pub fn new(order: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Internal(format!("ragged lattice row at position {t}")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Internal(format!(
                    "non-finite lattice entry at position {t}"
                )));
            }
            let mass: f64 = row.iter().map(|&v| v.exp()).sum();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(Error::Internal(format!(
                    "lattice row {t} sums to {mass}, expected 1"
                )));
            }
        }
        Ok(ScoreLattice { order, rows })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Sentence length.
    pub fn t_len(&self) -> usize {
        self.rows.len()
    }

    /// Label-set size.
    pub fn width(&self) -> usize {
        self.rows.first().map(Vec::len).unwrap_or(0)
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }
}

/// Resolves a sentence against the vocabulary: token ids plus the feature
/// ids firing at every position. Unknown tokens map to the unknown id while
/// their spelling and context features still fire.
pub fn encode_sentence(vocab: &TokenVocab, sentence: &Sentence) -> Result<EncodedSentence> {
    let token_ids = sentence
        .tokens()
        .iter()
        .map(|t| vocab.token_id(&t.surface))
        .collect();
    let feature_ids = (0..sentence.len())
        .map(|pos| vocab.extract_features(sentence, pos))
        .collect::<Result<_>>()?;
    Ok(EncodedSentence { token_ids, feature_ids })
}

/// FNV-1a over the rendered corpus; identifies the training data in bundle
/// metadata.
pub fn dataset_hash(sentences: &[Sentence]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in render_conll(sentences).bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Trains one single-order model. Sentences are visited one at a time in a
/// seeded shuffled order each epoch; after every epoch the greedy dev F1 is
/// logged and the best-scoring snapshot (earliest epoch on ties) becomes the
/// returned model. With an empty dev set the final epoch wins.
pub fn train_single_order(
    train: &[Sentence],
    dev: &[Sentence],
    vocab: &TokenVocab,
    order: usize,
    hp: &Hyperparams,
    seed: u64,
) -> Result<SingleOrderModel> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let labels = build_label_vocab(train, order)?;
    let encoded: Vec<EncodedSentence> = train
        .iter()
        .map(|s| encode_sentence(vocab, s))
        .collect::<Result<_>>()?;
    let gold: Vec<Vec<u32>> = train
        .iter()
        .map(|s| {
            to_ngram(s.gold_tags(), order)?
                .iter()
                .map(|l| {
                    labels.id_of(l).ok_or_else(|| {
                        Error::Internal(format!("training n-gram missing from its own vocabulary"))
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = TaggerParams::init(
        vocab.token_count(),
        vocab.feature_count(),
        hp.d_emb,
        hp.d_hidden,
        labels.len(),
        &mut rng,
    );
    let mut adam = AdamState::new(&params, hp.lr);
    let mut order_of_visit: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, u32, TaggerParams)> = None;

    for epoch in 1..=hp.epochs as u32 {
        order_of_visit.shuffle(&mut rng);
        for &i in &order_of_visit {
            let dropout = if hp.dropout > 0.0 {
                Dropout::On { rate: hp.dropout, rng: &mut rng }
            } else {
                Dropout::Off
            };
            let (loss, grads) = loss_and_gradients(&params, &encoded[i], &gold[i], dropout)?;
            if !loss.is_finite() {
                return Err(Error::Internal(format!(
                    "non-finite loss at epoch {epoch}, sentence {i}"
                )));
            }
            adam_step(&mut params, &grads, &mut adam)?;
        }
        if !dev.is_empty() {
            let predictions: Vec<Vec<String>> = dev
                .iter()
                .map(|s| greedy_with(&params, &labels, vocab, s))
                .collect::<Result<_>>()?;
            let scores = eval::f1(dev, &predictions)?;
            log::info!("order {order} epoch {epoch}: dev f1 {:.2}", scores.f1);
            let improved = best.as_ref().map(|(f, _, _)| scores.f1 > *f).unwrap_or(true);
            if improved {
                best = Some((scores.f1, epoch, params.clone()));
            }
        }
    }

    let (dev_f1, best_epoch, params) = match best {
        Some(b) => b,
        None => (0.0, hp.epochs as u32, params),
    };
    Ok(SingleOrderModel {
        order,
        labels,
        params,
        meta: TrainMeta {
            seed,
            epochs: hp.epochs as u32,
            best_epoch,
            dev_f1,
            dataset_hash: dataset_hash(train),
        },
    })
}

/// Log-probability rows for every position, dropout disabled.
pub fn make_lattice(vocab: &TokenVocab, model: &SingleOrderModel, sentence: &Sentence) -> Result<ScoreLattice> {
    make_lattice_from_encoded(model, &encode_sentence(vocab, sentence)?)
}

/// [`make_lattice`] over an already-resolved sentence, so the models of a
/// bundle can share one feature extraction.
pub fn make_lattice_from_encoded(model: &SingleOrderModel, input: &EncodedSentence) -> Result<ScoreLattice> {
    let states = encode(&model.params, input, Dropout::Off)?;
    let rows = states
        .iter()
        .map(|h| log_score_distribution(&model.params, h))
        .collect();
    ScoreLattice::new(model.order, rows)
}

fn greedy_with(
    params: &TaggerParams,
    labels: &LabelVocab,
    vocab: &TokenVocab,
    sentence: &Sentence,
) -> Result<Vec<String>> {
    let input = encode_sentence(vocab, sentence)?;
    let states = encode(params, &input, Dropout::Off)?;
    states
        .iter()
        .map(|h| {
            let scores = log_score_distribution(params, h);
            let mut best = 0usize;
            for (i, &v) in scores.iter().enumerate() {
                if v > scores[best] {
                    best = i;
                }
            }
            last_component(labels.label(best as u32)).map(str::to_string)
        })
        .collect()
}

/// Position-independent prediction: at every position take the argmax
/// n-gram label (lowest id on ties) and keep its final component. Overlap
/// inconsistencies between neighboring argmaxes are allowed; each position
/// reports its own label's last tag.
pub fn greedy_decode(vocab: &TokenVocab, model: &SingleOrderModel, sentence: &Sentence) -> Result<Vec<String>> {
    greedy_with(&model.params, &model.labels, vocab, sentence)
}
