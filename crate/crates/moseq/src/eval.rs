//! Chunk-level evaluation: F1, an error taxonomy for wrong predictions,
//! entity-length buckets, and a timing harness for decode configurations.
//!
//! Chunk extraction follows conlleval semantics for BIO input, including the
//! leniency that an `I-` tag with no compatible open chunk starts a new one.

use std::collections::HashSet;
use std::time::Instant;

use crate::corpus::Sentence;
use crate::decoder::{decode_sentence, MultiOrderDecoder, PruneConfig};
use crate::error::{Error, Result};
use crate::tagger::ModelBundle;

/// A maximal typed span; `start` and `end` are inclusive token indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkSpan {
    pub start: usize,
    pub end: usize,
    pub ty: String,
}

impl ChunkSpan {
    pub fn new(start: usize, end: usize, ty: impl Into<String>) -> Self {
        ChunkSpan { start, end, ty: ty.into() }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false // start ≤ end always holds
    }

    fn contains(&self, other: &ChunkSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    fn overlaps(&self, other: &ChunkSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

enum BioKind<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_bio(tag: &str) -> Result<BioKind<'_>> {
    if tag == "O" {
        return Ok(BioKind::Outside);
    }
    let (prefix, ty) = match tag.split_once('-') {
        Some((p, ty)) => (p, ty),
        None => (tag, ""),
    };
    match prefix {
        "B" => Ok(BioKind::Begin(ty)),
        "I" => Ok(BioKind::Inside(ty)),
        _ => Err(Error::Data(format!("tag '{tag}' is not valid BIO"))),
    }
}

/// Extracts maximal chunks from BIO tags. An `I-X` with no open `X` chunk
/// starts a new chunk (conlleval-compatible leniency).
pub fn extract_chunks(tags: &[String]) -> Result<Vec<ChunkSpan>> {
    let mut chunks = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (t, tag) in tags.iter().enumerate() {
        match parse_bio(tag)? {
            BioKind::Outside => {
                if let Some((start, ty)) = open.take() {
                    chunks.push(ChunkSpan::new(start, t - 1, ty));
                }
            }
            BioKind::Begin(ty) => {
                if let Some((start, oty)) = open.take() {
                    chunks.push(ChunkSpan::new(start, t - 1, oty));
                }
                open = Some((t, ty.to_string()));
            }
            BioKind::Inside(ty) => {
                let continues = matches!(&open, Some((_, oty)) if oty == ty);
                if !continues {
                    if let Some((start, oty)) = open.take() {
                        chunks.push(ChunkSpan::new(start, t - 1, oty));
                    }
                    open = Some((t, ty.to_string()));
                }
            }
        }
    }
    if let Some((start, ty)) = open {
        chunks.push(ChunkSpan::new(start, tags.len() - 1, ty));
    }
    Ok(chunks)
}

/// Renders a sorted, non-overlapping span list back to BIO tags.
pub fn chunks_to_bio(chunks: &[ChunkSpan], len: usize) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); len];
    let mut prev_end: Option<usize> = None;
    for chunk in chunks {
        if chunk.end >= len {
            return Err(Error::Data(format!(
                "chunk ({}, {}) exceeds sentence length {len}",
                chunk.start, chunk.end
            )));
        }
        if let Some(pe) = prev_end {
            if chunk.start <= pe {
                return Err(Error::Data("chunks must be sorted and non-overlapping".into()));
            }
        }
        tags[chunk.start] = format!("B-{}", chunk.ty);
        for t in tags.iter_mut().take(chunk.end + 1).skip(chunk.start + 1) {
            *t = format!("I-{}", chunk.ty);
        }
        prev_end = Some(chunk.end);
    }
    Ok(tags)
}

/// Micro-averaged precision/recall/F1 in percent. A chunk counts as correct
/// only when start, end and type all match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScores {
    fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(correct, predicted);
        let r = ratio(correct, gold);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        PrfScores {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "precision: {:.2}\nrecall: {:.2}\nf1: {:.2}\n",
            self.precision, self.recall, self.f1
        )
    }

    pub fn to_csv(&self) -> String {
        format!(
            "precision,recall,f1\n{:.4},{:.4},{:.4}\n",
            self.precision, self.recall, self.f1
        )
    }
}

/// Chunk F1 of predicted tags against gold sentences.
pub fn f1(gold: &[Sentence], predicted: &[Vec<String>]) -> Result<PrfScores> {
    if gold.len() != predicted.len() {
        return Err(Error::Data(format!(
            "gold has {} sentences, predictions have {}",
            gold.len(),
            predicted.len()
        )));
    }
    let mut n_gold = 0;
    let mut n_pred = 0;
    let mut n_correct = 0;
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Data(format!(
                "sentence {i}: gold has {} tokens, prediction has {}",
                g.len(),
                p.len()
            )));
        }
        let gc = extract_chunks(g.gold_tags())?;
        let pc = extract_chunks(p)?;
        let gset: HashSet<&ChunkSpan> = gc.iter().collect();
        n_correct += pc.iter().filter(|c| gset.contains(c)).count();
        n_gold += gc.len();
        n_pred += pc.len();
    }
    Ok(PrfScores::from_counts(n_correct, n_pred, n_gold))
}

/// Error-rate buckets over gold entities split by length at `threshold`
/// (length ≤ threshold is "short"). A gold entity is an error when no
/// predicted chunk matches it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthBuckets {
    pub threshold: usize,
    pub short_total: usize,
    pub short_errors: usize,
    pub long_total: usize,
    pub long_errors: usize,
}

impl LengthBuckets {
    pub fn short_rate(&self) -> f64 {
        rate(self.short_errors, self.short_total)
    }

    pub fn long_rate(&self) -> f64 {
        rate(self.long_errors, self.long_total)
    }
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Buckets gold entities by length and reports the unrecognized rate per
/// bucket. Inputs are per-sentence chunk lists.
pub fn length_buckets(
    gold: &[Vec<ChunkSpan>],
    predicted: &[Vec<ChunkSpan>],
    threshold: usize,
) -> Result<LengthBuckets> {
    if threshold < 1 {
        return Err(Error::Config("length threshold must be at least 1".into()));
    }
    if gold.len() != predicted.len() {
        return Err(Error::Data("gold/predicted sentence counts differ".into()));
    }
    let mut buckets = LengthBuckets {
        threshold,
        short_total: 0,
        short_errors: 0,
        long_total: 0,
        long_errors: 0,
    };
    for (gc, pc) in gold.iter().zip(predicted) {
        let pset: HashSet<&ChunkSpan> = pc.iter().collect();
        for g in gc {
            let missed = !pset.contains(g);
            if g.len() <= threshold {
                buckets.short_total += 1;
                buckets.short_errors += usize::from(missed);
            } else {
                buckets.long_total += 1;
                buckets.long_errors += usize::from(missed);
            }
        }
    }
    Ok(buckets)
}

/// Wrongly predicted entities broken down by their relation to the gold
/// entities of the same sentence, plus the length buckets.
///
/// Categories, in precedence order when several relations hold:
/// exact boundaries with the wrong type; gold contains the prediction
/// (boundary-1); the prediction contains a gold entity (boundary-2); partial
/// overlap (boundary-3); no token shared with any gold entity.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub wrong_type: usize,
    pub boundary1: usize,
    pub boundary2: usize,
    pub boundary3: usize,
    pub no_common_words: usize,
    pub wrong_predictions: usize,
    pub predicted_chunks: usize,
    pub gold_chunks: usize,
    pub correct_chunks: usize,
    pub buckets: LengthBuckets,
}

pub const DEFAULT_LENGTH_THRESHOLD: usize = 2;

/// Classifies every incorrect predicted chunk into exactly one category.
pub fn classify_errors(gold: &[Vec<ChunkSpan>], predicted: &[Vec<ChunkSpan>]) -> Result<ErrorReport> {
    classify_errors_with_threshold(gold, predicted, DEFAULT_LENGTH_THRESHOLD)
}

pub fn classify_errors_with_threshold(
    gold: &[Vec<ChunkSpan>],
    predicted: &[Vec<ChunkSpan>],
    threshold: usize,
) -> Result<ErrorReport> {
    if gold.len() != predicted.len() {
        return Err(Error::Data("gold/predicted sentence counts differ".into()));
    }
    let buckets = length_buckets(gold, predicted, threshold)?;
    let mut report = ErrorReport {
        wrong_type: 0,
        boundary1: 0,
        boundary2: 0,
        boundary3: 0,
        no_common_words: 0,
        wrong_predictions: 0,
        predicted_chunks: 0,
        gold_chunks: gold.iter().map(Vec::len).sum(),
        correct_chunks: 0,
        buckets,
    };
    for (gc, pc) in gold.iter().zip(predicted) {
        let gset: HashSet<&ChunkSpan> = gc.iter().collect();
        report.predicted_chunks += pc.len();
        for p in pc {
            if gset.contains(p) {
                report.correct_chunks += 1;
                continue;
            }
            report.wrong_predictions += 1;
            if gc.iter().any(|g| g.start == p.start && g.end == p.end && g.ty != p.ty) {
                report.wrong_type += 1;
            } else if gc.iter().any(|g| g.contains(p)) {
                report.boundary1 += 1;
            } else if gc.iter().any(|g| p.contains(g)) {
                report.boundary2 += 1;
            } else if gc.iter().any(|g| p.overlaps(g)) {
                report.boundary3 += 1;
            } else {
                report.no_common_words += 1;
            }
        }
    }
    Ok(report)
}

impl ErrorReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("gold_chunks: {}\n", self.gold_chunks));
        out.push_str(&format!("predicted_chunks: {}\n", self.predicted_chunks));
        out.push_str(&format!("correct_chunks: {}\n", self.correct_chunks));
        out.push_str(&format!("wrong_predictions: {}\n", self.wrong_predictions));
        out.push_str(&format!("type: {}\n", self.wrong_type));
        out.push_str(&format!("boundary-1: {}\n", self.boundary1));
        out.push_str(&format!("boundary-2: {}\n", self.boundary2));
        out.push_str(&format!("boundary-3: {}\n", self.boundary3));
        out.push_str(&format!("no-common-words: {}\n", self.no_common_words));
        out.push_str(&format!("length_threshold: {}\n", self.buckets.threshold));
        out.push_str(&format!(
            "short_entity_errors: {}/{} ({:.4})\n",
            self.buckets.short_errors,
            self.buckets.short_total,
            self.buckets.short_rate()
        ));
        out.push_str(&format!(
            "long_entity_errors: {}/{} ({:.4})\n",
            self.buckets.long_errors,
            self.buckets.long_total,
            self.buckets.long_rate()
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in [
            ("gold_chunks", self.gold_chunks as f64),
            ("predicted_chunks", self.predicted_chunks as f64),
            ("correct_chunks", self.correct_chunks as f64),
            ("wrong_predictions", self.wrong_predictions as f64),
            ("type", self.wrong_type as f64),
            ("boundary-1", self.boundary1 as f64),
            ("boundary-2", self.boundary2 as f64),
            ("boundary-3", self.boundary3 as f64),
            ("no-common-words", self.no_common_words as f64),
            ("length_threshold", self.buckets.threshold as f64),
            ("short_entity_error_rate", self.buckets.short_rate()),
            ("long_entity_error_rate", self.buckets.long_rate()),
        ] {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

/// Wall-clock result of decoding one sentence set under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingResult {
    pub label: String,
    pub seconds: f64,
    pub f1: f64,
}

pub fn timings_to_text(timings: &[TimingResult]) -> String {
    let mut out = String::new();
    for t in timings {
        out.push_str(&format!("{}: {:.3} s, f1 {:.2}\n", t.label, t.seconds, t.f1));
    }
    out
}

pub fn timings_to_csv(timings: &[TimingResult]) -> String {
    let mut out = String::from("variant,seconds,f1\n");
    for t in timings {
        out.push_str(&format!("{},{:.6},{:.4}\n", t.label, t.seconds, t.f1));
    }
    out
}

/// Decodes `sentences` once per prune configuration on a single thread,
/// recording wall time and F1. Configurations that are lossless by
/// construction (pruning off, or width covering the whole unigram tag set)
/// must agree on F1; disagreement is reported as an error.
pub fn bench_decode(
    bundle: &ModelBundle,
    sentences: &[Sentence],
    configs: &[PruneConfig],
) -> Result<Vec<TimingResult>> {
    if sentences.is_empty() {
        return Err(Error::Data("benchmark needs at least one sentence".into()));
    }
    let mut results = Vec::with_capacity(configs.len());
    let mut lossless_f1: Option<f64> = None;
    for &config in configs {
        let start = Instant::now();
        let decoder = MultiOrderDecoder::from_bundle(bundle)?;
        let mut predictions = Vec::with_capacity(sentences.len());
        for sent in sentences {
            predictions.push(decode_sentence(bundle, &decoder, sent, config)?);
        }
        let seconds = start.elapsed().as_secs_f64();
        let scores = f1(sentences, &predictions)?;
        let lossless = match config {
            PruneConfig::Off => true,
            PruneConfig::Width(w) => w >= MultiOrderDecoder::from_bundle(bundle)?.unigram_count(),
        };
        if lossless {
            match lossless_f1 {
                None => lossless_f1 = Some(scores.f1),
                Some(expected) if expected == scores.f1 => {}
                Some(expected) => {
                    return Err(Error::Internal(format!(
                        "lossless configurations disagree on F1: {expected} vs {}",
                        scores.f1
                    )));
                }
            }
        }
        results.push(TimingResult {
            label: config.label(),
            seconds,
            f1: scores.f1,
        });
    }
    Ok(results)
}
