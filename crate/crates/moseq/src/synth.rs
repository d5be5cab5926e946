//! Synthetic second-order chunking corpus.
//!
//! Tags follow a Markov chain conditioned on the previous *two* tags, so
//! chunk lengths carry information a first-order view cannot represent:
//! a chunk continues or closes depending on how long it already is. Chunks
//! frequently chain back-to-back, often with the same type, and tokens are
//! drawn from per-type pools shared between B and I positions (plus a common
//! noise pool), which makes the internal boundary between two adjacent
//! same-type chunks invisible from the tokens alone. Recovering it requires
//! the tag-transition regularities.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{Sentence, Token};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Number of chunk types; the tag set is O plus B-/I- per type.
    pub num_types: usize,
    /// Tokens in each type's emission pool.
    pub tokens_per_type: usize,
    /// Tokens in the shared noise pool.
    pub common_tokens: usize,
    /// Probability of emitting from the noise pool instead of the tag's own.
    pub emission_noise: f64,
    /// Sentence length range (inclusive).
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of opening a chunk from outside.
    pub chunk_start: f64,
    /// Probability that a closing chunk chains straight into another chunk.
    pub chain: f64,
    /// Probability that a chained chunk keeps the same type.
    pub chain_same_type: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_types: 10,
            tokens_per_type: 6,
            common_tokens: 8,
            emission_noise: 0.1,
            min_len: 8,
            max_len: 18,
            chunk_start: 0.55,
            chain: 0.6,
            chain_same_type: 0.55,
        }
    }
}

fn type_name(k: usize) -> String {
    // A, B, …, Z, T26, T27, …
    if k < 26 {
        ((b'A' + k as u8) as char).to_string()
    } else {
        format!("T{k}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

impl Tag {
    fn name(&self) -> String {
        match self {
            Tag::Outside => "O".to_string(),
            Tag::Begin(k) => format!("B-{}", type_name(*k)),
            Tag::Inside(k) => format!("I-{}", type_name(*k)),
        }
    }
}

/// Per-type continuation probability after the second chunk token; types
/// alternate between mostly-short and mostly-long chunks.
fn continue_prob(k: usize) -> f64 {
    [0.3, 0.5, 0.7][k % 3]
}

fn open_chunk<R: Rng>(rng: &mut R, cfg: &SynthConfig, prev_type: Option<usize>) -> Tag {
    let ty = match prev_type {
        Some(prev) if rng.random::<f64>() < cfg.chain_same_type => prev,
        _ => rng.random_range(0..cfg.num_types),
    };
    Tag::Begin(ty)
}

/// Next tag given the previous two; this is where the second-order structure
/// lives. Chunks always run at least two tokens and at most three.
fn next_tag<R: Rng>(rng: &mut R, cfg: &SynthConfig, prev2: Tag, prev1: Tag) -> Tag {
    match (prev2, prev1) {
        // inside a chunk that just opened: always continue to length 2
        (_, Tag::Begin(k)) => Tag::Inside(k),
        // length 2 so far: type-specific coin for a third token
        (Tag::Begin(k1), Tag::Inside(k2)) if k1 == k2 && rng.random::<f64>() < continue_prob(k2) => {
            Tag::Inside(k2)
        }
        // chunk closes: chain into a new chunk or fall outside
        (_, Tag::Inside(k)) => {
            if rng.random::<f64>() < cfg.chain {
                open_chunk(rng, cfg, Some(k))
            } else {
                Tag::Outside
            }
        }
        (_, Tag::Outside) => {
            if rng.random::<f64>() < cfg.chunk_start {
                open_chunk(rng, cfg, None)
            } else {
                Tag::Outside
            }
        }
    }
}

fn emit<R: Rng>(rng: &mut R, cfg: &SynthConfig, tag: Tag) -> String {
    if rng.random::<f64>() < cfg.emission_noise {
        return format!("c{}", rng.random_range(0..cfg.common_tokens));
    }
    match tag {
        Tag::Outside => format!("o{}", rng.random_range(0..cfg.tokens_per_type)),
        Tag::Begin(k) | Tag::Inside(k) => {
            // same pool for B and I: within-chunk position is invisible
            format!("x{k}_{}", rng.random_range(0..cfg.tokens_per_type))
        }
    }
}

/// Generates `count` sentences from the configured process, deterministic
/// for a given seed.
pub fn generate(cfg: &SynthConfig, count: usize, seed: u64) -> Result<Vec<Sentence>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut tags = Vec::with_capacity(len);
        let mut prev2 = Tag::Outside;
        let mut prev1 = Tag::Outside;
        for _ in 0..len {
            let tag = next_tag(&mut rng, cfg, prev2, prev1);
            tags.push(tag);
            prev2 = prev1;
            prev1 = tag;
        }
        // a trailing B would be a chunk the process never finished; close it
        if let Some(Tag::Begin(k)) = tags.last().copied() {
            let n = tags.len();
            tags[n - 1] = if n >= 2 && matches!(tags[n - 2], Tag::Inside(k2) | Tag::Begin(k2) if k2 == k) {
                Tag::Inside(k)
            } else {
                Tag::Outside
            };
        }
        let tokens: Vec<Token> = tags.iter().map(|&t| Token::new(emit(&mut rng, cfg, t))).collect();
        let tag_names: Vec<String> = tags.iter().map(Tag::name).collect();
        sentences.push(Sentence::new(tokens, tag_names)?);
    }
    Ok(sentences)
}

/// Unigram tag-set size implied by the configuration (O plus B/I per type).
pub fn unigram_tag_count(cfg: &SynthConfig) -> usize {
    2 * cfg.num_types + 1
}
