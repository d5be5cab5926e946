//! Multi-order sequence labeling toolkit.
//!
//! Sequence labeling tasks such as chunking and NER are usually modeled by
//! predicting one tag per token. This crate generalizes that to *orders*: an
//! order-n tagger predicts, at every position, the n-gram made of the current
//! tag and the n−1 preceding tags. Several single-order taggers trained
//! independently over the same corpus can then be combined at decode time by
//! summing their per-position log-scores and searching for the best unigram
//! tag sequence with a dynamic program, optionally pruned to the top-k
//! unigram tags per position.
//!
//! The pieces:
//!
//! - [`corpus`]: CoNLL column parsing, tag-scheme normalization, token
//!   vocabulary and sparse spelling/context features.
//! - [`labelspace`]: n-gram label vocabularies and unigram ↔ n-gram
//!   transforms.
//! - [`nn`]: a small self-contained bidirectional LSTM tagger core in `f64`
//!   (embeddings, BPTT gradients, Adam).
//! - [`tagger`]: training of single-order models, score lattices, greedy
//!   decoding, and model-bundle serialization.
//! - [`decoder`]: the multi-order dynamic program with top-k pruning, plus an
//!   exhaustive oracle for exactness checks.
//! - [`eval`]: chunk F1, an error taxonomy for wrong predictions,
//!   entity-length buckets, and a decode-time benchmark harness.
//! - [`synth`]: a second-order synthetic corpus generator used by the tests
//!   and handy for experiments without shared-task data.
//! - [`config`]: run configuration shared with the command-line frontend.

pub mod config;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod labelspace;
pub mod nn;
pub mod synth;
pub mod tagger;

pub use error::{Error, Result};
