//! Order-n label vocabularies.
//!
//! An order-n label is the concatenation of n consecutive unigram tags,
//! padded with a START symbol before the sentence start. Training data
//! determines which n-grams exist; anything else is out of vocabulary and
//! handled by the decoder's floor score.

use std::collections::HashMap;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

/// Padding tag standing in for positions before the sentence.
pub const START_TAG: &str = "<START>";

/// Joins label components; a control character so it can never appear inside
/// a whitespace-delimited tag.
pub const COMPONENT_SEPARATOR: char = '\u{1}';

/// Bijection between the order-n label strings observed in training and
/// dense ids, in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    order: usize,
    label_to_id: HashMap<String, u32>,
    id_to_label: Vec<String>,
}

impl LabelVocab {
    /// Builds a vocabulary from explicit label strings (used by the bundle
    /// loader and by tests). Every label must have exactly `order`
    /// components and appear once.
    pub fn from_labels(order: usize, labels: Vec<String>) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("label order must be at least 1".into()));
        }
        let mut label_to_id = HashMap::new();
        for (id, label) in labels.iter().enumerate() {
            let parts: Vec<&str> = label.split(COMPONENT_SEPARATOR).collect();
            if parts.len() != order {
                return Err(Error::Data(format!(
                    "label '{}' has {} components, expected {order}",
                    display_label(label),
                    parts.len()
                )));
            }
            if parts.iter().any(|p| p.is_empty()) {
                return Err(Error::Data(format!(
                    "label '{}' has an empty component",
                    display_label(label)
                )));
            }
            if label_to_id.insert(label.clone(), id as u32).is_some() {
                return Err(Error::Data(format!(
                    "duplicate label '{}'",
                    display_label(label)
                )));
            }
        }
        Ok(LabelVocab {
            order,
            label_to_id,
            id_to_label: labels,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.id_to_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_label.is_empty()
    }

    pub fn id_of(&self, label: &str) -> Option<u32> {
        self.label_to_id.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.id_to_label[id as usize]
    }

    /// Labels in id order.
    pub fn labels(&self) -> &[String] {
        &self.id_to_label
    }

    /// One label per line in id order, components joined by a space.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        for label in &self.id_to_label {
            out.push_str(&display_label(label));
            out.push('\n');
        }
        out
    }
}

/// Human-readable rendering of a label (components joined by a space).
pub fn display_label(label: &str) -> String {
    label
        .split(COMPONENT_SEPARATOR)
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_unigram(tag: &str) -> Result<()> {
    if tag.is_empty() {
        return Err(Error::Data("empty tag".into()));
    }
    if tag == START_TAG {
        return Err(Error::Data(format!("tag '{START_TAG}' is reserved for padding")));
    }
    if tag.contains(COMPONENT_SEPARATOR) {
        return Err(Error::Data(format!(
            "tag '{}' contains the reserved separator",
            display_label(tag)
        )));
    }
    Ok(())
}

/// Collects every order-n label occurring in the training tags (START-padded
/// at sentence starts) in first-occurrence order.
pub fn build_label_vocab(sentences: &[Sentence], order: usize) -> Result<LabelVocab> {
    if order < 1 {
        return Err(Error::Config("label order must be at least 1".into()));
    }
    let mut label_to_id = HashMap::new();
    let mut id_to_label = Vec::new();
    for sent in sentences {
        for tag in sent.gold_tags() {
            check_unigram(tag)?;
        }
        for label in to_ngram(sent.gold_tags(), order)? {
            if !label_to_id.contains_key(&label) {
                label_to_id.insert(label.clone(), id_to_label.len() as u32);
                id_to_label.push(label);
            }
        }
    }
    Ok(LabelVocab {
        order,
        label_to_id,
        id_to_label,
    })
}

/// Transforms a unigram tag sequence into order-n labels:
/// `labels[t] = (y_{t-order+1}, …, y_t)` with START for positions before the
/// sentence. Length is preserved.
pub fn to_ngram(tags: &[String], order: usize) -> Result<Vec<String>> {
    if order < 1 {
        return Err(Error::Config("label order must be at least 1".into()));
    }
    let mut labels = Vec::with_capacity(tags.len());
    for t in 0..tags.len() {
        let mut parts: Vec<&str> = Vec::with_capacity(order);
        for j in 0..order {
            let idx = t as i64 - (order - 1 - j) as i64;
            parts.push(if idx < 0 { START_TAG } else { &tags[idx as usize] });
        }
        labels.push(parts.join(&COMPONENT_SEPARATOR.to_string()));
    }
    Ok(labels)
}

/// Projects an n-gram label to its final component, the tag at the label's
/// own position.
pub fn last_component(label: &str) -> Result<&str> {
    let last = label
        .rsplit(COMPONENT_SEPARATOR)
        .next()
        .unwrap_or_default();
    if last.is_empty() {
        return Err(Error::Data("malformed label: empty final component".into()));
    }
    Ok(last)
}

/// An order-n label sequence with checked overlap consistency: consecutive
/// labels share n−1 components, and START appears exactly in the padding
/// slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramTagSequence {
    order: usize,
    labels: Vec<String>,
}

impl NgramTagSequence {
    pub fn new(order: usize, labels: Vec<String>) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("label order must be at least 1".into()));
        }
        let split: Vec<Vec<&str>> = labels
            .iter()
            .map(|l| l.split(COMPONENT_SEPARATOR).collect())
            .collect();
        for (t, parts) in split.iter().enumerate() {
            if parts.len() != order {
                return Err(Error::Data(format!(
                    "label at position {t} has {} components, expected {order}",
                    parts.len()
                )));
            }
            for (j, part) in parts.iter().enumerate() {
                let position = t as i64 - (order - 1 - j) as i64;
                let is_padding = position < 0;
                if is_padding != (*part == START_TAG) {
                    return Err(Error::Data(format!(
                        "label at position {t}: component {j} violates START padding"
                    )));
                }
            }
            if t > 0 && split[t - 1][1..] != parts[..order - 1] {
                return Err(Error::Data(format!(
                    "labels at positions {} and {t} do not overlap consistently",
                    t - 1
                )));
            }
        }
        Ok(NgramTagSequence { order, labels })
    }

    pub fn from_tags(tags: &[String], order: usize) -> Result<Self> {
        Self::new(order, to_ngram(tags, order)?)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Recovers the unigram tags by projecting every label.
    pub fn to_tags(&self) -> Result<Vec<String>> {
        self.labels
            .iter()
            .map(|l| last_component(l).map(str::to_string))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Token};
    use proptest::prelude::*;

    fn sep() -> String {
        COMPONENT_SEPARATOR.to_string()
    }

    fn sentence(tags: &[&str]) -> Sentence {
        Sentence::new(
            tags.iter().enumerate().map(|(i, _)| Token::new(format!("w{i}"))).collect(),
            tags.iter().map(|t| t.to_string()).collect(),
        )
        .unwrap()
    }

    fn strings(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn to_ngram_order_two() {
        let labels = to_ngram(&strings(&["B", "I", "O"]), 2).unwrap();
        let s = sep();
        assert_eq!(labels, vec![format!("{START_TAG}{s}B"), format!("B{s}I"), format!("I{s}O")]);
    }

    #[test]
    fn to_ngram_order_one_is_identity() {
        let tags = strings(&["B-NP", "I-NP", "O"]);
        assert_eq!(to_ngram(&tags, 1).unwrap(), tags);
    }

    #[test]
    fn to_ngram_pads_with_start() {
        let labels = to_ngram(&strings(&["B"]), 3).unwrap();
        let s = sep();
        assert_eq!(labels, vec![format!("{START_TAG}{s}{START_TAG}{s}B")]);
    }

    #[test]
    fn build_vocab_single_sentence_order_two() {
        let sents = vec![sentence(&["B-NP", "I-NP"])];
        let vocab = build_label_vocab(&sents, 2).unwrap();
        assert_eq!(vocab.len(), 2);
        let s = sep();
        assert_eq!(vocab.id_of(&format!("{START_TAG}{s}B-NP")), Some(0));
        assert_eq!(vocab.id_of(&format!("B-NP{s}I-NP")), Some(1));
    }

    #[test]
    fn vocab_rejects_bad_order() {
        assert!(build_label_vocab(&[], 0).is_err());
    }

    #[test]
    fn vocab_rejects_reserved_tags() {
        let sents = vec![sentence(&[START_TAG])];
        assert!(build_label_vocab(&sents, 1).is_err());
    }

    #[test]
    fn last_component_projects() {
        let s = sep();
        assert_eq!(last_component(&format!("{START_TAG}{s}B-NP")).unwrap(), "B-NP");
        assert_eq!(last_component(&format!("B{s}I{s}O")).unwrap(), "O");
        assert_eq!(last_component("X").unwrap(), "X");
    }

    #[test]
    fn ngram_sequence_checks_overlap() {
        let tags = strings(&["B", "I", "O", "B"]);
        for order in 1..=4 {
            assert!(NgramTagSequence::from_tags(&tags, order).is_ok());
        }
        let s = sep();
        // B·I followed by O·B skips the shared component.
        let bad = vec![format!("{START_TAG}{s}B"), format!("O{s}B")];
        assert!(NgramTagSequence::new(2, bad).is_err());
    }

    #[test]
    fn training_ngrams_always_in_vocab() {
        let sents = vec![sentence(&["B", "I", "O"]), sentence(&["O", "B", "B"])];
        for order in 1..=3 {
            let vocab = build_label_vocab(&sents, order).unwrap();
            for sent in &sents {
                for label in to_ngram(sent.gold_tags(), order).unwrap() {
                    assert!(vocab.id_of(&label).is_some());
                }
            }
        }
    }

    proptest! {
        /// Projecting each n-gram back to its last component recovers the
        /// original tags for every order.
        #[test]
        fn ngram_round_trip(raw in prop::collection::vec(0usize..4, 1..12), order in 1usize..5) {
            let names = ["O", "B-A", "I-A", "B-B"];
            let tags: Vec<String> = raw.iter().map(|&i| names[i].to_string()).collect();
            let seq = NgramTagSequence::from_tags(&tags, order).unwrap();
            prop_assert_eq!(seq.to_tags().unwrap(), tags);
        }

        /// |Y^(n)| is between |Y^(1)| and |Y^(1)|^n once every tag occurs.
        #[test]
        fn vocab_size_bounds(raw in prop::collection::vec(0usize..3, 3..40)) {
            let names = ["O", "B-A", "I-A"];
            let mut tags: Vec<String> = raw.iter().map(|&i| names[i].to_string()).collect();
            for n in names {
                tags.push(n.to_string()); // make sure every unigram occurs
            }
            let sents = vec![sentence(&tags.iter().map(String::as_str).collect::<Vec<_>>())];
            let uni = build_label_vocab(&sents, 1).unwrap().len();
            for order in 2..=3usize {
                let size = build_label_vocab(&sents, order).unwrap().len();
                prop_assert!(size >= uni);
                // START padding adds at most order-1 extra context patterns.
                prop_assert!(size <= uni.pow(order as u32) + (order - 1) * uni.pow((order - 1) as u32));
            }
        }
    }
}
