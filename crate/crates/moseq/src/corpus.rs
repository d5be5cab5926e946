//! CoNLL-style corpus ingestion.
//!
//! Reads whitespace-separated column files (blank line = sentence boundary),
//! normalizes IOB1/IOBES tag schemes to BIO, builds the token vocabulary and
//! extracts the sparse spelling/context features every tagger consumes.

use std::collections::HashMap;
use std::io::Read;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Reserved surface form for the unknown-token embedding, always id 0.
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// One input token: its surface form plus the sparse binary feature ids
/// firing at its position. Feature ids are sorted ascending and deduplicated;
/// they are empty until [`featurize`] has run with a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub feature_ids: Vec<u32>,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            feature_ids: Vec::new(),
        }
    }
}

/// A sentence with one gold unigram tag per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<Token>,
    gold_tags: Vec<String>,
}

impl Sentence {
    /// Builds a sentence, enforcing `|tokens| == |gold_tags|`, non-empty
    /// surfaces and length ≥ 1.
    pub fn new(tokens: Vec<Token>, gold_tags: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("sentence must contain at least one token".into()));
        }
        if tokens.len() != gold_tags.len() {
            return Err(Error::Data(format!(
                "sentence has {} tokens but {} tags",
                tokens.len(),
                gold_tags.len()
            )));
        }
        if let Some(tok) = tokens.iter().find(|t| t.surface.is_empty()) {
            return Err(Error::Data(format!("empty token surface in {tokens:?}", tokens = tok)));
        }
        Ok(Sentence { tokens, gold_tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn gold_tags(&self) -> &[String] {
        &self.gold_tags
    }

    pub fn surface(&self, position: usize) -> &str {
        &self.tokens[position].surface
    }

    /// Replaces the gold tags (used by scheme normalization).
    pub fn set_gold_tags(&mut self, tags: Vec<String>) -> Result<()> {
        if tags.len() != self.tokens.len() {
            return Err(Error::Data("tag count does not match token count".into()));
        }
        self.gold_tags = tags;
        Ok(())
    }

    fn set_feature_ids(&mut self, per_token: Vec<Vec<u32>>) {
        for (tok, ids) in self.tokens.iter_mut().zip(per_token) {
            tok.feature_ids = ids;
        }
    }
}

/// Parses CoNLL column data: one token per line, whitespace-separated
/// columns, blank line between sentences. Tag strings are kept verbatim.
pub fn parse_conll<R: Read>(mut reader: R, token_column: usize, tag_column: usize) -> Result<Vec<Sentence>> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Data(format!("reading input: {e}")))?;
    parse_conll_str(&text, token_column, tag_column)
}

/// [`parse_conll`] over an in-memory string.
pub fn parse_conll_str(text: &str, token_column: usize, tag_column: usize) -> Result<Vec<Sentence>> {
    parse_columns(text, token_column, Some(tag_column))
}

/// Parses column data taking the *last* column of every line as the tag.
/// Decode output appends predictions as a trailing column, so this reads it
/// back regardless of how many columns the original file had.
pub fn parse_conll_last_tag<R: Read>(mut reader: R, token_column: usize) -> Result<Vec<Sentence>> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Data(format!("reading input: {e}")))?;
    parse_columns(&text, token_column, None)
}

fn parse_columns(text: &str, token_column: usize, tag_column: Option<usize>) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut tags: Vec<String> = Vec::new();

    let mut flush = |tokens: &mut Vec<Token>, tags: &mut Vec<String>| -> Result<()> {
        if !tokens.is_empty() {
            sentences.push(Sentence::new(std::mem::take(tokens), std::mem::take(tags))?);
        }
        Ok(())
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags)?;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let needed = match tag_column {
            Some(tc) => token_column.max(tc) + 1,
            None => token_column + 2, // token plus at least a trailing tag
        };
        if cols.len() < needed {
            return Err(Error::Data(format!(
                "line {line_no}: expected at least {needed} columns, found {}",
                cols.len()
            )));
        }
        let tag = match tag_column {
            Some(tc) => cols[tc],
            None => cols[cols.len() - 1],
        };
        tokens.push(Token::new(cols[token_column]));
        tags.push(tag.to_string());
    }
    flush(&mut tokens, &mut tags)?;
    Ok(sentences)
}

/// Renders sentences back to two-column CoNLL text (`surface tag`), one
/// blank line between sentences. `parse_conll_str(render_conll(s), 0, 1)`
/// reproduces `s` up to feature ids.
pub fn render_conll(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for (i, sent) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in sent.tokens().iter().zip(sent.gold_tags()) {
            out.push_str(&tok.surface);
            out.push(' ');
            out.push_str(tag);
            out.push('\n');
        }
    }
    out
}

/// Span-encoding schemes accepted on input. Everything is converted to BIO
/// before training or evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagScheme {
    Iob1,
    Bio,
    Iobes,
}

impl FromStr for TagScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iob1" => Ok(TagScheme::Iob1),
            "bio" | "iob2" => Ok(TagScheme::Bio),
            "iobes" => Ok(TagScheme::Iobes),
            other => Err(Error::Config(format!(
                "unknown tag scheme '{other}' (expected iob1, bio or iobes)"
            ))),
        }
    }
}

fn split_tag<'a>(tag: &'a str, allowed: &str) -> Option<(char, &'a str)> {
    if tag == "O" {
        return Some(('O', ""));
    }
    let mut chars = tag.chars();
    let prefix = chars.next()?;
    if !allowed.contains(prefix) || prefix == 'O' {
        return None;
    }
    let rest = chars.as_str();
    if rest.is_empty() {
        Some((prefix, ""))
    } else {
        rest.strip_prefix('-').map(|ty| (prefix, ty))
    }
}

fn join_tag(prefix: char, ty: &str) -> String {
    if ty.is_empty() {
        prefix.to_string()
    } else {
        format!("{prefix}-{ty}")
    }
}

/// Converts every sentence's tags from `scheme` to BIO. Chunk spans are
/// preserved exactly; tags that do not parse under the declared scheme are
/// reported with their sentence and token position.
pub fn normalize_to_bio(sentences: Vec<Sentence>, scheme: TagScheme) -> Result<Vec<Sentence>> {
    let allowed = match scheme {
        TagScheme::Iob1 | TagScheme::Bio => "BIO",
        TagScheme::Iobes => "BIOES",
    };
    let mut out = Vec::with_capacity(sentences.len());
    for (si, mut sent) in sentences.into_iter().enumerate() {
        let parsed: Vec<(char, String)> = sent
            .gold_tags()
            .iter()
            .enumerate()
            .map(|(t, tag)| {
                split_tag(tag, allowed)
                    .map(|(p, ty)| (p, ty.to_string()))
                    .ok_or_else(|| {
                        Error::Data(format!(
                            "sentence {si}, position {t}: tag '{tag}' not parseable under {scheme:?}"
                        ))
                    })
            })
            .collect::<Result<_>>()?;

        let tags = match scheme {
            TagScheme::Bio => parsed.iter().map(|(p, ty)| join_tag(*p, ty)).collect(),
            TagScheme::Iobes => parsed
                .iter()
                .map(|(p, ty)| match p {
                    'S' => join_tag('B', ty),
                    'E' => join_tag('I', ty),
                    other => join_tag(*other, ty),
                })
                .collect(),
            TagScheme::Iob1 => {
                // In IOB1 a chunk normally starts with I; B only separates two
                // adjacent chunks of the same type.
                let mut tags = Vec::with_capacity(parsed.len());
                for (t, (p, ty)) in parsed.iter().enumerate() {
                    let tag = match p {
                        'I' => {
                            let starts = match t.checked_sub(1).map(|prev| &parsed[prev]) {
                                None => true,
                                Some((pp, pty)) => *pp == 'O' || pty != ty,
                            };
                            join_tag(if starts { 'B' } else { 'I' }, ty)
                        }
                        other => join_tag(*other, ty),
                    };
                    tags.push(tag);
                }
                tags
            }
        };
        sent.set_gold_tags(tags)?;
        out.push(sent);
    }
    Ok(out)
}

/// Token and feature vocabulary shared by every model of a bundle.
///
/// Tokens are mapped to dense ids in first-occurrence order with id 0
/// reserved for [`UNKNOWN_TOKEN`]; tokens rarer than `min_count` fall back to
/// id 0. Feature names observed in the training data get ids the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    feature_to_id: HashMap<String, u32>,
    id_to_feature: Vec<String>,
}

impl TokenVocab {
    pub fn token_id(&self, surface: &str) -> u32 {
        self.token_to_id.get(surface).copied().unwrap_or(0)
    }

    pub fn token_count(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn feature_count(&self) -> usize {
        self.id_to_feature.len()
    }

    pub fn feature_id(&self, name: &str) -> Option<u32> {
        self.feature_to_id.get(name).copied()
    }

    /// Tokens in id order; index 0 is the unknown sentinel.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Feature names in id order.
    pub fn features(&self) -> &[String] {
        &self.id_to_feature
    }

    /// Feature ids firing at `position`, sorted ascending without duplicates.
    /// Names never seen at vocabulary-build time are dropped.
    pub fn extract_features(&self, sentence: &Sentence, position: usize) -> Result<Vec<u32>> {
        let names = feature_names(sentence, position)?;
        let mut ids: Vec<u32> = names.iter().filter_map(|n| self.feature_id(n)).collect();
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    /// Rebuilds a vocabulary from serialized id-ordered lists.
    pub fn from_parts(tokens: Vec<String>, features: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNKNOWN_TOKEN) {
            return Err(Error::Bundle(format!(
                "token table must start with the {UNKNOWN_TOKEN} sentinel"
            )));
        }
        let mut token_to_id = HashMap::new();
        for (id, tok) in tokens.iter().enumerate().skip(1) {
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Bundle(format!("duplicate token '{tok}' in vocabulary")));
            }
        }
        let mut feature_to_id = HashMap::new();
        for (id, name) in features.iter().enumerate() {
            if feature_to_id.insert(name.clone(), id as u32).is_some() {
                return Err(Error::Bundle(format!("duplicate feature '{name}' in vocabulary")));
            }
        }
        Ok(TokenVocab {
            token_to_id,
            id_to_token: tokens,
            feature_to_id,
            id_to_feature: features,
        })
    }

    /// Canonical byte serialization (used inside model bundles and for
    /// determinism checks).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put_list = |out: &mut Vec<u8>, items: &[String]| {
            out.extend_from_slice(&(items.len() as u32).to_le_bytes());
            for item in items {
                let bytes = item.as_bytes();
                out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
                out.extend_from_slice(bytes);
            }
        };
        put_list(&mut out, &self.id_to_token);
        put_list(&mut out, &self.id_to_feature);
        out
    }
}

/// Builds the shared vocabulary. Tokens occurring fewer than `min_count`
/// times map to the unknown id; ordering is first occurrence, so the result
/// is deterministic given the input order.
pub fn build_token_vocab(sentences: &[Sentence], min_count: usize) -> Result<TokenVocab> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sent in sentences {
        for tok in sent.tokens() {
            *counts.entry(tok.surface.as_str()).or_insert(0) += 1;
        }
    }

    let mut token_to_id = HashMap::new();
    let mut id_to_token = vec![UNKNOWN_TOKEN.to_string()];
    let mut feature_to_id: HashMap<String, u32> = HashMap::new();
    let mut id_to_feature = Vec::new();

    for sent in sentences {
        for (pos, tok) in sent.tokens().iter().enumerate() {
            let surface = tok.surface.as_str();
            if surface != UNKNOWN_TOKEN
                && counts[surface] >= min_count
                && !token_to_id.contains_key(surface)
            {
                token_to_id.insert(surface.to_string(), id_to_token.len() as u32);
                id_to_token.push(surface.to_string());
            }
            for name in feature_names(sent, pos)? {
                if !feature_to_id.contains_key(&name) {
                    feature_to_id.insert(name.clone(), id_to_feature.len() as u32);
                    id_to_feature.push(name);
                }
            }
        }
    }

    Ok(TokenVocab {
        token_to_id,
        id_to_token,
        feature_to_id,
        id_to_feature,
    })
}

/// Materializes feature ids into every token (see [`TokenVocab::extract_features`]).
pub fn featurize(sentences: &mut [Sentence], vocab: &TokenVocab) -> Result<()> {
    for sent in sentences.iter_mut() {
        let per_token: Vec<Vec<u32>> = (0..sent.len())
            .map(|pos| vocab.extract_features(sent, pos))
            .collect::<Result<_>>()?;
        sent.set_feature_ids(per_token);
    }
    Ok(())
}

/// Names of the sparse binary features firing for `sentence[position]`.
///
/// Spelling features: initial capital, all caps, all digits, contains digit,
/// contains hyphen, contains punctuation, and character prefixes/suffixes of
/// lengths 1–3. Context features: the lowercased surface at offsets −2..+2,
/// with begin/end sentinels past the sentence boundary. Case is kept for the
/// affix features so the capitalization signal stays intact; only the
/// context-identity features lowercase.
pub fn feature_names(sentence: &Sentence, position: usize) -> Result<Vec<String>> {
    if position >= sentence.len() {
        return Err(Error::Data(format!(
            "feature position {position} out of range for sentence of length {}",
            sentence.len()
        )));
    }
    let surface = sentence.surface(position);
    let chars: Vec<char> = surface.chars().collect();
    let mut names = Vec::with_capacity(16);

    if chars[0].is_uppercase() {
        names.push("c:init".to_string());
    }
    let mut alpha = chars.iter().filter(|c| c.is_alphabetic()).peekable();
    if alpha.peek().is_some() && alpha.all(|c| c.is_uppercase()) {
        names.push("c:allcaps".to_string());
    }
    if chars.iter().all(|c| c.is_ascii_digit()) {
        names.push("d:all".to_string());
    }
    if chars.iter().any(|c| c.is_ascii_digit()) {
        names.push("d:any".to_string());
    }
    if chars.contains(&'-') {
        names.push("hyphen".to_string());
    }
    if chars.iter().any(|c| c.is_ascii_punctuation()) {
        names.push("punct".to_string());
    }
    for k in 1..=3usize {
        if chars.len() >= k {
            let prefix: String = chars[..k].iter().collect();
            names.push(format!("p{k}:{prefix}"));
            let suffix: String = chars[chars.len() - k..].iter().collect();
            names.push(format!("s{k}:{suffix}"));
        }
    }
    for offset in -2i64..=2 {
        let j = position as i64 + offset;
        let value = if j < 0 {
            "<bos>".to_string()
        } else if j >= sentence.len() as i64 {
            "<eos>".to_string()
        } else {
            sentence.surface(j as usize).to_lowercase()
        };
        names.push(format!("w{offset:+}:{value}"));
    }
    Ok(names)
}
