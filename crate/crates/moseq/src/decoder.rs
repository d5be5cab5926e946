//! Multi-order decoding.
//!
//! Given one score lattice per trained order, the decoder searches for the
//! unigram tag sequence maximizing the sum over orders and positions of the
//! looked-up n-gram log-scores (the log-space form of the per-position score
//! product). N-grams absent from a label vocabulary receive a finite floor
//! score, so every sequence stays scorable and decoding never dead-ends.
//!
//! The dynamic program keys its chart on the (n−1)-gram of most recent tags,
//! where n is the largest order present. Pruning keeps the top-k unigram
//! tags per position according to the order-1 lattice and enumerates only
//! the Cartesian product of those shortlists, shrinking the per-position
//! candidate space from |Y|ⁿ to kⁿ.
//!
//! Ties are broken everywhere toward the lexicographically smallest sequence
//! of unigram label ids; [`MultiOrderDecoder::brute_force_decode`] implements
//! the same objective by exhaustive enumeration and serves as the exactness
//! oracle for the dynamic program.

use std::collections::HashMap;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::labelspace::{LabelVocab, COMPONENT_SEPARATOR, START_TAG};
use crate::tagger::{encode_sentence, make_lattice_from_encoded, ModelBundle, ScoreLattice};

/// Log-score substituted for n-grams never seen in training. Finite so a
/// path over unseen transitions remains valid, while being far below any
/// reachable log-probability.
pub const FLOOR_LOG_SCORE: f64 = -1e4;

/// Enumeration guard for the exhaustive oracle.
const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Dense per-order lookup tables above this size fall back to a hash map.
const DENSE_LOOKUP_LIMIT: u64 = 1 << 22;

/// Top-k pruning setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneConfig {
    Off,
    /// Keep this many top unigram tags per position (must be ≥ 1).
    Width(usize),
}

impl PruneConfig {
    pub fn label(&self) -> String {
        match self {
            PruneConfig::Off => "off".to_string(),
            PruneConfig::Width(w) => format!("width-{w}"),
        }
    }
}

enum Lookup {
    Dense(Vec<i32>),
    Sparse(HashMap<u64, u32>),
}

impl Lookup {
    #[inline]
    fn get(&self, key: u64) -> Option<u32> {
        match self {
            Lookup::Dense(table) => {
                let v = table[key as usize];
                (v >= 0).then_some(v as u32)
            }
            Lookup::Sparse(map) => map.get(&key).copied(),
        }
    }
}

/// One populated chart cell, rendered with tag strings for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartCell {
    pub t: usize,
    pub state: Vec<String>,
    pub score: f64,
    pub backpointer: Option<Vec<String>>,
}

/// The dynamic-programming chart: best score and backpointer per
/// (position, state), plus the number of candidate n-grams enumerated at
/// every position.
#[derive(Debug, Clone, PartialEq)]
pub struct DPChart {
    pub cells: Vec<ChartCell>,
    pub candidate_counts: Vec<usize>,
}

impl DPChart {
    /// One line per (t, state, score, backpointer).
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for cell in &self.cells {
            let state = cell.state.join("|");
            let back = cell
                .backpointer
                .as_ref()
                .map(|b| b.join("|"))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!(
                "t={} state={} score={:.6} back={}\n",
                cell.t, state, cell.score, back
            ));
        }
        out
    }
}

#[derive(Clone, Copy)]
struct Cell {
    score: f64,
    prev: u32,
}

const NO_PREV: u32 = u32::MAX;

/// Joint decoder over the label vocabularies of one bundle.
///
/// Unigram tags get dense ids in vocabulary order; the id past the last tag
/// stands for START. Each order's labels are indexed by the radix encoding
/// of their component ids, so n-gram lookups inside the dynamic program are
/// array probes.
pub struct MultiOrderDecoder {
    uni: Vec<String>,
    uni_ids: HashMap<String, u32>,
    orders: Vec<usize>,
    widths: Vec<usize>,
    lookups: Vec<Lookup>,
    base: u64,
}

impl MultiOrderDecoder {
    /// Builds a decoder from an explicit unigram universe and one label
    /// vocabulary per order (orders strictly increasing).
    pub fn new(uni: Vec<String>, vocabs: &[&LabelVocab]) -> Result<Self> {
        if uni.is_empty() {
            return Err(Error::Config("unigram tag set is empty".into()));
        }
        if vocabs.is_empty() {
            return Err(Error::Config("at least one label vocabulary is required".into()));
        }
        let mut uni_ids = HashMap::new();
        for (id, tag) in uni.iter().enumerate() {
            if tag.is_empty() || tag == START_TAG || tag.contains(COMPONENT_SEPARATOR) {
                return Err(Error::Config(format!("invalid unigram tag '{tag}'")));
            }
            if uni_ids.insert(tag.clone(), id as u32).is_some() {
                return Err(Error::Config(format!("duplicate unigram tag '{tag}'")));
            }
        }
        let orders: Vec<usize> = vocabs.iter().map(|v| v.order()).collect();
        for pair in orders.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Config("lattice orders must be strictly increasing".into()));
            }
        }
        let max_order = *orders.last().unwrap();
        let base = uni.len() as u64 + 1; // one extra symbol for START
        if (base as u128).pow(max_order as u32) > u64::MAX as u128 {
            return Err(Error::Config(format!(
                "label space too large to index: {} tags at order {max_order}",
                uni.len()
            )));
        }
        let start_id = uni.len() as u32;

        let mut lookups = Vec::with_capacity(vocabs.len());
        for vocab in vocabs {
            let order = vocab.order();
            let size = (base as u128).pow(order as u32);
            let mut entries: Vec<(u64, u32)> = Vec::with_capacity(vocab.len());
            'labels: for (id, label) in vocab.labels().iter().enumerate() {
                let mut key = 0u64;
                for comp in label.split(COMPONENT_SEPARATOR) {
                    let comp_id = if comp == START_TAG {
                        start_id
                    } else {
                        match uni_ids.get(comp) {
                            Some(&c) => c,
                            // component outside the unigram universe: the
                            // label can never be reached from these tags
                            None => continue 'labels,
                        }
                    };
                    key = key * base + comp_id as u64;
                }
                entries.push((key, id as u32));
            }
            let lookup = if size <= DENSE_LOOKUP_LIMIT as u128 {
                let mut table = vec![-1i32; size as usize];
                for (key, id) in entries {
                    table[key as usize] = id as i32;
                }
                Lookup::Dense(table)
            } else {
                Lookup::Sparse(entries.into_iter().collect())
            };
            lookups.push(lookup);
        }

        Ok(MultiOrderDecoder {
            uni,
            uni_ids,
            orders,
            widths: vocabs.iter().map(|v| v.len()).collect(),
            lookups,
            base,
        })
    }

    /// Builds the decoder for a bundle. The unigram universe comes from the
    /// order-1 model when present, otherwise from the distinct components of
    /// the higher-order vocabularies in first-occurrence order.
    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        let uni = match bundle.model(1) {
            Some(m) => m.labels.labels().to_vec(),
            None => {
                let mut uni = Vec::new();
                for model in &bundle.models {
                    for label in model.labels.labels() {
                        for comp in label.split(COMPONENT_SEPARATOR) {
                            if comp != START_TAG && !uni.iter().any(|u| u == comp) {
                                uni.push(comp.to_string());
                            }
                        }
                    }
                }
                uni
            }
        };
        let vocabs: Vec<&LabelVocab> = bundle.models.iter().map(|m| &m.labels).collect();
        MultiOrderDecoder::new(uni, &vocabs)
    }

    pub fn unigram_tags(&self) -> &[String] {
        &self.uni
    }

    pub fn unigram_count(&self) -> usize {
        self.uni.len()
    }

    pub fn max_order(&self) -> usize {
        *self.orders.last().unwrap()
    }

    fn start_id(&self) -> u32 {
        self.uni.len() as u32
    }

    fn check_lattices(&self, lattices: &[&ScoreLattice]) -> Result<usize> {
        if lattices.len() != self.orders.len() {
            return Err(Error::Internal(format!(
                "expected {} lattices, got {}",
                self.orders.len(),
                lattices.len()
            )));
        }
        let t_len = lattices[0].t_len();
        for (i, lat) in lattices.iter().enumerate() {
            if lat.order() != self.orders[i] {
                return Err(Error::Internal(format!(
                    "lattice {i} has order {}, expected {}",
                    lat.order(),
                    self.orders[i]
                )));
            }
            if t_len > 0 && lat.width() != self.widths[i] {
                return Err(Error::Internal(format!(
                    "order-{} lattice has width {}, expected {}",
                    lat.order(),
                    lat.width(),
                    self.widths[i]
                )));
            }
            if lat.t_len() != t_len {
                return Err(Error::Data(format!(
                    "mismatched lattice lengths: {} vs {t_len}",
                    lat.t_len()
                )));
            }
        }
        Ok(t_len)
    }

    /// Log-score contributed at position `t` when the tags at positions
    /// `t-n+1..=t` are `ngram` (ids, with START at negative positions).
    /// Sums one lookup per order, ascending, floor for unseen labels.
    #[inline]
    fn position_score(&self, lattices: &[&ScoreLattice], t: usize, ngram: &[u32]) -> f64 {
        let n = ngram.len();
        let mut w = 0.0;
        for (i, &order) in self.orders.iter().enumerate() {
            let mut key = 0u64;
            for &comp in &ngram[n - order..] {
                key = key * self.base + comp as u64;
            }
            w += match self.lookups[i].get(key) {
                Some(col) => lattices[i].row(t)[col as usize],
                None => FLOOR_LOG_SCORE,
            };
        }
        w
    }

    /// Candidate unigram tag ids per position. Unpruned this is the whole
    /// tag set; pruned it is the width best tags by the order-1 lattice,
    /// lowest id first on ties, returned in ascending id order.
    fn candidates(&self, lattices: &[&ScoreLattice], prune: PruneConfig, t_len: usize) -> Result<Vec<Vec<u32>>> {
        let all: Vec<u32> = (0..self.unigram_count() as u32).collect();
        match prune {
            PruneConfig::Off => Ok(vec![all; t_len]),
            PruneConfig::Width(width) => {
                if width < 1 {
                    return Err(Error::Config("prune width must be at least 1".into()));
                }
                let slot = self
                    .orders
                    .iter()
                    .position(|&o| o == 1)
                    .ok_or_else(|| Error::Config("pruning requires an order-1 lattice".into()))?;
                let keep = width.min(self.unigram_count());
                let mut result = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let mut ranked: Vec<u32> = all.clone();
                    let score_of = |id: u32| match self.lookups[slot].get(id as u64) {
                        Some(col) => lattices[slot].row(t)[col as usize],
                        None => FLOOR_LOG_SCORE,
                    };
                    ranked.sort_by(|&a, &b| {
                        score_of(b).total_cmp(&score_of(a)).then(a.cmp(&b))
                    });
                    let mut kept: Vec<u32> = ranked[..keep].to_vec();
                    kept.sort_unstable();
                    result.push(kept);
                }
                Ok(result)
            }
        }
    }

    /// Finds the argmax unigram tag sequence under the summed lattices.
    pub fn decode(&self, lattices: &[&ScoreLattice], prune: PruneConfig) -> Result<Vec<String>> {
        Ok(self.run(lattices, prune, false)?.0)
    }

    /// Like [`decode`](Self::decode) but also returns the populated chart.
    pub fn decode_with_chart(&self, lattices: &[&ScoreLattice], prune: PruneConfig) -> Result<(Vec<String>, DPChart)> {
        let (tags, chart) = self.run(lattices, prune, true)?;
        Ok((tags, chart.expect("chart was requested")))
    }

    fn run(
        &self,
        lattices: &[&ScoreLattice],
        prune: PruneConfig,
        want_chart: bool,
    ) -> Result<(Vec<String>, Option<DPChart>)> {
        let t_len = self.check_lattices(lattices)?;
        if t_len == 0 {
            let chart = want_chart.then(|| DPChart { cells: vec![], candidate_counts: vec![] });
            return Ok((Vec::new(), chart));
        }
        let cand = self.candidates(lattices, prune, t_len)?;
        let n = self.max_order();
        let ids = if n == 1 {
            self.decode_first_order(lattices, &cand)
        } else {
            self.decode_chart(lattices, &cand, n, want_chart)?
        };
        match ids {
            FirstOrOrder::First(ids) => {
                let chart = want_chart.then(|| DPChart {
                    cells: ids
                        .iter()
                        .enumerate()
                        .map(|(t, &id)| ChartCell {
                            t,
                            state: vec![self.uni[id as usize].clone()],
                            score: 0.0,
                            backpointer: None,
                        })
                        .collect(),
                    candidate_counts: cand.iter().map(Vec::len).collect(),
                });
                Ok((self.ids_to_tags(&ids), chart))
            }
            FirstOrOrder::Chart(ids, chart) => Ok((self.ids_to_tags(&ids), chart)),
        }
    }

    fn ids_to_tags(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&id| self.uni[id as usize].clone()).collect()
    }

    /// With a single order-1 lattice the joint argmax factorizes into
    /// per-position argmaxes.
    fn decode_first_order(&self, lattices: &[&ScoreLattice], cand: &[Vec<u32>]) -> FirstOrOrder {
        let mut out = Vec::with_capacity(cand.len());
        for (t, options) in cand.iter().enumerate() {
            let mut best = options[0];
            let mut best_score = self.position_score(lattices, t, &[best]);
            for &id in &options[1..] {
                let score = self.position_score(lattices, t, &[id]);
                if score > best_score {
                    best = id;
                    best_score = score;
                }
            }
            out.push(best);
        }
        FirstOrOrder::First(out)
    }

    fn decode_chart(
        &self,
        lattices: &[&ScoreLattice],
        cand: &[Vec<u32>],
        n: usize,
        want_chart: bool,
    ) -> Result<FirstOrOrder> {
        let t_len = cand.len();
        let state_len = n - 1;
        let base = self.base;
        let num_states = (base as u128).pow(state_len as u32);
        if num_states > (1u128 << 26) {
            return Err(Error::Config(format!(
                "chart too large: {num_states} states at order {n}"
            )));
        }
        let num_states = num_states as usize;
        let start = self.start_id();

        let mut chart: Vec<Vec<Cell>> =
            vec![vec![Cell { score: f64::NEG_INFINITY, prev: NO_PREV }; num_states]; t_len];
        let mut candidate_counts = vec![0usize; t_len];

        // reconstructs tag ids 0..=t for the path ending in `state` at `t`
        let reconstruct = |chart: &[Vec<Cell>], t: usize, state: usize| -> Vec<u32> {
            let mut tags = vec![0u32; t + 1];
            let mut s = state;
            for tt in (0..=t).rev() {
                tags[tt] = (s as u64 % base) as u32;
                if tt > 0 {
                    s = chart[tt][s].prev as usize;
                }
            }
            tags
        };

        let start_slot = [start];
        for t in 0..t_len {
            // slot j holds the candidates for sentence position t-n+1+j
            let slots: Vec<&[u32]> = (0..n)
                .map(|j| {
                    let pos = t as i64 - (n - 1 - j) as i64;
                    if pos < 0 {
                        &start_slot[..]
                    } else {
                        cand[pos as usize].as_slice()
                    }
                })
                .collect();

            let mut ngram = vec![0u32; n];
            let mut odometer = vec![0usize; n];
            'combos: loop {
                for (j, &slot_idx) in odometer.iter().enumerate() {
                    ngram[j] = slots[j][slot_idx];
                }
                candidate_counts[t] += 1;

                let mut prev_idx = 0u64;
                for &c in &ngram[..state_len] {
                    prev_idx = prev_idx * base + c as u64;
                }
                let mut cur_idx = 0u64;
                for &c in &ngram[1..] {
                    cur_idx = cur_idx * base + c as u64;
                }

                let prev_score = if t == 0 {
                    0.0
                } else {
                    chart[t - 1][prev_idx as usize].score
                };
                if prev_score > f64::NEG_INFINITY {
                    let total = prev_score + self.position_score(lattices, t, &ngram);
                    let cell = chart[t][cur_idx as usize];
                    let replace = if total > cell.score {
                        true
                    } else if total == cell.score && t > 0 && cell.prev != prev_idx as u32 {
                        // exact tie between two prefixes reaching this state:
                        // keep the lexicographically smaller history
                        let challenger = reconstruct(&chart, t - 1, prev_idx as usize);
                        let incumbent = reconstruct(&chart, t - 1, cell.prev as usize);
                        challenger < incumbent
                    } else {
                        false
                    };
                    if replace {
                        chart[t][cur_idx as usize] = Cell {
                            score: total,
                            prev: if t == 0 { NO_PREV } else { prev_idx as u32 },
                        };
                    }
                }

                // advance the odometer (last slot fastest)
                for j in (0..n).rev() {
                    odometer[j] += 1;
                    if odometer[j] < slots[j].len() {
                        continue 'combos;
                    }
                    odometer[j] = 0;
                    if j == 0 {
                        break 'combos;
                    }
                }
            }
        }

        let last = t_len - 1;
        let best_score = chart[last]
            .iter()
            .map(|c| c.score)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_score == f64::NEG_INFINITY {
            return Err(Error::Internal("no reachable final state".into()));
        }
        let mut best_path: Option<Vec<u32>> = None;
        for (state, cell) in chart[last].iter().enumerate() {
            if cell.score == best_score {
                let path = reconstruct(&chart, last, state);
                if best_path.as_ref().map(|b| path < *b).unwrap_or(true) {
                    best_path = Some(path);
                }
            }
        }
        let path = best_path.unwrap();

        let dp_chart = want_chart.then(|| {
            let render_state = |mut s: usize, t: usize| -> Vec<String> {
                let mut comps = vec![String::new(); state_len];
                for j in (0..state_len).rev() {
                    let c = (s as u64 % base) as u32;
                    comps[j] = if c == start {
                        START_TAG.to_string()
                    } else {
                        self.uni[c as usize].clone()
                    };
                    s /= base as usize;
                }
                let _ = t;
                comps
            };
            let mut cells = Vec::new();
            for (t, row) in chart.iter().enumerate() {
                for (state, cell) in row.iter().enumerate() {
                    if cell.score > f64::NEG_INFINITY {
                        cells.push(ChartCell {
                            t,
                            state: render_state(state, t),
                            score: cell.score,
                            backpointer: (cell.prev != NO_PREV)
                                .then(|| render_state(cell.prev as usize, t.saturating_sub(1))),
                        });
                    }
                }
            }
            DPChart { cells, candidate_counts: candidate_counts.clone() }
        });

        Ok(FirstOrOrder::Chart(path, dp_chart))
    }

    /// Total log-score of a full unigram tag sequence under the lattices,
    /// accumulated position by position exactly like the dynamic program.
    pub fn score_sequence(&self, lattices: &[&ScoreLattice], tags: &[String]) -> Result<f64> {
        let t_len = self.check_lattices(lattices)?;
        if tags.len() != t_len {
            return Err(Error::Data(format!(
                "sequence length {} does not match lattice length {t_len}",
                tags.len()
            )));
        }
        let ids: Vec<u32> = tags
            .iter()
            .map(|tag| {
                self.uni_ids
                    .get(tag)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("unknown unigram tag '{tag}'")))
            })
            .collect::<Result<_>>()?;
        Ok(self.score_ids(lattices, &ids))
    }

    fn score_ids(&self, lattices: &[&ScoreLattice], ids: &[u32]) -> f64 {
        let n = self.max_order();
        let start = self.start_id();
        let mut ngram = vec![0u32; n];
        let mut acc = 0.0;
        for t in 0..ids.len() {
            for j in 0..n {
                let pos = t as i64 - (n - 1 - j) as i64;
                ngram[j] = if pos < 0 { start } else { ids[pos as usize] };
            }
            acc += self.position_score(lattices, t, &ngram);
        }
        acc
    }

    /// Exhaustively scores every unigram sequence and returns the maximum,
    /// lexicographically smallest by label ids on ties. Guarded to
    /// |Y|^T ≤ 10⁶.
    pub fn brute_force_decode(&self, lattices: &[&ScoreLattice]) -> Result<Vec<String>> {
        let t_len = self.check_lattices(lattices)?;
        if t_len == 0 {
            return Ok(Vec::new());
        }
        let u = self.unigram_count() as u128;
        if u.pow(t_len as u32) > BRUTE_FORCE_LIMIT {
            return Err(Error::Config(format!(
                "enumeration guard exceeded: {u}^{t_len} sequences"
            )));
        }
        let mut ids = vec![0u32; t_len];
        let mut best_ids = ids.clone();
        let mut best_score = self.score_ids(lattices, &ids);
        loop {
            // advance odometer in lexicographic order
            let mut done = true;
            for j in (0..t_len).rev() {
                ids[j] += 1;
                if (ids[j] as usize) < self.unigram_count() {
                    done = false;
                    break;
                }
                ids[j] = 0;
            }
            if done {
                break;
            }
            let score = self.score_ids(lattices, &ids);
            if score > best_score {
                best_score = score;
                best_ids = ids.clone();
            }
        }
        Ok(self.ids_to_tags(&best_ids))
    }
}

enum FirstOrOrder {
    First(Vec<u32>),
    Chart(Vec<u32>, Option<DPChart>),
}

/// Builds the per-order lattices for one sentence (sharing one feature
/// extraction across the models) and decodes it.
pub fn decode_sentence(
    bundle: &ModelBundle,
    decoder: &MultiOrderDecoder,
    sentence: &Sentence,
    prune: PruneConfig,
) -> Result<Vec<String>> {
    let input = encode_sentence(&bundle.vocab, sentence)?;
    let lattices: Vec<ScoreLattice> = bundle
        .models
        .iter()
        .map(|m| make_lattice_from_encoded(m, &input))
        .collect::<Result<_>>()?;
    let refs: Vec<&ScoreLattice> = lattices.iter().collect();
    decoder.decode(&refs, prune)
}

/// Decodes a whole corpus, splitting the sentences across up to `threads`
/// worker threads. Output order and content are independent of the thread
/// count.
pub fn decode_corpus(
    bundle: &ModelBundle,
    sentences: &[Sentence],
    prune: PruneConfig,
    threads: usize,
) -> Result<Vec<Vec<String>>> {
    let decoder = MultiOrderDecoder::from_bundle(bundle)?;
    let threads = threads.max(1).min(sentences.len().max(1));
    if threads == 1 {
        return sentences
            .iter()
            .map(|s| decode_sentence(bundle, &decoder, s, prune))
            .collect();
    }
    let chunk_size = sentences.len().div_ceil(threads);
    let chunks: Vec<&[Sentence]> = sentences.chunks(chunk_size).collect();
    let results: Vec<Result<Vec<Vec<String>>>> = std::thread::scope(|scope| {
        let decoder = &decoder;
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|s| decode_sentence(bundle, decoder, s, prune))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decode worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(sentences.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
