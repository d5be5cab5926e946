//! Minimal neural core for the taggers.
//!
//! A token's input vector is its embedding concatenated with the sum of its
//! sparse-feature embeddings. A single bidirectional LSTM layer encodes the
//! sentence; a linear projection plus softmax scores the label set at every
//! position. Everything is `f64` and hand-written, including full
//! backpropagation through time, so gradients can be checked against central
//! finite differences tightly.

pub mod adam;
pub mod linalg;

pub use adam::{adam_step, AdamState};

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use linalg::{add_scaled, Matrix};

const INIT_BOUND: f64 = 0.08;

/// Gate weights for one LSTM direction. Rows stack the four gates in the
/// order input, forget, output, candidate; `w` maps the input vector, `u` the
/// previous hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl LstmParams {
    fn zeros(d_in: usize, d_hidden: usize) -> Self {
        LstmParams {
            w: Matrix::zeros(4 * d_hidden, d_in),
            u: Matrix::zeros(4 * d_hidden, d_hidden),
            b: vec![0.0; 4 * d_hidden],
        }
    }

    fn init<R: Rng>(d_in: usize, d_hidden: usize, rng: &mut R) -> Self {
        let mut b = vec![0.0; 4 * d_hidden];
        // Forget-gate bias starts at 1 so early training does not wipe the cell.
        for v in &mut b[d_hidden..2 * d_hidden] {
            *v = 1.0;
        }
        LstmParams {
            w: Matrix::uniform(4 * d_hidden, d_in, INIT_BOUND, rng),
            u: Matrix::uniform(4 * d_hidden, d_hidden, INIT_BOUND, rng),
            b,
        }
    }
}

/// All parameters of one single-order tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerParams {
    pub token_emb: Matrix,
    pub feat_emb: Matrix,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

/// Gradients take the same shape as the parameters they belong to.
pub type Gradients = TaggerParams;

pub const TENSOR_COUNT: usize = 10;

pub const TENSOR_NAMES: [&str; TENSOR_COUNT] = [
    "token_emb", "feat_emb", "fwd.w", "fwd.u", "fwd.b", "bwd.w", "bwd.u", "bwd.b", "w_out", "b_out",
];

impl TaggerParams {
    /// Random initialization: weights uniform in ±0.08, biases zero except
    /// the forget gates at 1.
    pub fn init<R: Rng>(
        vocab_size: usize,
        feature_count: usize,
        d_emb: usize,
        d_hidden: usize,
        label_count: usize,
        rng: &mut R,
    ) -> Self {
        let d_in = 2 * d_emb;
        TaggerParams {
            token_emb: Matrix::uniform(vocab_size, d_emb, INIT_BOUND, rng),
            feat_emb: Matrix::uniform(feature_count, d_emb, INIT_BOUND, rng),
            fwd: LstmParams::init(d_in, d_hidden, rng),
            bwd: LstmParams::init(d_in, d_hidden, rng),
            w_out: Matrix::uniform(label_count, 2 * d_hidden, INIT_BOUND, rng),
            b_out: vec![0.0; label_count],
        }
    }

    pub fn zeros_like(other: &TaggerParams) -> Self {
        TaggerParams {
            token_emb: Matrix::zeros(other.token_emb.rows(), other.token_emb.cols()),
            feat_emb: Matrix::zeros(other.feat_emb.rows(), other.feat_emb.cols()),
            fwd: LstmParams::zeros(other.fwd.w.cols(), other.d_hidden()),
            bwd: LstmParams::zeros(other.bwd.w.cols(), other.d_hidden()),
            w_out: Matrix::zeros(other.w_out.rows(), other.w_out.cols()),
            b_out: vec![0.0; other.b_out.len()],
        }
    }

    pub fn d_emb(&self) -> usize {
        self.token_emb.cols()
    }

    pub fn d_hidden(&self) -> usize {
        self.fwd.u.cols()
    }

    pub fn label_count(&self) -> usize {
        self.w_out.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_emb.rows()
    }

    pub fn feature_count(&self) -> usize {
        self.feat_emb.rows()
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        match i {
            0 => self.token_emb.data(),
            1 => self.feat_emb.data(),
            2 => self.fwd.w.data(),
            3 => self.fwd.u.data(),
            4 => &self.fwd.b,
            5 => self.bwd.w.data(),
            6 => self.bwd.u.data(),
            7 => &self.bwd.b,
            8 => self.w_out.data(),
            9 => &self.b_out,
            _ => panic!("tensor index {i} out of range"),
        }
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        match i {
            0 => self.token_emb.data_mut(),
            1 => self.feat_emb.data_mut(),
            2 => self.fwd.w.data_mut(),
            3 => self.fwd.u.data_mut(),
            4 => &mut self.fwd.b,
            5 => self.bwd.w.data_mut(),
            6 => self.bwd.u.data_mut(),
            7 => &mut self.bwd.b,
            8 => self.w_out.data_mut(),
            9 => &mut self.b_out,
            _ => panic!("tensor index {i} out of range"),
        }
    }
}

/// Vocabulary-resolved view of a sentence: one token id and one sorted list
/// of feature ids per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub token_ids: Vec<u32>,
    pub feature_ids: Vec<Vec<u32>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Dropout setting for a forward pass. Training passes a rate and the rng
/// that samples the masks; evaluation runs with `Off`.
pub enum Dropout<'a> {
    Off,
    On { rate: f64, rng: &'a mut ChaCha20Rng },
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Max-shifted log-softmax; exact for extreme logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|&v| v.exp()).collect()
}

struct DirPass {
    gates: Vec<Vec<f64>>, // post-activation [i|f|o|g], 4h per step
    c: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn run_direction(p: &LstmParams, xs: &[&[f64]], d_hidden: usize) -> DirPass {
    let steps = xs.len();
    let mut pass = DirPass {
        gates: Vec::with_capacity(steps),
        c: Vec::with_capacity(steps),
        tanh_c: Vec::with_capacity(steps),
        h: Vec::with_capacity(steps),
    };
    let zero = vec![0.0; d_hidden];
    for (s, x) in xs.iter().enumerate() {
        let h_prev = if s == 0 { &zero } else { &pass.h[s - 1] };
        let c_prev = if s == 0 { &zero } else { &pass.c[s - 1] };
        let mut a = p.b.clone();
        p.w.matvec_add(x, &mut a);
        p.u.matvec_add(h_prev, &mut a);
        let mut gates = vec![0.0; 4 * d_hidden];
        let mut c = vec![0.0; d_hidden];
        let mut tanh_c = vec![0.0; d_hidden];
        let mut h = vec![0.0; d_hidden];
        for j in 0..d_hidden {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[d_hidden + j]);
            let o = sigmoid(a[2 * d_hidden + j]);
            let g = a[3 * d_hidden + j].tanh();
            gates[j] = i;
            gates[d_hidden + j] = f;
            gates[2 * d_hidden + j] = o;
            gates[3 * d_hidden + j] = g;
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        pass.gates.push(gates);
        pass.c.push(c);
        pass.tanh_c.push(tanh_c);
        pass.h.push(h);
    }
    pass
}

/// BPTT for one direction. `dh` holds the loss gradient flowing into each
/// step's hidden state (processing order). Returns the gradient w.r.t. each
/// input vector and accumulates the weight gradients.
fn backward_direction(
    p: &LstmParams,
    grads: &mut LstmParams,
    xs: &[&[f64]],
    pass: &DirPass,
    dh: &[Vec<f64>],
    d_hidden: usize,
) -> Vec<Vec<f64>> {
    let steps = xs.len();
    let zero = vec![0.0; d_hidden];
    let mut dxs = vec![vec![0.0; xs[0].len()]; steps];
    let mut dh_next = vec![0.0; d_hidden];
    let mut dc_next = vec![0.0; d_hidden];
    for s in (0..steps).rev() {
        let h_prev = if s == 0 { &zero } else { &pass.h[s - 1] };
        let c_prev = if s == 0 { &zero } else { &pass.c[s - 1] };
        let gates = &pass.gates[s];
        let mut da = vec![0.0; 4 * d_hidden];
        let mut dc_prev = vec![0.0; d_hidden];
        for j in 0..d_hidden {
            let i = gates[j];
            let f = gates[d_hidden + j];
            let o = gates[2 * d_hidden + j];
            let g = gates[3 * d_hidden + j];
            let tanh_c = pass.tanh_c[s][j];
            let dh_total = dh[s][j] + dh_next[j];
            let dc = dc_next[j] + dh_total * o * (1.0 - tanh_c * tanh_c);
            let d_o = dh_total * tanh_c;
            da[2 * d_hidden + j] = d_o * o * (1.0 - o);
            da[j] = dc * g * i * (1.0 - i);
            da[3 * d_hidden + j] = dc * i * (1.0 - g * g);
            da[d_hidden + j] = dc * c_prev[j] * f * (1.0 - f);
            dc_prev[j] = dc * f;
        }
        grads.w.add_outer(&da, xs[s]);
        grads.u.add_outer(&da, h_prev);
        add_scaled(&mut grads.b, &da, 1.0);
        p.w.tmatvec_add(&da, &mut dxs[s]);
        dh_next = vec![0.0; d_hidden];
        p.u.tmatvec_add(&da, &mut dh_next);
        dc_next = dc_prev;
    }
    dxs
}

struct Forward {
    xs: Vec<Vec<f64>>,        // T × 2·d_emb
    fwd: DirPass,             // step s ↔ position s
    bwd: DirPass,             // step s ↔ position T−1−s
    states: Vec<Vec<f64>>,    // T × 2·d_hidden, after dropout
    mask: Option<Vec<Vec<f64>>>,
}

fn check_input(params: &TaggerParams, input: &EncodedSentence) -> Result<()> {
    if input.is_empty() {
        return Err(Error::Internal("cannot encode an empty sentence".into()));
    }
    if input.token_ids.len() != input.feature_ids.len() {
        return Err(Error::Internal("token/feature length mismatch".into()));
    }
    for &id in &input.token_ids {
        if id as usize >= params.vocab_size() {
            return Err(Error::Internal(format!(
                "token id {id} out of range (vocab size {})",
                params.vocab_size()
            )));
        }
    }
    for ids in &input.feature_ids {
        for &id in ids {
            if id as usize >= params.feature_count() {
                return Err(Error::Internal(format!(
                    "feature id {id} out of range (feature count {})",
                    params.feature_count()
                )));
            }
        }
    }
    Ok(())
}

fn forward(params: &TaggerParams, input: &EncodedSentence, dropout: Dropout) -> Result<Forward> {
    check_input(params, input)?;
    let t_len = input.len();
    let d_emb = params.d_emb();
    let d_hidden = params.d_hidden();

    let mut xs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut x = vec![0.0; 2 * d_emb];
        x[..d_emb].copy_from_slice(params.token_emb.row(input.token_ids[t] as usize));
        for &fid in &input.feature_ids[t] {
            add_scaled(&mut x[d_emb..], params.feat_emb.row(fid as usize), 1.0);
        }
        xs.push(x);
    }

    let fwd_xs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let bwd_xs: Vec<&[f64]> = xs.iter().rev().map(|x| x.as_slice()).collect();
    let fwd = run_direction(&params.fwd, &fwd_xs, d_hidden);
    let bwd = run_direction(&params.bwd, &bwd_xs, d_hidden);

    let mask = match dropout {
        Dropout::Off => None,
        Dropout::On { rate, rng } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
            }
            let keep = 1.0 - rate;
            Some(
                (0..t_len)
                    .map(|_| {
                        (0..2 * d_hidden)
                            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
                            .collect()
                    })
                    .collect::<Vec<Vec<f64>>>(),
            )
        }
    };

    let mut states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut s = Vec::with_capacity(2 * d_hidden);
        s.extend_from_slice(&fwd.h[t]);
        s.extend_from_slice(&bwd.h[t_len - 1 - t]);
        if let Some(mask) = &mask {
            for (v, &m) in s.iter_mut().zip(&mask[t]) {
                *v *= m;
            }
        }
        states.push(s);
    }

    Ok(Forward { xs, fwd, bwd, states, mask })
}

/// Runs the bidirectional encoder and returns one state per position:
/// the forward hidden state at `t` concatenated with the backward hidden
/// state at `t`, with inverted dropout applied when enabled.
pub fn encode(params: &TaggerParams, input: &EncodedSentence, dropout: Dropout) -> Result<Vec<Vec<f64>>> {
    Ok(forward(params, input, dropout)?.states)
}

fn logits_at(params: &TaggerParams, state: &[f64]) -> Vec<f64> {
    let mut logits = params.b_out.clone();
    params.w_out.matvec_add(state, &mut logits);
    logits
}

/// Probability distribution over labels for one encoder state. Entries are
/// strictly positive and sum to 1 within 1e-9.
pub fn score_distribution(params: &TaggerParams, state: &[f64]) -> Vec<f64> {
    softmax(&logits_at(params, state))
}

/// Log-probabilities for one encoder state (stable max-shifted form).
pub fn log_score_distribution(params: &TaggerParams, state: &[f64]) -> Vec<f64> {
    log_softmax(&logits_at(params, state))
}

/// Mean per-position negative log-likelihood of the gold labels, plus the
/// full gradient set via backpropagation through time.
pub fn loss_and_gradients(
    params: &TaggerParams,
    input: &EncodedSentence,
    gold: &[u32],
    dropout: Dropout,
) -> Result<(f64, Gradients)> {
    if gold.len() != input.len() {
        return Err(Error::Internal(format!(
            "gold label count {} does not match sentence length {}",
            gold.len(),
            input.len()
        )));
    }
    let label_count = params.label_count();
    for &g in gold {
        if g as usize >= label_count {
            return Err(Error::Internal(format!(
                "gold label id {g} out of range (label count {label_count})"
            )));
        }
    }

    let fw = forward(params, input, dropout)?;
    let t_len = input.len();
    let d_hidden = params.d_hidden();
    let inv_t = 1.0 / t_len as f64;

    let mut grads = Gradients::zeros_like(params);
    let mut loss = 0.0;
    let mut dstates: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let logits = logits_at(params, &fw.states[t]);
        let logp = log_softmax(&logits);
        loss += -logp[gold[t] as usize] * inv_t;
        let mut dlogits: Vec<f64> = logp.iter().map(|&lp| lp.exp() * inv_t).collect();
        dlogits[gold[t] as usize] -= inv_t;
        grads.w_out.add_outer(&dlogits, &fw.states[t]);
        add_scaled(&mut grads.b_out, &dlogits, 1.0);
        let mut ds = vec![0.0; 2 * d_hidden];
        params.w_out.tmatvec_add(&dlogits, &mut ds);
        if let Some(mask) = &fw.mask {
            for (v, &m) in ds.iter_mut().zip(&mask[t]) {
                *v *= m;
            }
        }
        dstates.push(ds);
    }

    let dh_fwd: Vec<Vec<f64>> = dstates.iter().map(|d| d[..d_hidden].to_vec()).collect();
    let dh_bwd: Vec<Vec<f64>> = dstates.iter().rev().map(|d| d[d_hidden..].to_vec()).collect();

    let fwd_xs: Vec<&[f64]> = fw.xs.iter().map(|x| x.as_slice()).collect();
    let bwd_xs: Vec<&[f64]> = fw.xs.iter().rev().map(|x| x.as_slice()).collect();
    let dx_fwd = backward_direction(&params.fwd, &mut grads.fwd, &fwd_xs, &fw.fwd, &dh_fwd, d_hidden);
    let dx_bwd = backward_direction(&params.bwd, &mut grads.bwd, &bwd_xs, &fw.bwd, &dh_bwd, d_hidden);

    let d_emb = params.d_emb();
    for t in 0..t_len {
        let mut dx = dx_fwd[t].clone();
        add_scaled(&mut dx, &dx_bwd[t_len - 1 - t], 1.0);
        add_scaled(
            grads.token_emb.row_mut(input.token_ids[t] as usize),
            &dx[..d_emb],
            1.0,
        );
        for &fid in &input.feature_ids[t] {
            add_scaled(grads.feat_emb.row_mut(fid as usize), &dx[d_emb..], 1.0);
        }
    }

    Ok((loss, grads))
}
