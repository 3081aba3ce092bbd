//! LSTM pointer network: encoder, glimpse + pointer decoder, and backprop.
//!
//! Encoder: each normalised embedding row `f_j` is projected to
//! `x_j = W_e f_j + b_e` and fed through an LSTM; the hidden states form the
//! context matrix `C`. Decoder step `t` runs an LSTM on `x_{pi(t-1)}` (or the
//! trainable `dec0` at `t = 0`) starting from the encoder's final state, then
//!
//! ```text
//! glimpse:  a_i = v_g . tanh(Wg_ref C_i + Wg_q h + b_g),   g = sum_i softmax(a)_i C_i
//! pointer:  u_i = v_p . tanh(Wp_ref C_i + Wp_q g + b_p),   p = softmax(u)
//! ```
//!
//! with already-selected nodes masked to probability zero in both softmaxes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::lstm::{lstm_backward, lstm_forward, LstmStep};
use super::params::{AttentionParams, PolicyParams};
use super::tensor::{axpy, dot, Tensor};
use crate::embed::GraphEmbedding;
use crate::error::PolicyError;

/// Scales an integer embedding to the encoder's input features.
///
/// Levels (own and parent) are divided by the graph's deepest level, ids by
/// the largest node id and memory by the graph's total memory. The `-1` id
/// sentinel is kept as `-1`.
pub fn normalize_features(embedding: &GraphEmbedding) -> Tensor {
    let v = embedding.num_rows();
    let d = embedding.max_degree();
    let w = embedding.width();
    let max_level = (0..v).map(|i| embedding.level(i)).max().unwrap_or(1).max(1) as f64;
    let max_id = (0..v).map(|i| embedding.node_id(i)).max().unwrap_or(1).max(1) as f64;
    let total_mem = (0..v).map(|i| embedding.memory(i)).sum::<i64>().max(1) as f64;
    let mut out = Tensor::zeros(v, w);
    for i in 0..v {
        let row = embedding.row(i);
        let dst = out.row_mut(i);
        dst[0] = row[0] as f64 / max_level;
        for s in 0..d {
            dst[1 + s] = row[1 + s] as f64 / max_level;
            let id = row[1 + d + s];
            dst[1 + d + s] = if id < 0 { -1.0 } else { id as f64 / max_id };
        }
        dst[1 + 2 * d] = row[1 + 2 * d] as f64 / max_id;
        dst[2 + 2 * d] = row[2 + 2 * d] as f64 / total_mem;
    }
    out
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Context matrix, one row per node.
    pub contexts: Tensor,
    pub final_h: Vec<f64>,
    pub final_c: Vec<f64>,
    features: Tensor,
    inputs: Tensor,
    steps: Vec<LstmStep>,
    ref_glimpse: Tensor,
    ref_pointer: Tensor,
}

impl EncoderOutput {
    pub fn num_nodes(&self) -> usize {
        self.contexts.rows()
    }

    /// Projected embedding of node `i`, which is also the decoder input after
    /// `i` is selected.
    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState {
            h: self.final_h.clone(),
            c: self.final_c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn encode(embedding: &GraphEmbedding, params: &PolicyParams) -> Result<EncoderOutput, PolicyError> {
    let n = embedding.num_rows();
    let d = params.hidden_dim();
    if embedding.width() != params.config.input_width() {
        return Err(PolicyError::ShapeMismatch {
            what: "embedding width",
            expected: params.config.input_width(),
            got: embedding.width(),
        });
    }
    if n == 0 {
        return Err(PolicyError::ShapeMismatch {
            what: "node count",
            expected: 1,
            got: 0,
        });
    }
    let features = normalize_features(embedding);
    let mut inputs = Tensor::zeros(n, d);
    for i in 0..n {
        let row = inputs.row_mut(i);
        row.copy_from_slice(params.embed_b.as_slice());
        params.embed_w.gemv_acc(features.row(i), row);
    }

    let mut contexts = Tensor::zeros(n, d);
    let mut steps = Vec::with_capacity(n);
    let mut h = vec![0.0; d];
    let mut c = vec![0.0; d];
    for i in 0..n {
        let step = lstm_forward(&params.encoder, inputs.row(i), &h, &c);
        h.clone_from(&step.h);
        c.clone_from(&step.c);
        contexts.row_mut(i).copy_from_slice(&step.h);
        steps.push(step);
    }
    if !contexts.is_finite() || !c.iter().all(|x| x.is_finite()) {
        return Err(PolicyError::NumericalError("encoder activations"));
    }

    let project = |w: &Tensor| {
        let mut r = Tensor::zeros(n, d);
        for i in 0..n {
            w.gemv_acc(contexts.row(i), r.row_mut(i));
        }
        r
    };
    let ref_glimpse = project(&params.glimpse.w_ref);
    let ref_pointer = project(&params.pointer.w_ref);

    Ok(EncoderOutput {
        contexts,
        final_h: h,
        final_c: c,
        features,
        inputs,
        steps,
        ref_glimpse,
        ref_pointer,
    })
}

/// Softmax over entries where `mask` is false; masked entries get exactly 0.
fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { 0.0 } else { libm::exp(l - max) })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

fn attention_logits(att: &AttentionParams, refs: &Tensor, q: &[f64], mask: &[bool]) -> Vec<f64> {
    let d = q.len();
    let mut tmp = vec![0.0; d];
    (0..refs.rows())
        .map(|i| {
            if mask[i] {
                return f64::NEG_INFINITY;
            }
            for (t, (r, qq)) in tmp.iter_mut().zip(refs.row(i).iter().zip(q)) {
                *t = libm::tanh(r + qq);
            }
            dot(att.v.as_slice(), &tmp)
        })
        .collect()
}

#[derive(Debug, Clone)]
struct StepCache {
    lstm: LstmStep,
    q_glimpse: Vec<f64>,
    glimpse_probs: Vec<f64>,
    glimpse: Vec<f64>,
    q_pointer: Vec<f64>,
    probs: Vec<f64>,
}

fn step_forward(
    input: &[f64],
    state: &DecoderState,
    enc: &EncoderOutput,
    mask: &[bool],
    params: &PolicyParams,
) -> Result<(StepCache, Vec<f64>), PolicyError> {
    if mask.len() != enc.num_nodes() {
        return Err(PolicyError::ShapeMismatch {
            what: "mask",
            expected: enc.num_nodes(),
            got: mask.len(),
        });
    }
    if mask.iter().all(|&m| m) {
        return Err(PolicyError::DecodeExhausted);
    }
    let lstm = lstm_forward(&params.decoder, input, &state.h, &state.c);

    let mut q_glimpse = params.glimpse.b.as_slice().to_vec();
    params.glimpse.w_q.gemv_acc(&lstm.h, &mut q_glimpse);
    let a = attention_logits(&params.glimpse, &enc.ref_glimpse, &q_glimpse, mask);
    let glimpse_probs = masked_softmax(&a, mask);
    let mut glimpse = vec![0.0; lstm.h.len()];
    for (i, &p) in glimpse_probs.iter().enumerate() {
        if p != 0.0 {
            axpy(p, enc.contexts.row(i), &mut glimpse);
        }
    }

    let mut q_pointer = params.pointer.b.as_slice().to_vec();
    params.pointer.w_q.gemv_acc(&glimpse, &mut q_pointer);
    let logits = attention_logits(&params.pointer, &enc.ref_pointer, &q_pointer, mask);
    let probs = masked_softmax(&logits, mask);
    if !probs.iter().all(|p| p.is_finite()) {
        return Err(PolicyError::NumericalError("pointer probabilities"));
    }
    Ok((
        StepCache {
            lstm,
            q_glimpse,
            glimpse_probs,
            glimpse,
            q_pointer,
            probs,
        },
        logits,
    ))
}

/// One decoding step: selection probabilities over all nodes (zero where
/// `mask` is set) and the next decoder state.
pub fn decode_step(
    input: &[f64],
    state: &DecoderState,
    enc: &EncoderOutput,
    mask: &[bool],
    params: &PolicyParams,
) -> Result<(Vec<f64>, DecoderState), PolicyError> {
    let (cache, _) = step_forward(input, state, enc, mask, params)?;
    let next = DecoderState {
        h: cache.lstm.h,
        c: cache.lstm.c,
    };
    Ok((cache.probs, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode<'a> {
    /// Highest probability, lowest index on ties.
    Greedy,
    /// Draw from each step's distribution.
    Sample,
    /// Replay a given permutation (for log-likelihood evaluation).
    Forced(&'a [usize]),
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    /// Decoded permutation of node indices.
    pub sequence: Vec<usize>,
    /// `log p(pi(t) | pi(<t), G)` for each step.
    pub step_logprobs: Vec<f64>,
    /// Reward assigned by the trainer; 0 until then.
    pub reward: f64,
    steps: Vec<StepCache>,
}

impl EpisodeTrace {
    /// `log p(pi | G)` by the chain rule.
    pub fn log_prob(&self) -> f64 {
        self.step_logprobs.iter().sum()
    }

    /// Mask in force at step `t`: nodes selected before it.
    pub fn mask_at(&self, t: usize) -> Vec<bool> {
        let mut mask = vec![false; self.sequence.len()];
        for &v in &self.sequence[..t] {
            mask[v] = true;
        }
        mask
    }

    /// Selection distribution used at step `t`.
    pub fn step_probs(&self, t: usize) -> &[f64] {
        &self.steps[t].probs
    }
}

fn argmax_lowest(probs: &[f64], mask: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_p = f64::NEG_INFINITY;
    for (i, (&p, &m)) in probs.iter().zip(mask).enumerate() {
        if !m && p > best_p {
            best = i;
            best_p = p;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], mask: &[bool], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for (i, (&p, &m)) in probs.iter().zip(mask).enumerate() {
        if m {
            continue;
        }
        last = i;
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn decode_sequence<R: Rng + ?Sized>(
    enc: &EncoderOutput,
    params: &PolicyParams,
    mode: DecodeMode<'_>,
    rng: &mut R,
) -> Result<EpisodeTrace, PolicyError> {
    let n = enc.num_nodes();
    if let DecodeMode::Forced(seq) = mode {
        if seq.len() != n {
            return Err(PolicyError::NotAPermutation);
        }
    }
    let mut mask = vec![false; n];
    let mut state = enc.initial_state();
    let mut sequence = Vec::with_capacity(n);
    let mut step_logprobs = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let input = if t == 0 {
            params.dec0.as_slice()
        } else {
            enc.input(sequence[t - 1])
        };
        let (cache, logits) = step_forward(input, &state, enc, &mask, params)?;
        let idx = match mode {
            DecodeMode::Greedy => argmax_lowest(&cache.probs, &mask),
            DecodeMode::Sample => sample_index(&cache.probs, &mask, rng),
            DecodeMode::Forced(seq) => {
                let v = seq[t];
                if v >= n || mask[v] {
                    return Err(PolicyError::NotAPermutation);
                }
                v
            }
        };
        let max = logits
            .iter()
            .copied()
            .filter(|l| l.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + libm::log(
                logits
                    .iter()
                    .filter(|l| l.is_finite())
                    .map(|l| libm::exp(l - max))
                    .sum::<f64>(),
            );
        step_logprobs.push(logits[idx] - lse);
        mask[idx] = true;
        sequence.push(idx);
        state = DecoderState {
            h: cache.lstm.h.clone(),
            c: cache.lstm.c.clone(),
        };
        steps.push(cache);
    }
    Ok(EpisodeTrace {
        sequence,
        step_logprobs,
        reward: 0.0,
        steps,
    })
}

/// `log p(sequence | G)` under `params`.
pub fn sequence_log_prob(
    embedding: &GraphEmbedding,
    sequence: &[usize],
    params: &PolicyParams,
) -> Result<f64, PolicyError> {
    let enc = encode(embedding, params)?;
    let trace = decode_sequence(&enc, params, DecodeMode::Forced(sequence), &mut NoRng)?;
    Ok(trace.log_prob())
}

/// Placeholder RNG for modes that never sample.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("deterministic decode mode drew a random number")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("deterministic decode mode drew a random number")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("deterministic decode mode drew a random number")
    }
}

/// Greedy decode without an RNG.
pub fn greedy_decode(enc: &EncoderOutput, params: &PolicyParams) -> Result<EpisodeTrace, PolicyError> {
    decode_sequence(enc, params, DecodeMode::Greedy, &mut NoRng)
}

/// Gradient of `advantage * log p(trace.sequence | G)` with respect to every
/// parameter, by backpropagation through pointer, glimpse, decoder LSTM,
/// encoder LSTM and the input projection.
pub fn backward(
    enc: &EncoderOutput,
    trace: &EpisodeTrace,
    advantage: f64,
    params: &PolicyParams,
) -> Result<PolicyParams, PolicyError> {
    let mut grad = params.zeros_like();
    if advantage == 0.0 {
        return Ok(grad);
    }
    let n = enc.num_nodes();
    let d = params.hidden_dim();
    if trace.steps.len() != n {
        return Err(PolicyError::ShapeMismatch {
            what: "trace length",
            expected: n,
            got: trace.steps.len(),
        });
    }

    let mut d_ctx = Tensor::zeros(n, d);
    let mut d_ref_g = Tensor::zeros(n, d);
    let mut d_ref_p = Tensor::zeros(n, d);
    let mut d_inputs = Tensor::zeros(n, d);
    let mut d_h_steps: Vec<Vec<f64>> = Vec::with_capacity(n);

    let mut mask = vec![false; n];
    let mut tanh_buf = vec![0.0; d];
    let mut d_pre = vec![0.0; d];
    for (t, step) in trace.steps.iter().enumerate() {
        let chosen = trace.sequence[t];

        // pointer head
        let mut d_qp = vec![0.0; d];
        for (i, &masked) in mask.iter().enumerate() {
            if masked {
                continue;
            }
            let target = if i == chosen { 1.0 } else { 0.0 };
            let du = advantage * (target - step.probs[i]);
            if du == 0.0 {
                continue;
            }
            let r = enc.ref_pointer.row(i);
            for k in 0..d {
                tanh_buf[k] = libm::tanh(r[k] + step.q_pointer[k]);
            }
            axpy(du, &tanh_buf, grad.pointer.v.as_mut_slice());
            let v = params.pointer.v.as_slice();
            for k in 0..d {
                d_pre[k] = du * v[k] * (1.0 - tanh_buf[k] * tanh_buf[k]);
            }
            axpy(1.0, &d_pre, d_ref_p.row_mut(i));
            axpy(1.0, &d_pre, &mut d_qp);
        }
        grad.pointer.w_q.outer_acc(&d_qp, &step.glimpse);
        axpy(1.0, &d_qp, grad.pointer.b.as_mut_slice());
        let mut d_g = vec![0.0; d];
        params.pointer.w_q.gemv_t_acc(&d_qp, &mut d_g);

        // glimpse: g = sum_i p_i C_i
        let mut d_pg = vec![0.0; n];
        let mut weighted = 0.0;
        for i in 0..n {
            let p = step.glimpse_probs[i];
            if mask[i] || p == 0.0 {
                continue;
            }
            axpy(p, &d_g, d_ctx.row_mut(i));
            d_pg[i] = dot(&d_g, enc.contexts.row(i));
            weighted += p * d_pg[i];
        }
        let mut d_qg = vec![0.0; d];
        for i in 0..n {
            let p = step.glimpse_probs[i];
            if mask[i] || p == 0.0 {
                continue;
            }
            let da = p * (d_pg[i] - weighted);
            if da == 0.0 {
                continue;
            }
            let r = enc.ref_glimpse.row(i);
            for k in 0..d {
                tanh_buf[k] = libm::tanh(r[k] + step.q_glimpse[k]);
            }
            axpy(da, &tanh_buf, grad.glimpse.v.as_mut_slice());
            let v = params.glimpse.v.as_slice();
            for k in 0..d {
                d_pre[k] = da * v[k] * (1.0 - tanh_buf[k] * tanh_buf[k]);
            }
            axpy(1.0, &d_pre, d_ref_g.row_mut(i));
            axpy(1.0, &d_pre, &mut d_qg);
        }
        grad.glimpse.w_q.outer_acc(&d_qg, &step.lstm.h);
        axpy(1.0, &d_qg, grad.glimpse.b.as_mut_slice());
        let mut d_h = vec![0.0; d];
        params.glimpse.w_q.gemv_t_acc(&d_qg, &mut d_h);
        d_h_steps.push(d_h);

        mask[chosen] = true;
    }

    // reference projections: R = C W_ref^T
    for i in 0..n {
        let c = enc.contexts.row(i);
        grad.glimpse.w_ref.outer_acc(d_ref_g.row(i), c);
        grad.pointer.w_ref.outer_acc(d_ref_p.row(i), c);
        let dc = d_ctx.row_mut(i);
        params.glimpse.w_ref.gemv_t_acc(d_ref_g.row(i), dc);
        params.pointer.w_ref.gemv_t_acc(d_ref_p.row(i), dc);
    }

    // decoder through time
    let mut dh_next = vec![0.0; d];
    let mut dc_next = vec![0.0; d];
    let mut dx = vec![0.0; d];
    let mut dh_prev = vec![0.0; d];
    let mut dc_prev = vec![0.0; d];
    for t in (0..n).rev() {
        let mut dh = d_h_steps[t].clone();
        axpy(1.0, &dh_next, &mut dh);
        lstm_backward(
            &params.decoder,
            &trace.steps[t].lstm,
            &dh,
            &dc_next,
            &mut grad.decoder,
            &mut dx,
            &mut dh_prev,
            &mut dc_prev,
        );
        if t == 0 {
            axpy(1.0, &dx, grad.dec0.as_mut_slice());
        } else {
            axpy(1.0, &dx, d_inputs.row_mut(trace.sequence[t - 1]));
        }
        core::mem::swap(&mut dh_next, &mut dh_prev);
        core::mem::swap(&mut dc_next, &mut dc_prev);
    }

    // encoder through time; the decoder's initial state is the encoder's last
    for j in (0..n).rev() {
        let mut dh = d_ctx.row(j).to_vec();
        axpy(1.0, &dh_next, &mut dh);
        lstm_backward(
            &params.encoder,
            &enc.steps[j],
            &dh,
            &dc_next,
            &mut grad.encoder,
            &mut dx,
            &mut dh_prev,
            &mut dc_prev,
        );
        axpy(1.0, &dx, d_inputs.row_mut(j));
        core::mem::swap(&mut dh_next, &mut dh_prev);
        core::mem::swap(&mut dc_next, &mut dc_prev);
    }

    for j in 0..n {
        grad.embed_w.outer_acc(d_inputs.row(j), enc.features.row(j));
        axpy(1.0, d_inputs.row(j), grad.embed_b.as_mut_slice());
    }

    if let Some(name) = grad.first_non_finite() {
        return Err(PolicyError::NumericalError(name));
    }
    Ok(grad)
}
