use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::embed::GraphEmbedding;

/// Shape-determining configuration of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyConfig {
    pub hidden_dim: usize,
    /// Parent slots per embedding row.
    pub max_degree: usize,
}

impl PolicyConfig {
    pub const DEFAULT_HIDDEN_DIM: usize = 256;

    pub fn new(hidden_dim: usize, max_degree: usize) -> Self {
        Self {
            hidden_dim,
            max_degree,
        }
    }

    pub fn input_width(&self) -> usize {
        GraphEmbedding::row_width(self.max_degree)
    }
}

/// Weights of one LSTM layer. Gate blocks are stacked `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Tensor::zeros(4 * hidden, input),
            w_h: Tensor::zeros(4 * hidden, hidden),
            b: Tensor::zeros(4 * hidden, 1),
        }
    }
}

/// Additive attention head: `v . tanh(w_ref * c_i + w_q * q + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_ref: Tensor,
    pub w_q: Tensor,
    pub b: Tensor,
    pub v: Tensor,
}

impl AttentionParams {
    fn zeros(d: usize) -> Self {
        Self {
            w_ref: Tensor::zeros(d, d),
            w_q: Tensor::zeros(d, d),
            b: Tensor::zeros(d, 1),
            v: Tensor::zeros(d, 1),
        }
    }
}

/// Every trainable tensor of the pointer network.
///
/// The same struct doubles as the gradient container and as Adam moment
/// storage.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    pub glimpse: AttentionParams,
    pub pointer: AttentionParams,
    /// Input to the first decoding step.
    pub dec0: Tensor,
}

/// Names of the tensors in [`PolicyParams::tensors`] order.
pub const TENSOR_NAMES: [&str; 17] = [
    "embed.w",
    "embed.b",
    "encoder.w_x",
    "encoder.w_h",
    "encoder.b",
    "decoder.w_x",
    "decoder.w_h",
    "decoder.b",
    "glimpse.w_ref",
    "glimpse.w_q",
    "glimpse.b",
    "glimpse.v",
    "pointer.w_ref",
    "pointer.w_q",
    "pointer.b",
    "pointer.v",
    "dec0",
];

impl PolicyParams {
    pub fn zeros(config: PolicyConfig) -> Self {
        let d = config.hidden_dim;
        Self {
            config,
            embed_w: Tensor::zeros(d, config.input_width()),
            embed_b: Tensor::zeros(d, 1),
            encoder: LstmParams::zeros(d, d),
            decoder: LstmParams::zeros(d, d),
            glimpse: AttentionParams::zeros(d),
            pointer: AttentionParams::zeros(d),
            dec0: Tensor::zeros(d, 1),
        }
    }

    /// Uniform initialisation in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn init(config: PolicyConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let bound = 1.0 / libm::sqrt(config.hidden_dim as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.tensors_mut() {
            for x in t.as_mut_slice() {
                *x = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn tensors(&self) -> [&Tensor; 17] {
        [
            &self.embed_w,
            &self.embed_b,
            &self.encoder.w_x,
            &self.encoder.w_h,
            &self.encoder.b,
            &self.decoder.w_x,
            &self.decoder.w_h,
            &self.decoder.b,
            &self.glimpse.w_ref,
            &self.glimpse.w_q,
            &self.glimpse.b,
            &self.glimpse.v,
            &self.pointer.w_ref,
            &self.pointer.w_q,
            &self.pointer.b,
            &self.pointer.v,
            &self.dec0,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 17] {
        [
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.encoder.w_x,
            &mut self.encoder.w_h,
            &mut self.encoder.b,
            &mut self.decoder.w_x,
            &mut self.decoder.w_h,
            &mut self.decoder.b,
            &mut self.glimpse.w_ref,
            &mut self.glimpse.w_q,
            &mut self.glimpse.b,
            &mut self.glimpse.v,
            &mut self.pointer.w_ref,
            &mut self.pointer.w_q,
            &mut self.pointer.b,
            &mut self.pointer.v,
            &mut self.dec0,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        TENSOR_NAMES.into_iter().zip(self.tensors())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &PolicyParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }

    /// Shapes in [`TENSOR_NAMES`] order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }

    /// Replaces every tensor, checking shapes against `config`.
    pub fn from_tensors(config: PolicyConfig, tensors: Vec<Tensor>) -> Result<Self, (usize, (usize, usize))> {
        let mut p = Self::zeros(config);
        if tensors.len() != TENSOR_NAMES.len() {
            return Err((tensors.len(), (0, 0)));
        }
        for (i, (slot, t)) in p.tensors_mut().into_iter().zip(tensors).enumerate() {
            if slot.shape() != t.shape() {
                return Err((i, t.shape()));
            }
            *slot = t;
        }
        Ok(p)
    }
}
