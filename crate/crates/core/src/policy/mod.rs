//! Pointer-network policy over graph embeddings.

mod lstm;
mod network;
mod params;
mod tensor;

pub use network::{
    backward, decode_sequence, decode_step, encode, greedy_decode, normalize_features,
    sequence_log_prob, DecodeMode, DecoderState, EncoderOutput, EpisodeTrace,
};
pub use params::{AttentionParams, LstmParams, PolicyConfig, PolicyParams, TENSOR_NAMES};
pub use tensor::Tensor;
