//! Analytic gradients against central finite differences.

use pipesched_core::embed::embed_graph;
use pipesched_core::policy::{backward, encode, greedy_decode, sequence_log_prob, PolicyConfig, PolicyParams, TENSOR_NAMES};
use pipesched_core::sampler::{sample_dag, SamplerConfig};

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

fn max_rel_errors(nodes: usize, degree: usize, d: usize, seed: u64, advantage: f64) -> Vec<(&'static str, f64)> {
    let g = sample_dag(&SamplerConfig::new(nodes, degree, seed)).unwrap();
    let e = embed_graph(&g, degree).unwrap();
    let p = PolicyParams::init(PolicyConfig::new(d, degree), seed ^ 0xabc);
    let enc = encode(&e, &p).unwrap();
    // a non-greedy sequence exercises every softmax branch
    let mut seq = greedy_decode(&enc, &p).unwrap().sequence;
    seq.reverse();
    let trace = pipesched_core::policy::decode_sequence(
        &enc,
        &p,
        pipesched_core::policy::DecodeMode::Forced(&seq),
        &mut rand_free(),
    )
    .unwrap();
    let grad = backward(&enc, &trace, advantage, &p).unwrap();

    let loss = |q: &PolicyParams| advantage * sequence_log_prob(&e, &seq, q).unwrap();
    let mut out = Vec::new();
    for (ti, name) in TENSOR_NAMES.iter().enumerate() {
        let mut worst: f64 = 0.0;
        let len = p.tensors()[ti].len();
        for k in 0..len {
            let mut plus = p.clone();
            plus.tensors_mut()[ti].as_mut_slice()[k] += STEP;
            let mut minus = p.clone();
            minus.tensors_mut()[ti].as_mut_slice()[k] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let analytic = grad.tensors()[ti].as_slice()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
        out.push((*name, worst));
    }
    out
}

fn rand_free() -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}

#[test]
fn four_node_graph_d8() {
    for (name, err) in max_rel_errors(4, 2, 8, 7, 1.0) {
        assert!(err <= 1e-4, "{name}: max relative error {err:e}");
    }
}

#[test]
fn negative_advantage_larger_graph() {
    for (name, err) in max_rel_errors(7, 3, 5, 11, -0.37) {
        assert!(err <= 1e-4, "{name}: max relative error {err:e}");
    }
}
