use alloc::vec;
use alloc::vec::Vec;

use super::params::LstmParams;
use super::tensor::sigmoid;

/// Everything one LSTM step needs for its backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn lstm_forward(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
    let d = h_prev.len();
    let mut z = p.b.as_slice().to_vec();
    p.w_x.gemv_acc(x, &mut z);
    p.w_h.gemv_acc(h_prev, &mut z);
    for k in 0..d {
        z[k] = sigmoid(z[k]);
        z[d + k] = sigmoid(z[d + k]);
        z[2 * d + k] = libm::tanh(z[2 * d + k]);
        z[3 * d + k] = sigmoid(z[3 * d + k]);
    }
    let mut c = vec![0.0; d];
    let mut h = vec![0.0; d];
    for k in 0..d {
        c[k] = z[d + k] * c_prev[k] + z[k] * z[2 * d + k];
        h[k] = z[3 * d + k] * libm::tanh(c[k]);
    }
    LstmStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates: z,
        c,
        h,
    }
}

/// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs) into the
/// weight gradients and writes input/state gradients into `dx`, `dh_prev`,
/// `dc_prev` (overwritten).
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    p: &LstmParams,
    step: &LstmStep,
    dh: &[f64],
    dc: &[f64],
    grad: &mut LstmParams,
    dx: &mut [f64],
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
) {
    let d = dh.len();
    let g = &step.gates;
    let mut dz = vec![0.0; 4 * d];
    for k in 0..d {
        let (i, f, gg, o) = (g[k], g[d + k], g[2 * d + k], g[3 * d + k]);
        let tc = libm::tanh(step.c[k]);
        let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
        dz[k] = dck * gg * i * (1.0 - i);
        dz[d + k] = dck * step.c_prev[k] * f * (1.0 - f);
        dz[2 * d + k] = dck * i * (1.0 - gg * gg);
        dz[3 * d + k] = dh[k] * tc * o * (1.0 - o);
        dc_prev[k] = dck * f;
    }
    grad.w_x.outer_acc(&dz, &step.x);
    grad.w_h.outer_acc(&dz, &step.h_prev);
    for (b, z) in grad.b.as_mut_slice().iter_mut().zip(&dz) {
        *b += z;
    }
    dx.iter_mut().for_each(|v| *v = 0.0);
    dh_prev.iter_mut().for_each(|v| *v = 0.0);
    p.w_x.gemv_t_acc(&dz, dx);
    p.w_h.gemv_t_acc(&dz, dh_prev);
}
