//! Bidirectional stacked GRU encoder and the linear alternative.
//!
//! Per direction, with `x` the layer input and `h` the previous state:
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```
//!
//! The forward direction runs over rows `0..L`, the backward direction over
//! `L-1..=0`; both start from a zero state and their outputs are
//! concatenated. Deeper layers read the concatenated output of the layer
//! below. Only the valid prefix is stored; padding rows are implicitly zero.

use super::params::{EncoderParams, GruDirection};
use super::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone)]
pub struct DirectionTrace {
    pub update: Tensor,
    pub reset: Tensor,
    pub candidate: Tensor,
    pub prev: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub enum EncoderTrace {
    Gru {
        /// Input of every layer (`L x d_in`).
        inputs: Vec<Tensor>,
        directions: Vec<[DirectionTrace; 2]>,
    },
    Linear {
        input: Tensor,
        pre_activation: Tensor,
    },
}

fn run_direction(p: &GruDirection, x: &Tensor, len: usize, reverse: bool) -> DirectionTrace {
    let nh = p.w_hh.cols();
    let mut tr = DirectionTrace {
        update: Tensor::zeros(&[len, nh]),
        reset: Tensor::zeros(&[len, nh]),
        candidate: Tensor::zeros(&[len, nh]),
        prev: Tensor::zeros(&[len, nh]),
        output: Tensor::zeros(&[len, nh]),
    };
    let mut h = vec![0.0; nh];
    let mut pre = vec![0.0; 3 * nh];
    let mut q = vec![0.0; nh];
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        pre.copy_from_slice(p.bias.data());
        p.w_ih.matvec_add(0..3 * nh, x.row(t), &mut pre);
        p.w_hh.matvec_add(0..2 * nh, &h, &mut pre[..2 * nh]);
        for k in 0..nh {
            let z = sigmoid(pre[k]);
            let r = sigmoid(pre[nh + k]);
            tr.update.row_mut(t)[k] = z;
            tr.reset.row_mut(t)[k] = r;
            q[k] = r * h[k];
        }
        p.w_hh.matvec_add(2 * nh..3 * nh, &q, &mut pre[2 * nh..]);
        tr.prev.row_mut(t).copy_from_slice(&h);
        for k in 0..nh {
            let n = pre[2 * nh + k].tanh();
            let z = tr.update.row(t)[k];
            tr.candidate.row_mut(t)[k] = n;
            h[k] = (1.0 - z) * n + z * h[k];
        }
        tr.output.row_mut(t).copy_from_slice(&h);
    }
    tr
}

/// Accumulates parameter gradients into `grad` and input gradients into `dx`.
#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    p: &GruDirection,
    grad: &mut GruDirection,
    x: &Tensor,
    tr: &DirectionTrace,
    d_out: &Tensor,
    out_offset: usize,
    dx: &mut Tensor,
    reverse: bool,
) {
    let len = tr.output.rows();
    let nh = p.w_hh.cols();
    let mut carry = vec![0.0; nh];
    let mut dh = vec![0.0; nh];
    let mut dprev = vec![0.0; nh];
    let mut dpre = vec![0.0; 3 * nh];
    let mut dq = vec![0.0; nh];
    let mut q = vec![0.0; nh];
    for step in (0..len).rev() {
        let t = if reverse { len - 1 - step } else { step };
        let (z, r, n, hp) = (tr.update.row(t), tr.reset.row(t), tr.candidate.row(t), tr.prev.row(t));
        let d_out_row = &d_out.row(t)[out_offset..out_offset + nh];
        for k in 0..nh {
            dh[k] = d_out_row[k] + carry[k];
            let dn = dh[k] * (1.0 - z[k]);
            let dz = dh[k] * (hp[k] - n[k]);
            dprev[k] = dh[k] * z[k];
            dpre[2 * nh + k] = dn * (1.0 - n[k] * n[k]);
            dpre[k] = dz * z[k] * (1.0 - z[k]);
            q[k] = r[k] * hp[k];
        }
        dq.iter_mut().for_each(|v| *v = 0.0);
        p.w_hh.matvec_t_add(2 * nh..3 * nh, &dpre[2 * nh..], &mut dq);
        grad.w_hh.outer_add(2 * nh, &dpre[2 * nh..], &q);
        for k in 0..nh {
            let dr = dq[k] * hp[k];
            dprev[k] += dq[k] * r[k];
            dpre[nh + k] = dr * r[k] * (1.0 - r[k]);
        }
        grad.w_hh.outer_add(0, &dpre[..2 * nh], hp);
        p.w_hh.matvec_t_add(0..2 * nh, &dpre[..2 * nh], &mut dprev);
        grad.w_ih.outer_add(0, &dpre, x.row(t));
        for (b, d) in grad.bias.data_mut().iter_mut().zip(&dpre) {
            *b += d;
        }
        p.w_ih.matvec_t_add(0..3 * nh, &dpre, dx.row_mut(t));
        carry.copy_from_slice(&dprev);
    }
}

/// Encodes the first `len` rows of `x`; returns `len x 2*hidden` states.
pub fn encoder_forward(params: &EncoderParams, x: &Tensor, len: usize) -> (Tensor, EncoderTrace) {
    let input = Tensor::from_vec(&[len, x.cols()], x.data()[..len * x.cols()].to_vec());
    match params {
        EncoderParams::Gru(layers) => {
            let mut inputs = Vec::with_capacity(layers.len());
            let mut directions = Vec::with_capacity(layers.len());
            let mut current = input;
            for layer in layers {
                let fwd = run_direction(&layer.forward, &current, len, false);
                let bwd = run_direction(&layer.backward, &current, len, true);
                let nh = fwd.output.cols();
                let mut out = Tensor::zeros(&[len, 2 * nh]);
                for t in 0..len {
                    let row = out.row_mut(t);
                    row[..nh].copy_from_slice(fwd.output.row(t));
                    row[nh..].copy_from_slice(bwd.output.row(t));
                }
                inputs.push(current);
                directions.push([fwd, bwd]);
                current = out;
            }
            (current, EncoderTrace::Gru { inputs, directions })
        }
        EncoderParams::Linear { weight, bias } => {
            let d = weight.rows();
            let mut pre = Tensor::zeros(&[len, d]);
            let mut out = Tensor::zeros(&[len, d]);
            for t in 0..len {
                let row = pre.row_mut(t);
                row.copy_from_slice(bias.data());
                weight.matvec_add(0..d, input.row(t), row);
                for (o, &p) in out.row_mut(t).iter_mut().zip(pre.row(t)) {
                    *o = p.max(0.0);
                }
            }
            (
                out,
                EncoderTrace::Linear {
                    input,
                    pre_activation: pre,
                },
            )
        }
    }
}

/// Backpropagates `d_hidden` (`len x 2*hidden`) into `grad`.
pub fn encoder_backward(params: &EncoderParams, grad: &mut EncoderParams, trace: &EncoderTrace, d_hidden: &Tensor) {
    match (params, grad, trace) {
        (EncoderParams::Gru(layers), EncoderParams::Gru(grads), EncoderTrace::Gru { inputs, directions }) => {
            let mut d_out = d_hidden.clone();
            for l in (0..layers.len()).rev() {
                let x = &inputs[l];
                let mut dx = Tensor::zeros(&[x.rows(), x.cols()]);
                let nh = layers[l].forward.w_hh.cols();
                let [fwd, bwd] = &directions[l];
                backprop_direction(&layers[l].forward, &mut grads[l].forward, x, fwd, &d_out, 0, &mut dx, false);
                backprop_direction(&layers[l].backward, &mut grads[l].backward, x, bwd, &d_out, nh, &mut dx, true);
                d_out = dx;
            }
        }
        (
            EncoderParams::Linear { .. },
            EncoderParams::Linear { weight: gw, bias: gb },
            EncoderTrace::Linear { input, pre_activation },
        ) => {
            for t in 0..input.rows() {
                let dpre: Vec<f64> = d_hidden
                    .row(t)
                    .iter()
                    .zip(pre_activation.row(t))
                    .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
                    .collect();
                gw.outer_add(0, &dpre, input.row(t));
                for (b, d) in gb.data_mut().iter_mut().zip(&dpre) {
                    *b += d;
                }
            }
        }
        _ => panic!("encoder parameters, gradients and trace disagree on the encoder kind"),
    }
}
