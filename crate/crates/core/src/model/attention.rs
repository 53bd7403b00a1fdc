//! Masked scaled dot-product self-attention.
//!
//! `score(h_i, h_j) = h_i · h_j / sqrt(L)` with `L` the unpadded length;
//! weights are a row-wise softmax over valid positions only and
//! `c_i = Σ_j α_ij h_j`.

use super::tensor::{axpy, dot, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `L x L`; weight on any padding position is zero by construction.
    pub weights: Tensor,
    /// Same row count as the input hidden states; rows past `L` are zero.
    pub context: Tensor,
}

impl AttentionOutput {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let l = self.weights.rows();
        if i < l && j < l {
            self.weights.row(i)[j]
        } else {
            0.0
        }
    }
}

pub fn attention_forward(hidden: &Tensor, len: usize) -> AttentionOutput {
    let d = hidden.cols();
    let mut weights = Tensor::zeros(&[len, len]);
    let mut context = Tensor::zeros(&[hidden.rows(), d]);
    if len == 0 {
        return AttentionOutput { weights, context };
    }
    let scale = (len as f64).sqrt();
    for i in 0..len {
        let hi = hidden.row(i);
        let row = weights.row_mut(i);
        for (j, w) in row.iter_mut().enumerate() {
            *w = dot(hi, hidden.row(j)) / scale;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for w in row.iter_mut() {
            *w = (*w - max).exp();
            sum += *w;
        }
        for w in row.iter_mut() {
            *w /= sum;
        }
        let ci = context.row_mut(i);
        for j in 0..len {
            axpy(weights.row(i)[j], hidden.row(j), ci);
        }
    }
    AttentionOutput { weights, context }
}

/// Adds the gradient w.r.t. `hidden` implied by `d_context` into `d_hidden`.
pub fn attention_backward(hidden: &Tensor, out: &AttentionOutput, d_context: &Tensor, d_hidden: &mut Tensor) {
    let len = out.weights.rows();
    if len == 0 {
        return;
    }
    let scale = (len as f64).sqrt();
    let mut d_alpha = vec![0.0; len];
    for i in 0..len {
        let alpha = out.weights.row(i);
        let dci = d_context.row(i);
        for j in 0..len {
            d_alpha[j] = dot(dci, hidden.row(j));
            // c_i = Σ α_ij h_j
            axpy(alpha[j], dci, d_hidden.row_mut(j));
        }
        let mean = dot(alpha, &d_alpha);
        for j in 0..len {
            let ds = alpha[j] * (d_alpha[j] - mean) / scale;
            if ds == 0.0 {
                continue;
            }
            // s_ij = h_i · h_j / sqrt(L)
            axpy(ds, hidden.row(j), d_hidden.row_mut(i));
            axpy(ds, hidden.row(i), d_hidden.row_mut(j));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_attends_to_itself() {
        let h = Tensor::from_vec(&[1, 3], vec![0.3, -2.0, 5.0]);
        let out = attention_forward(&h, 1);
        assert_eq!(out.weights.data(), &[1.0]);
        assert_eq!(out.context.row(0), h.row(0));
    }

    #[test]
    fn identical_states_give_uniform_weights() {
        let h = Tensor::from_vec(&[4, 2], [0.5, -1.0].repeat(4));
        let out = attention_forward(&h, 4);
        for i in 0..4 {
            for j in 0..4 {
                assert!((out.weight(i, j) - 0.25).abs() < 1e-15);
            }
            assert!((out.context.row(i)[0] - 0.5).abs() < 1e-15);
            assert!((out.context.row(i)[1] + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_sequence() {
        let h = Tensor::zeros(&[100, 4]);
        let out = attention_forward(&h, 0);
        assert!(out.context.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.weights.len(), 0);
    }

    #[test]
    fn padding_rows_are_ignored() {
        let mut h = Tensor::zeros(&[6, 2]);
        h.data_mut()[..6].copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        // garbage in padding must not leak into the result
        h.data_mut()[6..].iter_mut().for_each(|v| *v = 9.0);
        let out = attention_forward(&h, 3);
        assert!(out.context.data()[6..].iter().all(|&v| v == 0.0));
        assert_eq!(out.weight(0, 4), 0.0);
        for i in 0..3 {
            let s: f64 = out.weights.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
