//! Per-detection regressor: `y = σ(W2ᵀ relu(W1ᵀ [h ⊕ c] + b1) + b2)`.

use super::params::RegressorParams;
use super::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone)]
pub struct RegressorTrace {
    /// Hidden pre-activations, `L x regressor_hidden`.
    pub pre_activation: Tensor,
    /// Outputs in `(0, 1)`, one per valid row.
    pub output: Vec<f64>,
}

fn joint_input(hidden: &Tensor, context: &Tensor, i: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(hidden.cols() + context.cols());
    z.extend_from_slice(hidden.row(i));
    z.extend_from_slice(context.row(i));
    z
}

pub fn regressor_forward(p: &RegressorParams, hidden: &Tensor, context: &Tensor, len: usize) -> RegressorTrace {
    let rh = p.w1.cols();
    let mut pre_activation = Tensor::zeros(&[len, rh]);
    let mut output = Vec::with_capacity(len);
    for i in 0..len {
        let z = joint_input(hidden, context, i);
        let a = pre_activation.row_mut(i);
        a.copy_from_slice(p.b1.data());
        p.w1.matvec_t_add(0..z.len(), &z, a);
        let o: f64 = a
            .iter()
            .zip(p.w2.data())
            .map(|(&v, &w)| v.max(0.0) * w)
            .sum::<f64>()
            + p.b2.data()[0];
        output.push(sigmoid(o));
    }
    RegressorTrace {
        pre_activation,
        output,
    }
}

/// `d_output` is dLoss/dy per valid row. Gradients w.r.t. the hidden states
/// and context vectors are added into `d_hidden` and `d_context`.
#[allow(clippy::too_many_arguments)]
pub fn regressor_backward(
    p: &RegressorParams,
    grad: &mut RegressorParams,
    hidden: &Tensor,
    context: &Tensor,
    trace: &RegressorTrace,
    d_output: &[f64],
    d_hidden: &mut Tensor,
    d_context: &mut Tensor,
) {
    let rh = p.w1.cols();
    let dh = hidden.cols();
    let mut da = vec![0.0; rh];
    let mut dz = vec![0.0; p.w1.rows()];
    for (i, (&y, &dy)) in trace.output.iter().zip(d_output).enumerate() {
        let d_o = dy * y * (1.0 - y);
        if d_o == 0.0 {
            continue;
        }
        let a = trace.pre_activation.row(i);
        grad.b2.data_mut()[0] += d_o;
        for k in 0..rh {
            let u = a[k].max(0.0);
            grad.w2.data_mut()[k] += u * d_o;
            da[k] = if a[k] > 0.0 { p.w2.data()[k] * d_o } else { 0.0 };
        }
        for (b, d) in grad.b1.data_mut().iter_mut().zip(&da) {
            *b += d;
        }
        let z = joint_input(hidden, context, i);
        for (r, &zr) in z.iter().enumerate() {
            if zr != 0.0 {
                super::tensor::axpy(zr, &da, grad.w1.row_mut(r));
            }
        }
        dz.iter_mut().for_each(|v| *v = 0.0);
        p.w1.matvec_add(0..z.len(), &da, &mut dz);
        for (g, d) in d_hidden.row_mut(i).iter_mut().zip(&dz[..dh]) {
            *g += d;
        }
        for (g, d) in d_context.row_mut(i).iter_mut().zip(&dz[dh..]) {
            *g += d;
        }
    }
}
