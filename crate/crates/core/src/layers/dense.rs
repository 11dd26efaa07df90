//! Fully connected layer and softmax.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::{mat_vec_t, matmul_abt_acc, matmul_acc, matmul_atb_acc, outer_acc, vec_mat, Tensor};

pub fn fc_forward<S: Real>(input: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let out_dim = b.len();
    match input.shape() {
        [t, f] => {
            // time-distributed: each of the t rows maps f -> out
            let (t, f) = (*t, *f);
            let mut out = Tensor::zeros(vec![t, out_dim]);
            for row in 0..t {
                out.data_mut()[row * out_dim..(row + 1) * out_dim].copy_from_slice(b.data());
            }
            matmul_acc(out.data_mut(), input.data(), w.data(), t, f, out_dim);
            out
        }
        _ => {
            // rank-1 ordinary, rank-3 flattened
            let mut out = Tensor::zeros(vec![out_dim]);
            out.data_mut().copy_from_slice(b.data());
            vec_mat(input.data(), w.data(), out.data_mut());
            out
        }
    }
}

pub fn fc_backward<S: Real>(
    input: &Tensor<S>,
    w: &Tensor<S>,
    dout: &Tensor<S>,
) -> (Tensor<S>, Vec<Tensor<S>>) {
    let w_shape = w.shape().to_vec();
    let out_dim = w_shape[1];
    let mut dw = Tensor::zeros(w_shape);
    match input.shape() {
        [t, f] => {
            let (t, f) = (*t, *f);
            let mut dx = Tensor::zeros(vec![t, f]);
            let mut db = Tensor::zeros(vec![out_dim]);
            matmul_atb_acc(dw.data_mut(), input.data(), dout.data(), t, f, out_dim);
            matmul_abt_acc(dx.data_mut(), dout.data(), w.data(), t, out_dim, f);
            for row in 0..t {
                let dy = &dout.data()[row * out_dim..(row + 1) * out_dim];
                for (a, g) in db.data_mut().iter_mut().zip(dy.iter()) {
                    *a += *g;
                }
            }
            (dx, vec![dw, db])
        }
        _ => {
            let dy = dout.data();
            outer_acc(dw.data_mut(), input.data(), dy);
            let db = Tensor::new(vec![out_dim], dy.to_vec()).expect("dout shape");
            let mut dx = Tensor::zeros(input.shape().to_vec());
            mat_vec_t(w.data(), dy, dx.data_mut());
            (dx, vec![dw, db])
        }
    }
}

/// Numerically stable softmax over a rank-1 tensor.
pub fn softmax<S: Real>(input: &Tensor<S>) -> Tensor<S> {
    let mut max = input.data()[0];
    for &v in input.data() {
        max = max.maximum(v);
    }
    let mut out = input.map(|v| (v - max).exp());
    let mut sum = S::ZERO;
    for &v in out.data() {
        sum += v;
    }
    out.scale(S::ONE / sum);
    out
}

/// Softmax Jacobian-vector product: ds_i = s_i (g_i - sum_j g_j s_j).
pub fn softmax_backward<S: Real>(output: &Tensor<S>, dout: &Tensor<S>) -> Tensor<S> {
    let mut dot = S::ZERO;
    for (g, s) in dout.data().iter().zip(output.data().iter()) {
        dot += *g * *s;
    }
    let mut dx = output.clone();
    for (d, g) in dx.data_mut().iter_mut().zip(dout.data().iter()) {
        *d *= *g - dot;
    }
    dx
}
