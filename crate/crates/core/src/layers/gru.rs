//! Bidirectional GRU over time-major sequences.
//!
//! Standard gating (reset r, update z, candidate n):
//!
//! ```text
//! r = sigmoid(W_r x + U_r h + b_r)
//! z = sigmoid(W_z x + U_z h + b_z)
//! n = tanh(W_n x + U_n (r . h) + b_n)
//! h' = (1 - z) . n + z . h
//! ```
//!
//! The two directions have independent parameters; their states are
//! concatenated per time step (`keep_sequence`) or collapsed to the
//! concatenated time-means of the two directions (classifier head — the
//! mean keeps every step on the gradient path, where a final-state readout
//! starves early steps through 250 gate attenuations). Gate matrices are
//! stored `[fan_in, 3H]` with column blocks reset | update | candidate.
//!
//! Input-side products are batched over the whole sequence as blocked
//! GEMMs; only the recurrent products run per step. Recurrent values and
//! gradients below 1e-18 flush to zero: after two hundred steps of gate
//! attenuation they are numerically meaningless, and keeping them alive
//! drags the backward pass through denormal arithmetic.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::{dot, matmul_abt_acc, matmul_acc, matmul_atb_acc, saxpy_into, Tensor};

#[derive(Clone, Debug)]
pub struct DirCache<S> {
    /// all [T*H], indexed by scan position
    pub r: Vec<S>,
    pub z: Vec<S>,
    pub n: Vec<S>,
    pub hr: Vec<S>,
    pub h: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct GruCache<S> {
    pub fwd: DirCache<S>,
    pub bwd: DirCache<S>,
}

#[inline]
fn sigmoid<S: Real>(x: S) -> S {
    S::ONE / (S::ONE + (-x).exp())
}

#[inline]
fn flush_tiny<S: Real>(v: S) -> S {
    if v.abs() < S::from_f64(1e-18) {
        S::ZERO
    } else {
        v
    }
}

/// time index visited at scan position s
#[inline]
fn scan_time(s: usize, t_len: usize, reverse: bool) -> usize {
    if reverse {
        t_len - 1 - s
    } else {
        s
    }
}

struct DirParams<'a, S> {
    w: &'a [S],
    u: &'a [S],
    b: &'a [S],
}

fn scan_direction<S: Real>(
    x: &Tensor<S>,
    p: &DirParams<'_, S>,
    hidden: usize,
    reverse: bool,
    want_cache: bool,
) -> (Vec<S>, DirCache<S>) {
    let (t_len, in_dim) = (x.shape()[0], x.shape()[1]);
    let h3 = 3 * hidden;
    let cache_len = if want_cache { t_len * hidden } else { 0 };
    let mut cache = DirCache {
        r: vec![S::ZERO; cache_len],
        z: vec![S::ZERO; cache_len],
        n: vec![S::ZERO; cache_len],
        hr: vec![S::ZERO; cache_len],
        h: vec![S::ZERO; cache_len],
    };

    // input-side gate pre-activations for every step: b + x W
    let mut gate_in = vec![S::ZERO; t_len * h3];
    for t in 0..t_len {
        gate_in[t * h3..(t + 1) * h3].copy_from_slice(p.b);
    }
    matmul_acc(&mut gate_in, x.data(), p.w, t_len, in_dim, h3);

    // states aligned by time index, [T*H]
    let mut states = vec![S::ZERO; t_len * hidden];
    let mut h = vec![S::ZERO; hidden];
    let mut gates = vec![S::ZERO; h3];
    let mut hr = vec![S::ZERO; hidden];

    for s in 0..t_len {
        let t = scan_time(s, t_len, reverse);
        gates.copy_from_slice(&gate_in[t * h3..(t + 1) * h3]);
        // reset/update depend on the previous state
        for (k, &hv) in h.iter().enumerate() {
            if hv != S::ZERO {
                saxpy_into(&mut gates[..2 * hidden], hv, &p.u[k * h3..k * h3 + 2 * hidden]);
            }
        }
        for j in 0..hidden {
            gates[j] = sigmoid(gates[j]);
            gates[hidden + j] = sigmoid(gates[hidden + j]);
            hr[j] = gates[j] * h[j];
        }
        // candidate sees the reset-gated state
        for (k, &hv) in hr.iter().enumerate() {
            if hv != S::ZERO {
                saxpy_into(
                    &mut gates[2 * hidden..h3],
                    hv,
                    &p.u[k * h3 + 2 * hidden..(k + 1) * h3],
                );
            }
        }
        for j in 0..hidden {
            let n = gates[2 * hidden + j].tanh();
            gates[2 * hidden + j] = n;
            let z = gates[hidden + j];
            h[j] = flush_tiny((S::ONE - z) * n + z * h[j]);
        }

        states[t * hidden..(t + 1) * hidden].copy_from_slice(&h);
        if want_cache {
            let at = s * hidden;
            cache.r[at..at + hidden].copy_from_slice(&gates[..hidden]);
            cache.z[at..at + hidden].copy_from_slice(&gates[hidden..2 * hidden]);
            cache.n[at..at + hidden].copy_from_slice(&gates[2 * hidden..h3]);
            cache.hr[at..at + hidden].copy_from_slice(&hr);
            cache.h[at..at + hidden].copy_from_slice(&h);
        }
    }
    (states, cache)
}

/// params: [w_fwd, u_fwd, b_fwd, w_bwd, u_bwd, b_bwd]
pub fn bgru_forward<S: Real>(
    input: &Tensor<S>,
    params: &[Tensor<S>],
    hidden: usize,
    keep_sequence: bool,
    want_cache: bool,
) -> (Tensor<S>, Option<GruCache<S>>) {
    let t_len = input.shape()[0];
    let fwd_p = DirParams {
        w: params[0].data(),
        u: params[1].data(),
        b: params[2].data(),
    };
    let bwd_p = DirParams {
        w: params[3].data(),
        u: params[4].data(),
        b: params[5].data(),
    };
    let (fwd_states, fwd_cache) = scan_direction(input, &fwd_p, hidden, false, want_cache);
    let (bwd_states, bwd_cache) = scan_direction(input, &bwd_p, hidden, true, want_cache);

    let output = if keep_sequence {
        let mut out = Tensor::zeros(vec![t_len, 2 * hidden]);
        let o = out.data_mut();
        for t in 0..t_len {
            o[t * 2 * hidden..t * 2 * hidden + hidden]
                .copy_from_slice(&fwd_states[t * hidden..(t + 1) * hidden]);
            o[t * 2 * hidden + hidden..(t + 1) * 2 * hidden]
                .copy_from_slice(&bwd_states[t * hidden..(t + 1) * hidden]);
        }
        out
    } else {
        // sequence collapse: time-mean of each direction's states
        let mut out = Tensor::zeros(vec![2 * hidden]);
        let o = out.data_mut();
        let inv = S::from_f64(1.0 / t_len as f64);
        for t in 0..t_len {
            for j in 0..hidden {
                o[j] += fwd_states[t * hidden + j] * inv;
                o[hidden + j] += bwd_states[t * hidden + j] * inv;
            }
        }
        out
    };
    let cache = want_cache.then_some(GruCache {
        fwd: fwd_cache,
        bwd: bwd_cache,
    });
    (output, cache)
}

#[allow(clippy::too_many_arguments)]
fn backward_direction<S: Real>(
    x: &Tensor<S>,
    p: &DirParams<'_, S>,
    hidden: usize,
    reverse: bool,
    cache: &DirCache<S>,
    // direct gradient on the state emitted at time t, [T*H] (zeros except
    // the last scan position in final-state mode)
    dstate: &[S],
    dx: &mut Tensor<S>,
    dw: &mut Tensor<S>,
    du: &mut Tensor<S>,
    db: &mut Tensor<S>,
) {
    let (t_len, in_dim) = (x.shape()[0], x.shape()[1]);
    let h3 = 3 * hidden;
    let mut carry = vec![S::ZERO; hidden];
    let mut dhr = vec![S::ZERO; hidden];
    let zero_prev = vec![S::ZERO; hidden];

    // gate-preactivation gradients for every step, indexed by time so the
    // batched weight/input products line up with x
    let mut da_t = vec![S::ZERO; t_len * h3];

    for s in (0..t_len).rev() {
        let t = scan_time(s, t_len, reverse);
        let at = s * hidden;
        let r = &cache.r[at..at + hidden];
        let z = &cache.z[at..at + hidden];
        let n = &cache.n[at..at + hidden];
        let h_prev: &[S] = if s == 0 {
            &zero_prev
        } else {
            &cache.h[(s - 1) * hidden..s * hidden]
        };
        let da = &mut da_t[t * h3..(t + 1) * h3];

        // total gradient on h_t
        for j in 0..hidden {
            carry[j] += dstate[t * hidden + j];
        }

        // candidate branch
        for j in 0..hidden {
            let dn = carry[j] * (S::ONE - z[j]);
            da[2 * hidden + j] = flush_tiny(dn * (S::ONE - n[j] * n[j]));
        }
        // dhr = U_n da_n
        for (k, o) in dhr.iter_mut().enumerate() {
            *o = dot(&p.u[k * h3 + 2 * hidden..(k + 1) * h3], &da[2 * hidden..h3]);
        }
        // gate branches
        for j in 0..hidden {
            let dz = carry[j] * (h_prev[j] - n[j]);
            da[hidden + j] = flush_tiny(dz * z[j] * (S::ONE - z[j]));
            let dr = dhr[j] * h_prev[j];
            da[j] = flush_tiny(dr * r[j] * (S::ONE - r[j]));
        }

        // dh_prev = z . dh + r . dhr + U_rz [da_r; da_z]
        for j in 0..hidden {
            carry[j] = carry[j] * z[j] + dhr[j] * r[j];
        }
        for (k, c) in carry.iter_mut().enumerate() {
            *c = flush_tiny(*c + dot(&p.u[k * h3..k * h3 + 2 * hidden], &da[..2 * hidden]));
        }
    }

    // batched parameter and input gradients
    // dW += x^T da, dx += da W^T, db += column sums
    matmul_atb_acc(dw.data_mut(), x.data(), &da_t, t_len, in_dim, h3);
    matmul_abt_acc(dx.data_mut(), &da_t, p.w, t_len, h3, in_dim);
    for t in 0..t_len {
        let da = &da_t[t * h3..(t + 1) * h3];
        for (o, g) in db.data_mut().iter_mut().zip(da.iter()) {
            *o += *g;
        }
    }
    // dU_rz += h_prev^T da_rz and dU_n += hr^T da_n, accumulated in scan
    // order (h_prev lives in the scan-indexed cache)
    let ud = du.data_mut();
    for s in 0..t_len {
        let t = scan_time(s, t_len, reverse);
        let da = &da_t[t * h3..(t + 1) * h3];
        let h_prev: &[S] = if s == 0 {
            &zero_prev
        } else {
            &cache.h[(s - 1) * hidden..s * hidden]
        };
        for (k, &hv) in h_prev.iter().enumerate() {
            if hv != S::ZERO {
                saxpy_into(&mut ud[k * h3..k * h3 + 2 * hidden], hv, &da[..2 * hidden]);
            }
        }
        let hr = &cache.hr[s * hidden..(s + 1) * hidden];
        for (k, &hv) in hr.iter().enumerate() {
            if hv != S::ZERO {
                saxpy_into(
                    &mut ud[k * h3 + 2 * hidden..(k + 1) * h3],
                    hv,
                    &da[2 * hidden..h3],
                );
            }
        }
    }
}

pub fn bgru_backward<S: Real>(
    input: &Tensor<S>,
    params: &[Tensor<S>],
    hidden: usize,
    keep_sequence: bool,
    cache: &GruCache<S>,
    dout: &Tensor<S>,
) -> (Tensor<S>, Vec<Tensor<S>>) {
    let t_len = input.shape()[0];

    // split the concatenated output gradient into per-direction, per-time
    // state gradients
    let mut dstate_fwd = vec![S::ZERO; t_len * hidden];
    let mut dstate_bwd = vec![S::ZERO; t_len * hidden];
    if keep_sequence {
        let g = dout.data();
        for t in 0..t_len {
            dstate_fwd[t * hidden..(t + 1) * hidden]
                .copy_from_slice(&g[t * 2 * hidden..t * 2 * hidden + hidden]);
            dstate_bwd[t * hidden..(t + 1) * hidden]
                .copy_from_slice(&g[t * 2 * hidden + hidden..(t + 1) * 2 * hidden]);
        }
    } else {
        // the time-mean spreads the collapsed gradient evenly over steps
        let g = dout.data();
        let inv = S::from_f64(1.0 / t_len as f64);
        for t in 0..t_len {
            for j in 0..hidden {
                dstate_fwd[t * hidden + j] = g[j] * inv;
                dstate_bwd[t * hidden + j] = g[hidden + j] * inv;
            }
        }
    }

    let mut dx = Tensor::zeros(input.shape().to_vec());
    let mut grads: Vec<Tensor<S>> =
        params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    let (fwd_grads, bwd_grads) = grads.split_at_mut(3);

    let fwd_p = DirParams {
        w: params[0].data(),
        u: params[1].data(),
        b: params[2].data(),
    };
    let (dw, rest) = fwd_grads.split_at_mut(1);
    let (du, db) = rest.split_at_mut(1);
    backward_direction(
        input, &fwd_p, hidden, false, &cache.fwd, &dstate_fwd, &mut dx, &mut dw[0], &mut du[0],
        &mut db[0],
    );

    let bwd_p = DirParams {
        w: params[3].data(),
        u: params[4].data(),
        b: params[5].data(),
    };
    let (dw, rest) = bwd_grads.split_at_mut(1);
    let (du, db) = rest.split_at_mut(1);
    backward_direction(
        input, &bwd_p, hidden, true, &cache.bwd, &dstate_bwd, &mut dx, &mut dw[0], &mut du[0],
        &mut db[0],
    );

    (dx, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{init_params, LayerSpec};
    use crate::rng::Rng;

    fn random_input(t: usize, f: usize, rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(vec![t, f], |_| rng.range_f64(-1.0, 1.0))
    }

    #[test]
    fn directional_symmetry_with_tied_parameters() {
        // with identical parameters in both directions, running the layer on
        // the reversed sequence makes the forward-direction states equal the
        // reversed backward-direction states of the original sequence
        let (t, f, h) = (7, 5, 4);
        let mut rng = Rng::seed_from(11);
        let spec = LayerSpec::Bgru { hidden: h, keep_sequence: true };
        let mut params: alloc::vec::Vec<Tensor<f64>> = init_params(&spec, &[t, f], &mut rng);
        for i in 0..3 {
            params[3 + i] = params[i].clone();
        }
        let x = random_input(t, f, &mut rng);
        let mut x_rev = Tensor::zeros(vec![t, f]);
        for i in 0..t {
            let src = &x.data()[(t - 1 - i) * f..(t - i) * f];
            x_rev.data_mut()[i * f..(i + 1) * f].copy_from_slice(src);
        }

        let (out, _) = bgru_forward(&x, &params, h, true, false);
        let (out_rev, _) = bgru_forward(&x_rev, &params, h, true, false);

        for i in 0..t {
            for j in 0..h {
                let fwd_on_rev = out_rev.data()[i * 2 * h + j];
                let bwd_on_orig = out.data()[(t - 1 - i) * 2 * h + h + j];
                assert!(
                    (fwd_on_rev - bwd_on_orig).abs() < 1e-12,
                    "t={i} j={j}: {fwd_on_rev} vs {bwd_on_orig}"
                );
            }
        }
    }

    #[test]
    fn collapse_is_time_mean_of_sequence() {
        let (t, f, h) = (6, 3, 5);
        let mut rng = Rng::seed_from(4);
        let spec = LayerSpec::Bgru { hidden: h, keep_sequence: true };
        let params: alloc::vec::Vec<Tensor<f64>> = init_params(&spec, &[t, f], &mut rng);
        let x = random_input(t, f, &mut rng);
        let (seq, _) = bgru_forward(&x, &params, h, true, false);
        let (fin, _) = bgru_forward(&x, &params, h, false, false);
        for j in 0..2 * h {
            let mean: f64 = (0..t).map(|ti| seq.data()[ti * 2 * h + j]).sum::<f64>() / t as f64;
            assert!((fin.data()[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn long_sequence_backward_stays_normal_range() {
        // 300-step final-state backward must not leave denormal debris
        let (t, f, h) = (300, 8, 8);
        let mut rng = Rng::seed_from(2);
        let spec = LayerSpec::Bgru { hidden: h, keep_sequence: false };
        let params: alloc::vec::Vec<Tensor<f32>> = init_params(&spec, &[t, f], &mut rng);
        let x = Tensor::from_fn(vec![t, f], |_| rng.next_f32());
        let (out, cache) = bgru_forward(&x, &params, h, false, true);
        let dout = Tensor::full(out.shape().to_vec(), 1.0f32);
        let (dx, grads) = bgru_backward(&x, &params, h, false, &cache.unwrap(), &dout);
        for v in dx.data().iter().chain(grads.iter().flat_map(|g| g.data())) {
            assert!(v.is_finite());
            assert!(*v == 0.0 || v.abs() >= 1e-36, "denormal leak: {v}");
        }
    }
}
