//! Batched execution engine for sequence classifiers.
//!
//! Processes a batch of samples through the network at once so the
//! recurrent gate matrices are streamed once per time step for the whole
//! batch instead of once per sample. Sequence activations are time-major
//! `[T, B, F]` (each step's batch rows contiguous); vector activations are
//! `[B, F]`. Only the layer kinds the trace classifier uses are supported;
//! `train` falls back to the per-sample engine for anything else.
//!
//! The batched and per-sample engines produce mathematically identical
//! gradients up to float summation order; each network always trains on one
//! engine, so results stay bit-reproducible run to run.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::layers::LayerSpec;
use crate::network::{NetError, NetResult, Network};
use crate::rng::Rng;
use crate::tensor::{dot, matmul_abt_acc, matmul_acc, matmul_atb_acc, saxpy_into, Tensor};

/// Whether the batched engine can run this network.
pub fn batch_supported(net: &Network<f32>) -> bool {
    net.specs().iter().all(|s| {
        matches!(
            s,
            LayerSpec::Conv1d { .. }
                | LayerSpec::Conv2d { .. }
                | LayerSpec::MaxPool2d { .. }
                | LayerSpec::FullyConnected { .. }
                | LayerSpec::Bgru { .. }
                | LayerSpec::Relu
                | LayerSpec::Gelu
                | LayerSpec::Dropout { .. }
                | LayerSpec::Softmax
        )
    }) && matches!(net.specs().last(), Some(LayerSpec::Softmax))
        && matches!(net.input_shape().len(), 2 | 3)
}

/// Batched activation: `Seq` is time-major [t, b, f], `Vect` is [b, f],
/// `Image` is sample-major [b, c, h, w].
#[derive(Clone, Debug)]
enum Act {
    Seq { t: usize, b: usize, f: usize, data: Vec<f32> },
    Vect { b: usize, f: usize, data: Vec<f32> },
    Image { b: usize, c: usize, h: usize, w: usize, data: Vec<f32> },
}

impl Act {
    fn data(&self) -> &[f32] {
        match self {
            Act::Seq { data, .. } | Act::Vect { data, .. } | Act::Image { data, .. } => data,
        }
    }

    fn data_mut(&mut self) -> &mut [f32] {
        match self {
            Act::Seq { data, .. } | Act::Vect { data, .. } | Act::Image { data, .. } => data,
        }
    }

    fn like_zeroed(&self) -> Act {
        match self {
            Act::Seq { t, b, f, data } => Act::Seq {
                t: *t,
                b: *b,
                f: *f,
                data: vec![0.0; data.len()],
            },
            Act::Vect { b, f, data } => Act::Vect {
                b: *b,
                f: *f,
                data: vec![0.0; data.len()],
            },
            Act::Image { b, c, h, w, data } => Act::Image {
                b: *b,
                c: *c,
                h: *h,
                w: *w,
                data: vec![0.0; data.len()],
            },
        }
    }

    /// rows x width view for the dense kernels; images flatten per sample
    fn rows_width(&self) -> (usize, usize) {
        match self {
            Act::Seq { t, b, f, .. } => (t * b, *f),
            Act::Vect { b, f, .. } => (*b, *f),
            Act::Image { b, c, h, w, .. } => (*b, c * h * w),
        }
    }
}

enum Cache {
    None,
    Dropout(Vec<f32>),
    Pool(Vec<u32>),
    Gru(Box<GruBatchCache>),
}

struct GruDirCache {
    /// all scan-indexed [s][b][h]
    r: Vec<f32>,
    z: Vec<f32>,
    n: Vec<f32>,
    hr: Vec<f32>,
    h: Vec<f32>,
}

struct GruBatchCache {
    fwd: GruDirCache,
    bwd: GruDirCache,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Gradient magnitudes this small are numerically meaningless; zeroing
/// them keeps every downstream product out of the denormal range, which
/// x86 handles via microcode at a ~100x slowdown.
#[inline]
fn flush_tiny(v: f32) -> f32 {
    if v.abs() < 1e-18 {
        0.0
    } else {
        v
    }
}

#[inline]
fn scan_time(s: usize, t_len: usize, reverse: bool) -> usize {
    if reverse {
        t_len - 1 - s
    } else {
        s
    }
}

struct GruDirParams<'a> {
    w: &'a [f32],
    u: &'a [f32],
    b: &'a [f32],
}

/// gates[b, lo..hi] += sum_k h[b, k] * u[k, lo..hi]; u rows are [3H] wide.
fn gate_gemm(gates: &mut [f32], h: &[f32], u: &[f32], bsz: usize, hidden: usize, lo: usize, hi: usize) {
    let h3 = 3 * hidden;
    for k in 0..hidden {
        let urow = &u[k * h3 + lo..k * h3 + hi];
        for b in 0..bsz {
            let hv = h[b * hidden + k];
            if hv != 0.0 {
                saxpy_into(&mut gates[b * h3 + lo..b * h3 + hi], hv, urow);
            }
        }
    }
}

fn gru_scan_batched(
    x: &Act,
    p: &GruDirParams<'_>,
    hidden: usize,
    reverse: bool,
    want_cache: bool,
) -> (Vec<f32>, GruDirCache) {
    let (t_len, bsz, in_dim) = match x {
        Act::Seq { t, b, f, .. } => (*t, *b, *f),
        _ => unreachable!("recurrent input is a sequence"),
    };
    let h3 = 3 * hidden;
    let cache_len = if want_cache { t_len * bsz * hidden } else { 0 };
    let mut cache = GruDirCache {
        r: vec![0.0; cache_len],
        z: vec![0.0; cache_len],
        n: vec![0.0; cache_len],
        hr: vec![0.0; cache_len],
        h: vec![0.0; cache_len],
    };

    // input-side pre-activations for every (t, b) row
    let mut gate_in = vec![0.0f32; t_len * bsz * h3];
    for row in 0..t_len * bsz {
        gate_in[row * h3..(row + 1) * h3].copy_from_slice(p.b);
    }
    matmul_acc(&mut gate_in, x.data(), p.w, t_len * bsz, in_dim, h3);

    // states aligned by time, [t][b][h]
    let mut states = vec![0.0f32; t_len * bsz * hidden];
    let mut h = vec![0.0f32; bsz * hidden];
    let mut gates = vec![0.0f32; bsz * h3];
    let mut hr = vec![0.0f32; bsz * hidden];

    for s in 0..t_len {
        let t = scan_time(s, t_len, reverse);
        gates.copy_from_slice(&gate_in[t * bsz * h3..(t + 1) * bsz * h3]);
        gate_gemm(&mut gates, &h, p.u, bsz, hidden, 0, 2 * hidden);
        for b in 0..bsz {
            let g = &mut gates[b * h3..(b + 1) * h3];
            for j in 0..hidden {
                g[j] = sigmoid(g[j]);
                g[hidden + j] = sigmoid(g[hidden + j]);
                hr[b * hidden + j] = g[j] * h[b * hidden + j];
            }
        }
        gate_gemm(&mut gates, &hr, p.u, bsz, hidden, 2 * hidden, h3);
        for b in 0..bsz {
            let g = &mut gates[b * h3..(b + 1) * h3];
            for j in 0..hidden {
                let n = g[2 * hidden + j].tanh();
                g[2 * hidden + j] = n;
                let z = g[hidden + j];
                let hv = &mut h[b * hidden + j];
                *hv = flush_tiny((1.0 - z) * n + z * *hv);
            }
        }
        states[t * bsz * hidden..(t + 1) * bsz * hidden].copy_from_slice(&h);
        if want_cache {
            let at = s * bsz * hidden;
            for b in 0..bsz {
                let g = &gates[b * h3..(b + 1) * h3];
                let o = at + b * hidden;
                cache.r[o..o + hidden].copy_from_slice(&g[..hidden]);
                cache.z[o..o + hidden].copy_from_slice(&g[hidden..2 * hidden]);
                cache.n[o..o + hidden].copy_from_slice(&g[2 * hidden..h3]);
            }
            cache.hr[at..at + bsz * hidden].copy_from_slice(&hr);
            cache.h[at..at + bsz * hidden].copy_from_slice(&h);
        }
    }
    (states, cache)
}

#[allow(clippy::too_many_arguments)]
fn gru_backward_batched(
    x: &Act,
    p: &GruDirParams<'_>,
    hidden: usize,
    reverse: bool,
    cache: &GruDirCache,
    dstate: &[f32],
    dx: &mut [f32],
    dw: &mut [f32],
    du: &mut [f32],
    db: &mut [f32],
) {
    let (t_len, bsz, in_dim) = match x {
        Act::Seq { t, b, f, .. } => (*t, *b, *f),
        _ => unreachable!(),
    };
    let h3 = 3 * hidden;
    let bh = bsz * hidden;
    let mut carry = vec![0.0f32; bh];
    let mut dhr = vec![0.0f32; bh];
    let zero_prev = vec![0.0f32; bh];
    let mut da_t = vec![0.0f32; t_len * bsz * h3];

    for s in (0..t_len).rev() {
        let t = scan_time(s, t_len, reverse);
        let at = s * bh;
        let r = &cache.r[at..at + bh];
        let z = &cache.z[at..at + bh];
        let n = &cache.n[at..at + bh];
        let h_prev: &[f32] = if s == 0 {
            &zero_prev
        } else {
            &cache.h[(s - 1) * bh..s * bh]
        };
        let da = &mut da_t[t * bsz * h3..(t + 1) * bsz * h3];

        for i in 0..bh {
            carry[i] += dstate[t * bh + i];
        }
        // candidate branch
        for b in 0..bsz {
            for j in 0..hidden {
                let i = b * hidden + j;
                let dn = carry[i] * (1.0 - z[i]);
                da[b * h3 + 2 * hidden + j] = flush_tiny(dn * (1.0 - n[i] * n[i]));
            }
        }
        // dhr = U_n da_n
        for k in 0..hidden {
            let urow = &p.u[k * h3 + 2 * hidden..(k + 1) * h3];
            for b in 0..bsz {
                dhr[b * hidden + k] = dot(urow, &da[b * h3 + 2 * hidden..(b + 1) * h3]);
            }
        }
        // gate branches
        for b in 0..bsz {
            for j in 0..hidden {
                let i = b * hidden + j;
                let dz = carry[i] * (h_prev[i] - n[i]);
                da[b * h3 + hidden + j] = flush_tiny(dz * z[i] * (1.0 - z[i]));
                let dr = dhr[i] * h_prev[i];
                da[b * h3 + j] = flush_tiny(dr * r[i] * (1.0 - r[i]));
            }
        }
        // dh_prev = z . dh + r . dhr + U_rz [da_r; da_z]
        for i in 0..bh {
            carry[i] = carry[i] * z[i] + dhr[i] * r[i];
        }
        for k in 0..hidden {
            let urow = &p.u[k * h3..k * h3 + 2 * hidden];
            for b in 0..bsz {
                let i = b * hidden + k;
                carry[i] = flush_tiny(carry[i] + dot(urow, &da[b * h3..b * h3 + 2 * hidden]));
            }
        }
    }

    // batched parameter and input gradients over all (t, b) rows
    matmul_atb_acc(dw, x.data(), &da_t, t_len * bsz, in_dim, h3);
    matmul_abt_acc(dx, &da_t, p.w, t_len * bsz, h3, in_dim);
    for row in 0..t_len * bsz {
        let da = &da_t[row * h3..(row + 1) * h3];
        for (o, g) in db.iter_mut().zip(da.iter()) {
            *o += *g;
        }
    }
    // recurrent weight grads accumulate in scan order
    for s in 0..t_len {
        let t = scan_time(s, t_len, reverse);
        let da = &da_t[t * bsz * h3..(t + 1) * bsz * h3];
        let h_prev: &[f32] = if s == 0 {
            &zero_prev
        } else {
            &cache.h[(s - 1) * bh..s * bh]
        };
        let hr = &cache.hr[s * bh..(s + 1) * bh];
        for k in 0..hidden {
            let (lo, hi) = (k * h3, k * h3 + 2 * hidden);
            let urow = &mut du[lo..hi];
            for b in 0..bsz {
                let hv = h_prev[b * hidden + k];
                if hv != 0.0 {
                    saxpy_into(urow, hv, &da[b * h3..b * h3 + 2 * hidden]);
                }
            }
        }
        for k in 0..hidden {
            let (lo, hi) = (k * h3 + 2 * hidden, (k + 1) * h3);
            let urow = &mut du[lo..hi];
            for b in 0..bsz {
                let hv = hr[b * hidden + k];
                if hv != 0.0 {
                    saxpy_into(urow, hv, &da[b * h3 + 2 * hidden..(b + 1) * h3]);
                }
            }
        }
    }
}

struct BatchTape {
    acts: Vec<Act>,
    caches: Vec<Cache>,
}

fn forward_batched(
    net: &Network<f32>,
    inputs: &[&Tensor<f32>],
    want_cache: bool,
    dropout: Option<(u64, u64)>,
) -> NetResult<BatchTape> {
    let bsz = inputs.len();
    let in_shape = net.input_shape();
    for x in inputs {
        if x.shape() != in_shape {
            return Err(NetError::InputShape {
                expected: in_shape.to_vec(),
                got: x.shape().to_vec(),
            });
        }
    }
    // the stacked input stays per-sample; conv layers read it directly
    let mut acts: Vec<Act> = Vec::with_capacity(net.num_layers() + 1);
    let mut caches: Vec<Cache> = Vec::with_capacity(net.num_layers());
    if in_shape.len() == 3 {
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let mut data = vec![0.0f32; bsz * c * h * w];
        for (b, x) in inputs.iter().enumerate() {
            data[b * c * h * w..(b + 1) * c * h * w].copy_from_slice(x.data());
        }
        acts.push(Act::Image { b: bsz, c, h, w, data });
    } else {
        let (c, t) = (in_shape[0], in_shape[1]);
        let mut data = vec![0.0f32; bsz * c * t];
        for (b, x) in inputs.iter().enumerate() {
            data[b * c * t..(b + 1) * c * t].copy_from_slice(x.data());
        }
        // stored [b][c][t]; only conv1d consumes this layout
        acts.push(Act::Vect { b: bsz, f: c * t, data });
    }

    for (li, spec) in net.specs().iter().enumerate() {
        let params = &net.params()[li];
        let prev = acts.last().unwrap();
        let (out, cache) = match *spec {
            LayerSpec::Conv1d { out_channels, kernel } => {
                let (c, t_in) = (in_shape[0], in_shape[1]);
                let ot = t_in - kernel + 1;
                let w = params[0].data();
                let bias = params[1].data();
                let xin = prev.data();
                let mut data = vec![0.0f32; ot * bsz * out_channels];
                for pos in 0..ot {
                    for b in 0..bsz {
                        let row = &mut data[(pos * bsz + b) * out_channels
                            ..(pos * bsz + b + 1) * out_channels];
                        row.copy_from_slice(bias);
                    }
                }
                for f in 0..out_channels {
                    for ci in 0..c {
                        for i in 0..kernel {
                            let wv = w[(f * c + ci) * kernel + i];
                            if wv == 0.0 {
                                continue;
                            }
                            for b in 0..bsz {
                                let xrow = &xin[b * c * t_in + ci * t_in + i
                                    ..b * c * t_in + ci * t_in + i + ot];
                                for pos in 0..ot {
                                    data[(pos * bsz + b) * out_channels + f] += wv * xrow[pos];
                                }
                            }
                        }
                    }
                }
                (
                    Act::Seq { t: ot, b: bsz, f: out_channels, data },
                    Cache::None,
                )
            }
            LayerSpec::Conv2d { out_channels, kernel } => {
                let (c, h, w) = match prev {
                    Act::Image { c, h, w, .. } => (*c, *h, *w),
                    _ => return Err(NetError::Other("conv2d needs an image input".into())),
                };
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                let wt = params[0].data();
                let bias = params[1].data();
                let xin = prev.data();
                let mut data = vec![0.0f32; bsz * out_channels * oh * ow];
                for b in 0..bsz {
                    let xoff = b * c * h * w;
                    for f in 0..out_channels {
                        let plane =
                            &mut data[(b * out_channels + f) * oh * ow..(b * out_channels + f + 1) * oh * ow];
                        for v in plane.iter_mut() {
                            *v = bias[f];
                        }
                        for ci in 0..c {
                            for i in 0..kernel {
                                for j in 0..kernel {
                                    let wv = wt[((f * c + ci) * kernel + i) * kernel + j];
                                    if wv == 0.0 {
                                        continue;
                                    }
                                    for y in 0..oh {
                                        let xrow = &xin[xoff + (ci * h + y + i) * w + j
                                            ..xoff + (ci * h + y + i) * w + j + ow];
                                        crate::tensor::saxpy_into(
                                            &mut plane[y * ow..(y + 1) * ow],
                                            wv,
                                            xrow,
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
                (
                    Act::Image { b: bsz, c: out_channels, h: oh, w: ow, data },
                    Cache::None,
                )
            }
            LayerSpec::MaxPool2d { kernel } => {
                let (c, h, w) = match prev {
                    Act::Image { c, h, w, .. } => (*c, *h, *w),
                    _ => return Err(NetError::Other("maxpool2d needs an image input".into())),
                };
                let (oh, ow) = (h / kernel, w / kernel);
                let xin = prev.data();
                let mut data = vec![0.0f32; bsz * c * oh * ow];
                let mut idx = vec![0u32; bsz * c * oh * ow];
                for b in 0..bsz {
                    let xoff = b * c * h * w;
                    for ci in 0..c {
                        for y in 0..oh {
                            for x in 0..ow {
                                let mut best_at = xoff + (ci * h + y * kernel) * w + x * kernel;
                                let mut best = xin[best_at];
                                for i in 0..kernel {
                                    for j in 0..kernel {
                                        let at = xoff + (ci * h + y * kernel + i) * w + x * kernel + j;
                                        if xin[at] > best {
                                            best = xin[at];
                                            best_at = at;
                                        }
                                    }
                                }
                                let o = ((b * c + ci) * oh + y) * ow + x;
                                data[o] = best;
                                idx[o] = best_at as u32;
                            }
                        }
                    }
                }
                (
                    Act::Image { b: bsz, c, h: oh, w: ow, data },
                    if want_cache { Cache::Pool(idx) } else { Cache::None },
                )
            }
            LayerSpec::FullyConnected { out } => {
                let (rows, width) = prev.rows_width();
                let w = params[0].data();
                let bias = params[1].data();
                let mut data = vec![0.0f32; rows * out];
                for r in 0..rows {
                    data[r * out..(r + 1) * out].copy_from_slice(bias);
                }
                matmul_acc(&mut data, prev.data(), w, rows, width, out);
                let out_act = match prev {
                    Act::Seq { t, b, .. } => Act::Seq { t: *t, b: *b, f: out, data },
                    Act::Vect { b, .. } | Act::Image { b, .. } => Act::Vect { b: *b, f: out, data },
                };
                (out_act, Cache::None)
            }
            LayerSpec::Bgru { hidden, keep_sequence } => {
                let (t_len, _) = match prev {
                    Act::Seq { t, b, .. } => (*t, *b),
                    _ => {
                        return Err(NetError::Other(
                            "recurrent layer needs a sequence input".into(),
                        ))
                    }
                };
                let fwd_p = GruDirParams {
                    w: params[0].data(),
                    u: params[1].data(),
                    b: params[2].data(),
                };
                let bwd_p = GruDirParams {
                    w: params[3].data(),
                    u: params[4].data(),
                    b: params[5].data(),
                };
                let (fs, fc) = gru_scan_batched(prev, &fwd_p, hidden, false, want_cache);
                let (bs, bc) = gru_scan_batched(prev, &bwd_p, hidden, true, want_cache);
                let bh = bsz * hidden;
                let out_act = if keep_sequence {
                    let mut data = vec![0.0f32; t_len * bsz * 2 * hidden];
                    for t in 0..t_len {
                        for b in 0..bsz {
                            let o = (t * bsz + b) * 2 * hidden;
                            data[o..o + hidden]
                                .copy_from_slice(&fs[t * bh + b * hidden..t * bh + (b + 1) * hidden]);
                            data[o + hidden..o + 2 * hidden]
                                .copy_from_slice(&bs[t * bh + b * hidden..t * bh + (b + 1) * hidden]);
                        }
                    }
                    Act::Seq { t: t_len, b: bsz, f: 2 * hidden, data }
                } else {
                    // sequence collapse: per-direction time means
                    let mut data = vec![0.0f32; bsz * 2 * hidden];
                    let inv = 1.0 / t_len as f32;
                    for t in 0..t_len {
                        for b in 0..bsz {
                            let o = b * 2 * hidden;
                            for j in 0..hidden {
                                data[o + j] += fs[t * bh + b * hidden + j] * inv;
                                data[o + hidden + j] += bs[t * bh + b * hidden + j] * inv;
                            }
                        }
                    }
                    Act::Vect { b: bsz, f: 2 * hidden, data }
                };
                let cache = if want_cache {
                    Cache::Gru(Box::new(GruBatchCache { fwd: fc, bwd: bc }))
                } else {
                    Cache::None
                };
                (out_act, cache)
            }
            LayerSpec::Relu => {
                let mut out = prev.like_zeroed();
                for (o, &v) in out.data_mut().iter_mut().zip(prev.data().iter()) {
                    *o = v.max(0.0);
                }
                (out, Cache::None)
            }
            LayerSpec::Gelu => {
                let mut out = prev.like_zeroed();
                for (o, &v) in out.data_mut().iter_mut().zip(prev.data().iter()) {
                    *o = v * crate::scalar::gauss_cdf(v);
                }
                (out, Cache::None)
            }
            LayerSpec::Dropout { rate } => match dropout {
                Some((seed, counter_base)) if rate > 0.0 => {
                    let keep = 1.0 - rate;
                    let inv = (1.0 / keep) as f32;
                    let per = prev.data().len() / bsz;
                    let mut mask = vec![0.0f32; prev.data().len()];
                    for b in 0..bsz {
                        let mut rng = Rng::derive(seed, counter_base + b as u64);
                        match prev {
                            // per-sample element order matches the
                            // per-sample engine: these rows are contiguous
                            Act::Vect { .. } | Act::Image { .. } => {
                                for m in mask[b * per..(b + 1) * per].iter_mut() {
                                    *m = if rng.bernoulli(keep) { inv } else { 0.0 };
                                }
                            }
                            Act::Seq { t, b: bb, f, .. } => {
                                for ti in 0..*t {
                                    let o = (ti * bb + b) * f;
                                    for m in mask[o..o + f].iter_mut() {
                                        *m = if rng.bernoulli(keep) { inv } else { 0.0 };
                                    }
                                }
                            }
                        }
                    }
                    let mut out = prev.like_zeroed();
                    for ((o, &v), &m) in out
                        .data_mut()
                        .iter_mut()
                        .zip(prev.data().iter())
                        .zip(mask.iter())
                    {
                        *o = v * m;
                    }
                    (out, if want_cache { Cache::Dropout(mask) } else { Cache::None })
                }
                _ => (prev.clone(), Cache::None),
            },
            LayerSpec::Softmax => {
                let (b, f) = match prev {
                    Act::Vect { b, f, .. } => (*b, *f),
                    _ => return Err(NetError::Other("softmax on a sequence".into())),
                };
                let mut out = prev.clone();
                for row in 0..b {
                    let r = &mut out.data_mut()[row * f..(row + 1) * f];
                    let mut max = f32::NEG_INFINITY;
                    for &v in r.iter() {
                        max = max.max(v);
                    }
                    let mut sum = 0.0;
                    for v in r.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in r.iter_mut() {
                        *v /= sum;
                    }
                }
                (out, Cache::None)
            }
        };
        for &v in out.data() {
            if !v.is_finite() {
                return Err(NetError::NonFinite { layer: li });
            }
        }
        acts.push(out);
        caches.push(cache);
    }
    Ok(BatchTape { acts, caches })
}

/// Loss sum, hit count, and parameter gradients summed over the batch;
/// cross-entropy is fused at the logits.
pub struct BatchOutcome {
    pub loss_sum: f64,
    pub hits: usize,
    pub grads: Vec<Vec<Tensor<f32>>>,
}

pub fn forward_backward_batch(
    net: &Network<f32>,
    inputs: &[&Tensor<f32>],
    labels: &[usize],
    dropout_seed: u64,
    counter_base: u64,
) -> NetResult<BatchOutcome> {
    debug_assert_eq!(inputs.len(), labels.len());
    let bsz = inputs.len();
    let logits_layer = net.logits_layer()?;
    let tape = forward_batched(net, inputs, true, Some((dropout_seed, counter_base)))?;

    // probabilities and the fused logit gradient
    let probs = tape.acts.last().unwrap();
    let (_, arity) = probs.rows_width();
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    let mut grad = probs.clone();
    {
        let g = grad.data_mut();
        for b in 0..bsz {
            let row = &mut g[b * arity..(b + 1) * arity];
            let label = labels[b];
            let p = row[label].max(1e-12);
            loss_sum += -(p as f64).ln();
            let mut best = 0;
            for j in 1..arity {
                if row[j] > row[best] {
                    best = j;
                }
            }
            hits += usize::from(best == label);
            row[label] -= 1.0;
        }
    }

    let mut param_grads: Vec<Vec<Tensor<f32>>> = net
        .params()
        .iter()
        .map(|ts| ts.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect())
        .collect();

    let mut current = grad;
    for li in (0..=logits_layer).rev() {
        let spec = &net.specs()[li];
        let params = &net.params()[li];
        let prev = &tape.acts[li];
        let out = &tape.acts[li + 1];
        let next = match *spec {
            LayerSpec::FullyConnected { out: width } => {
                let (rows, in_w) = prev.rows_width();
                let g = param_grads[li].as_mut_slice();
                matmul_atb_acc(g[0].data_mut(), prev.data(), current.data(), rows, in_w, width);
                for r in 0..rows {
                    let dy = &current.data()[r * width..(r + 1) * width];
                    for (o, gg) in g[1].data_mut().iter_mut().zip(dy.iter()) {
                        *o += *gg;
                    }
                }
                let mut dx = prev.like_zeroed();
                matmul_abt_acc(dx.data_mut(), current.data(), params[0].data(), rows, width, in_w);
                dx
            }
            LayerSpec::Bgru { hidden, keep_sequence } => {
                let cache = match &tape.caches[li] {
                    Cache::Gru(c) => c,
                    _ => unreachable!("bgru cache recorded in forward"),
                };
                let (t_len, _) = match prev {
                    Act::Seq { t, b, .. } => (*t, *b),
                    _ => unreachable!(),
                };
                let bh = bsz * hidden;
                let mut dstate_fwd = vec![0.0f32; t_len * bh];
                let mut dstate_bwd = vec![0.0f32; t_len * bh];
                if keep_sequence {
                    let g = current.data();
                    for t in 0..t_len {
                        for b in 0..bsz {
                            let src = (t * bsz + b) * 2 * hidden;
                            let dst = t * bh + b * hidden;
                            dstate_fwd[dst..dst + hidden]
                                .copy_from_slice(&g[src..src + hidden]);
                            dstate_bwd[dst..dst + hidden]
                                .copy_from_slice(&g[src + hidden..src + 2 * hidden]);
                        }
                    }
                } else {
                    let g = current.data();
                    let inv = 1.0 / t_len as f32;
                    for t in 0..t_len {
                        for b in 0..bsz {
                            let src = b * 2 * hidden;
                            let dst = t * bh + b * hidden;
                            for j in 0..hidden {
                                dstate_fwd[dst + j] = g[src + j] * inv;
                                dstate_bwd[dst + j] = g[src + hidden + j] * inv;
                            }
                        }
                    }
                }
                let mut dx = prev.like_zeroed();
                let g = param_grads[li].as_mut_slice();
                let (gf, gb) = g.split_at_mut(3);
                let fwd_p = GruDirParams {
                    w: params[0].data(),
                    u: params[1].data(),
                    b: params[2].data(),
                };
                {
                    let (dw, rest) = gf.split_at_mut(1);
                    let (du, db) = rest.split_at_mut(1);
                    gru_backward_batched(
                        prev, &fwd_p, hidden, false, &cache.fwd, &dstate_fwd,
                        dx.data_mut(), dw[0].data_mut(), du[0].data_mut(), db[0].data_mut(),
                    );
                }
                let bwd_p = GruDirParams {
                    w: params[3].data(),
                    u: params[4].data(),
                    b: params[5].data(),
                };
                {
                    let (dw, rest) = gb.split_at_mut(1);
                    let (du, db) = rest.split_at_mut(1);
                    gru_backward_batched(
                        prev, &bwd_p, hidden, true, &cache.bwd, &dstate_bwd,
                        dx.data_mut(), dw[0].data_mut(), du[0].data_mut(), db[0].data_mut(),
                    );
                }
                dx
            }
            LayerSpec::Conv2d { out_channels, kernel } => {
                let (c, h, w) = match prev {
                    Act::Image { c, h, w, .. } => (*c, *h, *w),
                    _ => unreachable!("validated in forward"),
                };
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                let wt = params[0].data();
                let xin = prev.data();
                let dy = current.data();
                let g = param_grads[li].as_mut_slice();
                let mut dx = prev.like_zeroed();
                for b in 0..bsz {
                    let xoff = b * c * h * w;
                    for f in 0..out_channels {
                        let dplane = &dy[(b * out_channels + f) * oh * ow
                            ..(b * out_channels + f + 1) * oh * ow];
                        let mut bsum = 0.0f32;
                        for &gv in dplane {
                            bsum += gv;
                        }
                        g[1].data_mut()[f] += bsum;
                        for ci in 0..c {
                            for i in 0..kernel {
                                for j in 0..kernel {
                                    let widx = ((f * c + ci) * kernel + i) * kernel + j;
                                    let wv = wt[widx];
                                    let mut wsum = 0.0f32;
                                    for y in 0..oh {
                                        let xrow = &xin[xoff + (ci * h + y + i) * w + j
                                            ..xoff + (ci * h + y + i) * w + j + ow];
                                        let drow = &dplane[y * ow..(y + 1) * ow];
                                        wsum += crate::tensor::dot(xrow, drow);
                                        if wv != 0.0 {
                                            let dxrow = &mut dx.data_mut()[xoff
                                                + (ci * h + y + i) * w
                                                + j
                                                ..xoff + (ci * h + y + i) * w + j + ow];
                                            crate::tensor::saxpy_into(dxrow, wv, drow);
                                        }
                                    }
                                    g[0].data_mut()[widx] += wsum;
                                }
                            }
                        }
                    }
                }
                dx
            }
            LayerSpec::MaxPool2d { .. } => {
                let idx = match &tape.caches[li] {
                    Cache::Pool(idx) => idx,
                    _ => unreachable!("pool cache recorded in forward"),
                };
                let mut dx = prev.like_zeroed();
                for (o, &at) in current.data().iter().zip(idx.iter()) {
                    dx.data_mut()[at as usize] += *o;
                }
                dx
            }
            LayerSpec::Conv1d { out_channels, kernel } => {
                let (c, t_in) = (net.input_shape()[0], net.input_shape()[1]);
                let ot = t_in - kernel + 1;
                let w = params[0].data();
                let xin = prev.data();
                let dy = current.data();
                let g = param_grads[li].as_mut_slice();
                let mut dx = prev.like_zeroed();
                for f in 0..out_channels {
                    let mut bsum = 0.0f32;
                    for pos in 0..ot {
                        for b in 0..bsz {
                            bsum += dy[(pos * bsz + b) * out_channels + f];
                        }
                    }
                    g[1].data_mut()[f] = bsum;
                    for ci in 0..c {
                        for i in 0..kernel {
                            let widx = (f * c + ci) * kernel + i;
                            let wv = w[widx];
                            let mut wsum = 0.0f32;
                            for b in 0..bsz {
                                let xrow = &xin[b * c * t_in + ci * t_in + i
                                    ..b * c * t_in + ci * t_in + i + ot];
                                let dxrow = &mut dx.data_mut()[b * c * t_in + ci * t_in + i
                                    ..b * c * t_in + ci * t_in + i + ot];
                                for pos in 0..ot {
                                    let gv = dy[(pos * bsz + b) * out_channels + f];
                                    wsum += xrow[pos] * gv;
                                    if wv != 0.0 {
                                        dxrow[pos] += wv * gv;
                                    }
                                }
                            }
                            g[0].data_mut()[widx] += wsum;
                        }
                    }
                }
                dx
            }
            LayerSpec::Relu => {
                let mut dx = current.clone();
                for (d, &x) in dx.data_mut().iter_mut().zip(prev.data().iter()) {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                }
                dx
            }
            LayerSpec::Gelu => {
                let mut dx = current.clone();
                for (d, &x) in dx.data_mut().iter_mut().zip(prev.data().iter()) {
                    *d *= crate::scalar::gauss_cdf(x) + x * crate::scalar::gauss_pdf(x);
                }
                dx
            }
            LayerSpec::Dropout { .. } => {
                let mut dx = current.clone();
                if let Cache::Dropout(mask) = &tape.caches[li] {
                    for (d, &m) in dx.data_mut().iter_mut().zip(mask.iter()) {
                        *d *= m;
                    }
                }
                dx
            }
            LayerSpec::Softmax => {
                // unreachable in the fused path (we start below the softmax)
                let _ = out;
                current.clone()
            }
        };
        current = next;
    }

    Ok(BatchOutcome {
        loss_sum,
        hits,
        grads: param_grads,
    })
}

/// Inference-mode batched forward; returns the output rows [b, arity].
pub fn infer_batch(net: &Network<f32>, inputs: &[&Tensor<f32>]) -> NetResult<Vec<Vec<f32>>> {
    let tape = forward_batched(net, inputs, false, None)?;
    let probs = tape.acts.last().unwrap();
    let (rows, width) = probs.rows_width();
    Ok((0..rows)
        .map(|r| probs.data()[r * width..(r + 1) * width].to_vec())
        .collect())
}
