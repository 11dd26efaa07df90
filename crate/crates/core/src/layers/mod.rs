//! Layer kinds, parameter initialization, and per-layer forward/backward.
//!
//! Shape conventions:
//! - images are `[channels, height, width]`
//! - the input to `Conv1d` is `[channels, time]` (what trace preprocessing
//!   produces); `Conv1d` emits time-major `[time, features]` and every
//!   sequence layer after it (`FullyConnected` on rank 2, `Bgru`) stays
//!   time-major so feature vectors are contiguous
//! - `FullyConnected` flattens rank-3 input, maps rank-1 input ordinarily,
//!   and maps rank-2 `[time, features]` input per time step
//!
//! Parameterized layers store weights indexed by input dimension
//! (`[fan_in, fan_out]`) so the forward kernels run on contiguous rows.

mod conv;
mod dense;
mod gru;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::Rng;
use crate::scalar::{gauss_cdf, gauss_pdf, Real};
use crate::tensor::Tensor;

pub(crate) use gru::GruCache;

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d { out_channels: usize, kernel: usize },
    MaxPool2d { kernel: usize },
    Conv1d { out_channels: usize, kernel: usize },
    FullyConnected { out: usize },
    Relu,
    Gelu,
    Softmax,
    Bgru { hidden: usize, keep_sequence: bool },
    Dropout { rate: f64 },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Relu => "relu",
            LayerSpec::Gelu => "gelu",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Bgru { .. } => "bgru",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. }
                | LayerSpec::Conv1d { .. }
                | LayerSpec::FullyConnected { .. }
                | LayerSpec::Bgru { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerError {
    BadInput {
        layer: usize,
        kind: &'static str,
        detail: String,
    },
    BadSpec {
        layer: usize,
        kind: &'static str,
        detail: String,
    },
}

impl fmt::Display for LayerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerError::BadInput { layer, kind, detail } => {
                write!(f, "layer {layer} ({kind}): bad input: {detail}")
            }
            LayerError::BadSpec { layer, kind, detail } => {
                write!(f, "layer {layer} ({kind}): bad spec: {detail}")
            }
        }
    }
}

impl core::error::Error for LayerError {}

/// Output shape of a layer given its input shape, or why it is invalid.
pub fn output_shape(
    spec: &LayerSpec,
    layer: usize,
    input: &[usize],
) -> Result<Vec<usize>, LayerError> {
    let bad_input = |detail: String| LayerError::BadInput {
        layer,
        kind: spec.name(),
        detail,
    };
    let bad_spec = |detail: String| LayerError::BadSpec {
        layer,
        kind: spec.name(),
        detail,
    };
    match *spec {
        LayerSpec::Conv2d { out_channels, kernel } => {
            if kernel == 0 || out_channels == 0 {
                return Err(bad_spec(alloc::format!(
                    "kernel {kernel}, out_channels {out_channels}"
                )));
            }
            match input {
                [_, h, w] if *h >= kernel && *w >= kernel => {
                    Ok(vec![out_channels, h - kernel + 1, w - kernel + 1])
                }
                _ => Err(bad_input(alloc::format!(
                    "need [c, h>= {kernel}, w>={kernel}], got {input:?}"
                ))),
            }
        }
        LayerSpec::MaxPool2d { kernel } => {
            if kernel == 0 {
                return Err(bad_spec("kernel 0".into()));
            }
            match input {
                [c, h, w] if *h >= kernel && *w >= kernel => {
                    Ok(vec![*c, h / kernel, w / kernel])
                }
                _ => Err(bad_input(alloc::format!(
                    "need [c, h>={kernel}, w>={kernel}], got {input:?}"
                ))),
            }
        }
        LayerSpec::Conv1d { out_channels, kernel } => {
            if kernel == 0 || out_channels == 0 {
                return Err(bad_spec(alloc::format!(
                    "kernel {kernel}, out_channels {out_channels}"
                )));
            }
            match input {
                [_, t] if *t >= kernel => Ok(vec![t - kernel + 1, out_channels]),
                _ => Err(bad_input(alloc::format!(
                    "need [c, t>={kernel}], got {input:?}"
                ))),
            }
        }
        LayerSpec::FullyConnected { out } => {
            if out == 0 {
                return Err(bad_spec("out 0".into()));
            }
            match input {
                [_] | [_, _, _] => Ok(vec![out]),
                [t, _] => Ok(vec![*t, out]),
                _ => Err(bad_input(alloc::format!("rank {} input", input.len()))),
            }
        }
        LayerSpec::Relu | LayerSpec::Gelu | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        LayerSpec::Softmax => match input {
            [_] => Ok(input.to_vec()),
            _ => Err(bad_input("softmax expects a rank-1 input".into())),
        },
        LayerSpec::Bgru { hidden, keep_sequence } => {
            if hidden == 0 {
                return Err(bad_spec("hidden 0".into()));
            }
            match input {
                [t, _] => {
                    if keep_sequence {
                        Ok(vec![*t, 2 * hidden])
                    } else {
                        Ok(vec![2 * hidden])
                    }
                }
                _ => Err(bad_input(alloc::format!(
                    "need [time, features], got {input:?}"
                ))),
            }
        }
    }
}

fn uniform_fan_in<S: Real>(rng: &mut Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<S> {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    Tensor::from_fn(shape, |_| S::from_f64(rng.range_f64(-bound, bound)))
}

/// Allocate and initialize the parameter tensors for a layer.
///
/// Orders:
/// - conv: `[weight [out, in, k(, k)], bias [out]]`
/// - fully connected: `[weight [in, out], bias [out]]`
/// - bgru: `[w_fwd [in, 3h], u_fwd [h, 3h], b_fwd [3h], w_bwd, u_bwd, b_bwd]`
///   with gate columns ordered reset | update | candidate
pub fn init_params<S: Real>(
    spec: &LayerSpec,
    input: &[usize],
    rng: &mut Rng,
) -> Vec<Tensor<S>> {
    match *spec {
        LayerSpec::Conv2d { out_channels, kernel } => {
            let in_ch = input[0];
            let fan_in = in_ch * kernel * kernel;
            vec![
                uniform_fan_in(rng, vec![out_channels, in_ch, kernel, kernel], fan_in),
                Tensor::zeros(vec![out_channels]),
            ]
        }
        LayerSpec::Conv1d { out_channels, kernel } => {
            let in_ch = input[0];
            let fan_in = in_ch * kernel;
            vec![
                uniform_fan_in(rng, vec![out_channels, in_ch, kernel], fan_in),
                Tensor::zeros(vec![out_channels]),
            ]
        }
        LayerSpec::FullyConnected { out } => {
            let fan_in = match input {
                [n] => *n,
                [_, f] => *f,
                [c, h, w] => c * h * w,
                _ => unreachable!("validated by output_shape"),
            };
            vec![
                uniform_fan_in(rng, vec![fan_in, out], fan_in),
                Tensor::zeros(vec![out]),
            ]
        }
        LayerSpec::Bgru { hidden, .. } => {
            let input_dim = input[1];
            let mut params = Vec::with_capacity(6);
            for _ in 0..2 {
                params.push(uniform_fan_in(rng, vec![input_dim, 3 * hidden], input_dim));
                params.push(uniform_fan_in(rng, vec![hidden, 3 * hidden], hidden));
                params.push(Tensor::zeros(vec![3 * hidden]));
            }
            params
        }
        _ => Vec::new(),
    }
}

/// Per-layer state recorded during a taped forward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<S: Real> {
    None,
    /// flat argmax index per pooled output element
    Pool(Vec<u32>),
    /// inverted-dropout mask, already divided by the keep probability
    Dropout(Vec<S>),
    Gru(GruCache<S>),
}

pub(crate) struct ForwardOut<S: Real> {
    pub output: Tensor<S>,
    pub cache: LayerCache<S>,
}

/// Forward one layer. `train_rng` is `Some` only in training mode (dropout).
pub(crate) fn forward_layer<S: Real>(
    spec: &LayerSpec,
    params: &[Tensor<S>],
    input: &Tensor<S>,
    want_cache: bool,
    mut train_rng: Option<&mut Rng>,
) -> ForwardOut<S> {
    match *spec {
        LayerSpec::Conv2d { out_channels, kernel } => ForwardOut {
            output: conv::conv2d_forward(input, &params[0], &params[1], out_channels, kernel),
            cache: LayerCache::None,
        },
        LayerSpec::Conv1d { out_channels, kernel } => ForwardOut {
            output: conv::conv1d_forward(input, &params[0], &params[1], out_channels, kernel),
            cache: LayerCache::None,
        },
        LayerSpec::MaxPool2d { kernel } => {
            let (output, idx) = conv::maxpool2d_forward(input, kernel);
            ForwardOut {
                output,
                cache: if want_cache {
                    LayerCache::Pool(idx)
                } else {
                    LayerCache::None
                },
            }
        }
        LayerSpec::FullyConnected { .. } => ForwardOut {
            output: dense::fc_forward(input, &params[0], &params[1]),
            cache: LayerCache::None,
        },
        LayerSpec::Relu => ForwardOut {
            output: input.map(|v| v.maximum(S::ZERO)),
            cache: LayerCache::None,
        },
        LayerSpec::Gelu => ForwardOut {
            output: input.map(|v| v * gauss_cdf(v)),
            cache: LayerCache::None,
        },
        LayerSpec::Softmax => ForwardOut {
            output: dense::softmax(input),
            cache: LayerCache::None,
        },
        LayerSpec::Bgru { hidden, keep_sequence } => {
            let (output, cache) = gru::bgru_forward(input, params, hidden, keep_sequence, want_cache);
            ForwardOut {
                output,
                cache: match cache {
                    Some(c) => LayerCache::Gru(c),
                    None => LayerCache::None,
                },
            }
        }
        LayerSpec::Dropout { rate } => {
            match train_rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 - rate;
                    let inv = S::from_f64(1.0 / keep);
                    let mask: Vec<S> = (0..input.len())
                        .map(|_| if rng.bernoulli(keep) { inv } else { S::ZERO })
                        .collect();
                    let mut out = input.clone();
                    for (o, m) in out.data_mut().iter_mut().zip(mask.iter()) {
                        *o *= *m;
                    }
                    ForwardOut {
                        output: out,
                        cache: if want_cache {
                            LayerCache::Dropout(mask)
                        } else {
                            LayerCache::None
                        },
                    }
                }
                // rate 0 or inference: identity
                _ => ForwardOut {
                    output: input.clone(),
                    cache: LayerCache::None,
                },
            }
        }
    }
}

/// Backward one layer: given d(loss)/d(output), produce d(loss)/d(input) and
/// the parameter gradients (empty for parameterless layers; all-zero tensors
/// are still emitted for frozen shapes by the caller).
pub(crate) fn backward_layer<S: Real>(
    spec: &LayerSpec,
    params: &[Tensor<S>],
    input: &Tensor<S>,
    output: &Tensor<S>,
    cache: &LayerCache<S>,
    dout: &Tensor<S>,
) -> (Tensor<S>, Vec<Tensor<S>>) {
    match *spec {
        LayerSpec::Conv2d { out_channels, kernel } => {
            conv::conv2d_backward(input, &params[0], out_channels, kernel, dout)
        }
        LayerSpec::Conv1d { out_channels, kernel } => {
            conv::conv1d_backward(input, &params[0], out_channels, kernel, dout)
        }
        LayerSpec::MaxPool2d { .. } => {
            let idx = match cache {
                LayerCache::Pool(idx) => idx,
                _ => panic!("maxpool backward requires the pooling cache"),
            };
            (conv::maxpool2d_backward(input, idx, dout), Vec::new())
        }
        LayerSpec::FullyConnected { .. } => dense::fc_backward(input, &params[0], dout),
        LayerSpec::Relu => {
            let mut dx = dout.clone();
            for (d, x) in dx.data_mut().iter_mut().zip(input.data().iter()) {
                if *x <= S::ZERO {
                    *d = S::ZERO;
                }
            }
            (dx, Vec::new())
        }
        LayerSpec::Gelu => {
            // d/dx [x Phi(x)] = Phi(x) + x phi(x)
            let mut dx = dout.clone();
            for (d, x) in dx.data_mut().iter_mut().zip(input.data().iter()) {
                *d *= gauss_cdf(*x) + *x * gauss_pdf(*x);
            }
            (dx, Vec::new())
        }
        LayerSpec::Softmax => (dense::softmax_backward(output, dout), Vec::new()),
        LayerSpec::Bgru { hidden, keep_sequence } => {
            let c = match cache {
                LayerCache::Gru(c) => c,
                _ => panic!("bgru backward requires the recurrent cache"),
            };
            gru::bgru_backward(input, params, hidden, keep_sequence, c, dout)
        }
        LayerSpec::Dropout { .. } => {
            let mut dx = dout.clone();
            if let LayerCache::Dropout(mask) = cache {
                for (d, m) in dx.data_mut().iter_mut().zip(mask.iter()) {
                    *d *= *m;
                }
            }
            (dx, Vec::new())
        }
    }
}
