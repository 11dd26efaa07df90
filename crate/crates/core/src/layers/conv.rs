//! Valid (no padding), stride-1 convolutions and max pooling.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::{saxpy_into, Tensor};

/// input [c, h, w], weight [f, c, k, k], bias [f] -> [f, h-k+1, w-k+1]
pub fn conv2d_forward<S: Real>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    out_ch: usize,
    k: usize,
) -> Tensor<S> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = Tensor::zeros(vec![out_ch, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    for f in 0..out_ch {
        let b = bias.data()[f];
        let out_plane = &mut out.data_mut()[f * oh * ow..(f + 1) * oh * ow];
        for v in out_plane.iter_mut() {
            *v = b;
        }
        for ci in 0..c {
            for i in 0..k {
                for j in 0..k {
                    let wv = wt[((f * c + ci) * k + i) * k + j];
                    if wv == S::ZERO {
                        continue;
                    }
                    for y in 0..oh {
                        let xrow = &x[(ci * h + y + i) * w + j..(ci * h + y + i) * w + j + ow];
                        saxpy_into(&mut out_plane[y * ow..(y + 1) * ow], wv, xrow);
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_backward<S: Real>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    out_ch: usize,
    k: usize,
    dout: &Tensor<S>,
) -> (Tensor<S>, Vec<Tensor<S>>) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let x = input.data();
    let wt = weight.data();
    let dy = dout.data();

    let mut dx = Tensor::zeros(vec![c, h, w]);
    let mut dw = Tensor::zeros(weight.shape().to_vec());
    let mut db = Tensor::zeros(vec![out_ch]);

    for f in 0..out_ch {
        let dplane = &dy[f * oh * ow..(f + 1) * oh * ow];
        let mut bsum = S::ZERO;
        for &g in dplane {
            bsum += g;
        }
        db.data_mut()[f] = bsum;
        for ci in 0..c {
            for i in 0..k {
                for j in 0..k {
                    let widx = ((f * c + ci) * k + i) * k + j;
                    let wv = wt[widx];
                    let mut wsum = S::ZERO;
                    for y in 0..oh {
                        let xrow = &x[(ci * h + y + i) * w + j..(ci * h + y + i) * w + j + ow];
                        let drow = &dplane[y * ow..(y + 1) * ow];
                        // dw accumulates x . dy over the plane; dx scatters w * dy
                        let mut acc = S::ZERO;
                        for (xv, gv) in xrow.iter().zip(drow.iter()) {
                            acc += *xv * *gv;
                        }
                        wsum += acc;
                        if wv != S::ZERO {
                            let dxrow = &mut dx.data_mut()
                                [(ci * h + y + i) * w + j..(ci * h + y + i) * w + j + ow];
                            saxpy_into(dxrow, wv, drow);
                        }
                    }
                    dw.data_mut()[widx] = wsum;
                }
            }
        }
    }
    (dx, vec![dw, db])
}

/// input [c, t], weight [f, c, k], bias [f] -> time-major [t-k+1, f]
pub fn conv1d_forward<S: Real>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    out_ch: usize,
    k: usize,
) -> Tensor<S> {
    let (c, t) = (input.shape()[0], input.shape()[1]);
    let ot = t - k + 1;
    let x = input.data();
    let wt = weight.data();
    let mut out = Tensor::zeros(vec![ot, out_ch]);
    let o = out.data_mut();
    for pos in 0..ot {
        let row = &mut o[pos * out_ch..(pos + 1) * out_ch];
        row.copy_from_slice(bias.data());
    }
    for f in 0..out_ch {
        for ci in 0..c {
            for i in 0..k {
                let wv = wt[(f * c + ci) * k + i];
                if wv == S::ZERO {
                    continue;
                }
                let xrow = &x[ci * t + i..ci * t + i + ot];
                for pos in 0..ot {
                    o[pos * out_ch + f] += wv * xrow[pos];
                }
            }
        }
    }
    out
}

pub fn conv1d_backward<S: Real>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    out_ch: usize,
    k: usize,
    dout: &Tensor<S>,
) -> (Tensor<S>, Vec<Tensor<S>>) {
    let (c, t) = (input.shape()[0], input.shape()[1]);
    let ot = t - k + 1;
    let x = input.data();
    let wt = weight.data();
    let dy = dout.data();

    let mut dx = Tensor::zeros(vec![c, t]);
    let mut dw = Tensor::zeros(weight.shape().to_vec());
    let mut db = Tensor::zeros(vec![out_ch]);

    for f in 0..out_ch {
        let mut bsum = S::ZERO;
        for pos in 0..ot {
            bsum += dy[pos * out_ch + f];
        }
        db.data_mut()[f] = bsum;
        for ci in 0..c {
            for i in 0..k {
                let widx = (f * c + ci) * k + i;
                let wv = wt[widx];
                let xrow = &x[ci * t + i..ci * t + i + ot];
                let mut wsum = S::ZERO;
                for pos in 0..ot {
                    let g = dy[pos * out_ch + f];
                    wsum += xrow[pos] * g;
                }
                dw.data_mut()[widx] = wsum;
                if wv != S::ZERO {
                    let dxrow = &mut dx.data_mut()[ci * t + i..ci * t + i + ot];
                    for pos in 0..ot {
                        dxrow[pos] += wv * dy[pos * out_ch + f];
                    }
                }
            }
        }
    }
    (dx, vec![dw, db])
}

/// Non-overlapping max pool, stride = kernel. Returns the pooled tensor and
/// the flat input index of each selected maximum.
pub fn maxpool2d_forward<S: Real>(input: &Tensor<S>, k: usize) -> (Tensor<S>, Vec<u32>) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / k, w / k);
    let x = input.data();
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    let mut idx = vec![0u32; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = x[(ci * h + y * k) * w + xo * k];
                let mut best_at = (ci * h + y * k) * w + xo * k;
                for i in 0..k {
                    for j in 0..k {
                        let at = (ci * h + y * k + i) * w + xo * k + j;
                        if x[at] > best {
                            best = x[at];
                            best_at = at;
                        }
                    }
                }
                let o = (ci * oh + y) * ow + xo;
                out.data_mut()[o] = best;
                idx[o] = best_at as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2d_backward<S: Real>(
    input: &Tensor<S>,
    idx: &[u32],
    dout: &Tensor<S>,
) -> Tensor<S> {
    let mut dx = Tensor::zeros(input.shape().to_vec());
    for (o, &at) in dout.data().iter().zip(idx.iter()) {
        dx.data_mut()[at as usize] += *o;
    }
    dx
}
