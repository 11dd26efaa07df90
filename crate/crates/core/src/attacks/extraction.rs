//! Model-extraction query synthesis: surrogate-data conversion and
//! Jacobian-based data augmentation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::AttackError;
use crate::layers::LayerSpec;
use crate::network::Network;
use crate::quant::QuantizedNetwork;
use crate::tensor::Tensor;
use crate::train::{train, Dataset, TrainConfig};

type Result<T> = core::result::Result<T, AttackError>;

/// Convert any grayscale or RGB image to the victims' 28x28 grayscale input:
/// channel average ("luminance average") then bilinear resize, clamped to
/// [0,1].
pub fn to_gray28(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = match img.shape() {
        [c, h, w] => (*c, *h, *w),
        [h, w] => (1usize, *h, *w),
        other => {
            return Err(AttackError::BadParam(format!(
                "expected an image tensor, got shape {other:?}"
            )))
        }
    };
    // channel-average into a gray plane
    let mut gray = vec![0.0f32; h * w];
    for ch in 0..c {
        for p in 0..h * w {
            gray[p] += img.data()[ch * h * w + p];
        }
    }
    let inv = 1.0 / c as f32;
    for g in &mut gray {
        *g *= inv;
    }
    if (h, w) == (28, 28) {
        return Ok(Tensor::new(vec![1, 28, 28], gray).expect("shape"));
    }
    // bilinear resample
    let mut out = Tensor::zeros(vec![1, 28, 28]);
    let sy = (h - 1) as f32 / 27.0;
    let sx = (w - 1) as f32 / 27.0;
    for y in 0..28 {
        for x in 0..28 {
            let fy = y as f32 * sy;
            let fx = x as f32 * sx;
            let y0 = fy as usize;
            let x0 = fx as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let dy = fy - y0 as f32;
            let dx = fx - x0 as f32;
            let v = gray[y0 * w + x0] * (1.0 - dy) * (1.0 - dx)
                + gray[y0 * w + x1] * (1.0 - dy) * dx
                + gray[y1 * w + x0] * dy * (1.0 - dx)
                + gray[y1 * w + x1] * dy * dx;
            out.data_mut()[y * 28 + x] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Prepare a surrogate image batch as victim queries.
pub fn surrogate_queries(images: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    images.iter().map(to_gray28).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct JbdaConfig {
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for JbdaConfig {
    fn default() -> Self {
        JbdaConfig {
            lambda: 0.1,
            lr: 5e-3,
            epochs: 10,
            rounds: 2,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct JbdaResult {
    /// full query stream: the seeds plus every augmented generation
    pub queries: Vec<Tensor<f32>>,
    pub substitute: Network<f32>,
    /// victim queries spent labeling the stream
    pub victim_queries: usize,
}

fn substitute_arch(seed: u64, num_classes: usize) -> Result<Network<f32>> {
    Network::new(
        vec![1, 28, 28],
        vec![
            LayerSpec::Conv2d { out_channels: 8, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2 },
            LayerSpec::FullyConnected { out: 64 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { out: num_classes },
            LayerSpec::Softmax,
        ],
        seed,
    )
    .map_err(|e| AttackError::Net(format!("{e}")))
}

/// Jacobian-based data augmentation: each round labels the current set by
/// querying the victim, trains the substitute, and doubles the set with
/// x' = clip(x + lambda * sign(d logit_y / dx)) where y is the substitute's
/// predicted class.
pub fn jbda(
    victim: &QuantizedNetwork,
    seed_set: &[Tensor<f32>],
    cfg: &JbdaConfig,
) -> Result<JbdaResult> {
    if seed_set.is_empty() {
        return Err(AttackError::BadParam("empty JBDA seed set".into()));
    }
    let num_classes = victim.output_arity();
    let mut substitute = substitute_arch(cfg.seed ^ 0x5b57, num_classes)?;
    let mut set: Vec<Tensor<f32>> = seed_set.to_vec();
    let mut victim_queries = 0usize;

    for round in 0..cfg.rounds {
        // label the current set by querying the victim
        let mut data = Dataset::new(num_classes);
        for x in &set {
            let label = victim
                .predict(x)
                .map_err(|e| AttackError::Net(format!("{e}")))?;
            victim_queries += 1;
            data.push(x.clone(), label);
        }
        let tc = TrainConfig::new(cfg.epochs, cfg.lr, 32, cfg.seed ^ round as u64);
        train(&mut substitute, &data, &tc).map_err(|e| AttackError::Net(format!("{e}")))?;

        // augment: one Jacobian-sign step per current sample
        let logits_layer = substitute
            .logits_layer()
            .map_err(|e| AttackError::Net(format!("{e}")))?;
        let mut fresh = Vec::with_capacity(set.len());
        for x in &set {
            let tape = substitute.forward_tape(x, None)?;
            let y = tape.output().argmax();
            let mut g = Tensor::zeros(vec![num_classes]);
            g.data_mut()[y] = 1.0;
            let grads = substitute.backward_from(&tape, logits_layer, &g, false)?;
            let mut xp = x.clone();
            let lam = cfg.lambda as f32;
            for (v, &gv) in xp.data_mut().iter_mut().zip(grads.input.data().iter()) {
                let s = if gv > 0.0 {
                    1.0
                } else if gv < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *v = (*v + lam * s).clamp(0.0, 1.0);
            }
            fresh.push(xp);
        }
        set.extend(fresh);
    }

    Ok(JbdaResult {
        queries: set,
        substitute,
        victim_queries,
    })
}
