//! Mini-batch training with SGD or Adam.
//!
//! Determinism contract: for a fixed seed the parameter trajectory is
//! bit-identical across runs and thread counts. Per-sample gradients are
//! reduced in a fixed chunk order regardless of how many workers computed
//! them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::loss::ce_loss_and_logit_grad;
use crate::network::{Gradients, NetError, NetResult, Network};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// draw every batch with equal per-class counts
    pub class_balanced: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, batch: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            lr,
            batch,
            seed,
            optimizer: OptimizerKind::adam(),
            class_balanced: false,
        }
    }
}

/// Labeled tensors for classification.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(num_classes: usize) -> Self {
        Dataset {
            inputs: Vec::new(),
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn push(&mut self, input: Tensor<f32>, label: usize) {
        self.inputs.push(input);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

struct AdamState {
    m: Vec<Vec<Tensor<f32>>>,
    v: Vec<Vec<Tensor<f32>>>,
    t: u64,
}

fn zeros_like(net: &Network<f32>) -> Vec<Vec<Tensor<f32>>> {
    net.params()
        .iter()
        .map(|ts| ts.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect())
        .collect()
}

fn accumulate(total: &mut [Vec<Tensor<f32>>], grads: &Gradients<f32>) {
    for (slot, g) in total.iter_mut().zip(grads.params.iter()) {
        for (a, b) in slot.iter_mut().zip(g.iter()) {
            a.add_assign(b);
        }
    }
}

/// One sample's loss, correctness, and gradients. The network must end in
/// softmax; the cross-entropy gradient is injected at the logits.
fn sample_grads(
    net: &Network<f32>,
    input: &Tensor<f32>,
    label: usize,
    dropout_rng: &mut Rng,
) -> NetResult<(f64, bool, Gradients<f32>)> {
    let tape = net.forward_tape(input, Some(dropout_rng))?;
    let (loss, logit_grad, logits_layer) = ce_loss_and_logit_grad(net, &tape, label)?;
    let correct = tape.output().argmax() == label;
    let grads = net.backward_from(&tape, logits_layer, &logit_grad, false)?;
    Ok((loss.to_f64(), correct, grads))
}

/// Gradient of the mean loss over a batch, plus summed loss and hit count.
///
/// Each sample owns a dropout rng derived from (seed, sample counter) so the
/// result does not depend on evaluation order; partial sums are reduced in
/// fixed chunk order.
fn batch_grads(
    net: &Network<f32>,
    data: &Dataset,
    idx: &[usize],
    dropout_seed: u64,
    counter_base: u64,
) -> NetResult<(Vec<Vec<Tensor<f32>>>, f64, usize)> {
    // two matches the worker pool; more chunks only multiply gradient
    // buffer traffic
    const CHUNKS: usize = 2;
    let chunk_size = idx.len().div_ceil(CHUNKS).max(1);
    let chunks: Vec<&[usize]> = idx.chunks(chunk_size).collect();
    let batched = crate::batch::batch_supported(net);

    let work = |(c, chunk): (usize, &&[usize])| -> NetResult<(Vec<Vec<Tensor<f32>>>, f64, usize)> {
        if batched {
            let inputs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &data.inputs[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let out = crate::batch::forward_backward_batch(
                net,
                &inputs,
                &labels,
                dropout_seed,
                counter_base + (c * chunk_size) as u64,
            )?;
            return Ok((out.grads, out.loss_sum, out.hits));
        }
        let mut acc = zeros_like(net);
        let mut loss = 0.0;
        let mut hits = 0usize;
        for (j, &i) in chunk.iter().enumerate() {
            let sample_counter = counter_base + (c * chunk_size + j) as u64;
            let mut rng = Rng::derive(dropout_seed, sample_counter);
            let (l, ok, g) = sample_grads(net, &data.inputs[i], data.labels[i], &mut rng)?;
            loss += l;
            hits += ok as usize;
            accumulate(&mut acc, &g);
        }
        Ok((acc, loss, hits))
    };

    #[cfg(feature = "parallel")]
    let partials: Vec<NetResult<(Vec<Vec<Tensor<f32>>>, f64, usize)>> = {
        use rayon::prelude::*;
        chunks.par_iter().enumerate().map(work).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<NetResult<(Vec<Vec<Tensor<f32>>>, f64, usize)>> =
        chunks.iter().enumerate().map(work).collect();

    let mut total: Option<Vec<Vec<Tensor<f32>>>> = None;
    let mut loss = 0.0;
    let mut hits = 0;
    for part in partials {
        let (acc, l, h) = part?;
        loss += l;
        hits += h;
        match &mut total {
            None => total = Some(acc),
            Some(t) => {
                for (a, b) in t.iter_mut().zip(acc.iter()) {
                    for (x, y) in a.iter_mut().zip(b.iter()) {
                        x.add_assign(y);
                    }
                }
            }
        }
    }
    let mut total = total.unwrap_or_else(|| zeros_like(net));
    let scale = 1.0 / idx.len() as f32;
    for ts in &mut total {
        for t in ts {
            t.scale(scale);
        }
    }
    Ok((total, loss, hits))
}

fn apply_update(
    net: &mut Network<f32>,
    grads: &[Vec<Tensor<f32>>],
    cfg: &TrainConfig,
    adam: &mut AdamState,
) {
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            let lr = cfg.lr as f32;
            for (ts, gs) in net.params_mut().iter_mut().zip(grads.iter()) {
                for (t, g) in ts.iter_mut().zip(gs.iter()) {
                    t.add_scaled(g, -lr);
                }
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let b1 = beta1 as f32;
            let b2 = beta2 as f32;
            let eps = eps as f32;
            let bias1 = 1.0 - libm::powf(b1, adam.t as f32);
            let bias2 = 1.0 - libm::powf(b2, adam.t as f32);
            let lr = cfg.lr as f32;
            for (li, (ts, gs)) in net.params_mut().iter_mut().zip(grads.iter()).enumerate() {
                for (ti, (t, g)) in ts.iter_mut().zip(gs.iter()).enumerate() {
                    let m = adam.m[li][ti].data_mut();
                    let v = adam.v[li][ti].data_mut();
                    let p = t.data_mut();
                    let gd = g.data();
                    for i in 0..p.len() {
                        // flush decayed moments before they reach denormal
                        // range and slow the update loop to a crawl
                        let m1 = b1 * m[i] + (1.0 - b1) * gd[i];
                        m[i] = if m1.abs() < 1e-30 { 0.0 } else { m1 };
                        let v1 = b2 * v[i] + (1.0 - b2) * gd[i] * gd[i];
                        v[i] = if v1 < 1e-35 { 0.0 } else { v1 };
                        let mh = m[i] / bias1;
                        let vh = v[i] / bias2;
                        p[i] -= lr * mh / (libm::sqrtf(vh) + eps);
                    }
                }
            }
        }
    }
}

/// Deterministic per-epoch batch index plan.
fn epoch_batches(data: &Dataset, cfg: &TrainConfig, rng: &mut Rng) -> Vec<Vec<usize>> {
    let n = data.len();
    let batch = cfg.batch.max(1).min(n);
    if !cfg.class_balanced {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        return order.chunks(batch).map(|c| c.to_vec()).collect();
    }
    // balanced: cycle each class's shuffled pool; every batch takes equal
    // shares from the classes that are present
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, &l) in data.labels.iter().enumerate() {
        pools[l].push(i);
    }
    let present: Vec<usize> = (0..data.num_classes).filter(|&c| !pools[c].is_empty()).collect();
    for c in &present {
        rng.shuffle(&mut pools[*c]);
    }
    let mut cursors = vec![0usize; data.num_classes];
    let num_batches = n.div_ceil(batch);
    let share = batch.div_ceil(present.len());
    let mut batches = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let mut b = Vec::with_capacity(batch);
        'fill: for &c in &present {
            for _ in 0..share {
                if b.len() == batch {
                    break 'fill;
                }
                let pool = &pools[c];
                b.push(pool[cursors[c] % pool.len()]);
                cursors[c] += 1;
            }
        }
        batches.push(b);
    }
    batches
}

/// Train a softmax classifier; returns per-epoch loss and accuracy on the
/// training stream.
pub fn train(
    net: &mut Network<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> NetResult<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(NetError::Other("empty dataset".into()));
    }
    if cfg.lr < 0.0 {
        return Err(NetError::Other(format!("negative learning rate {}", cfg.lr)));
    }
    let arity = net.output_shape()[0];
    for &l in &data.labels {
        if l >= arity {
            return Err(NetError::Other(format!(
                "label {l} outside output arity {arity}"
            )));
        }
    }

    let mut adam = AdamState {
        m: zeros_like(net),
        v: zeros_like(net),
        t: 0,
    };
    let mut shuffle_rng = Rng::derive(cfg.seed, 0x5aff1e);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut sample_counter = 0u64;
    for _epoch in 0..cfg.epochs {
        let batches = epoch_batches(data, cfg, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut hit_sum = 0usize;
        let mut seen = 0usize;
        for idx in batches {
            let (grads, loss, hits) = batch_grads(net, data, &idx, cfg.seed, sample_counter)?;
            sample_counter += idx.len() as u64;
            apply_update(net, &grads, cfg, &mut adam);
            loss_sum += loss;
            hit_sum += hits;
            seen += idx.len();
        }
        curve.push(EpochStats {
            loss: loss_sum / seen as f64,
            accuracy: hit_sum as f64 / seen as f64,
        });
    }
    Ok(curve)
}

/// Fraction of samples whose argmax matches the label (inference mode).
pub fn accuracy(net: &Network<f32>, data: &Dataset) -> NetResult<f64> {
    if data.is_empty() {
        return Err(NetError::Other("empty dataset".into()));
    }
    let hits: NetResult<usize> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            data.inputs
                .par_iter()
                .zip(data.labels.par_iter())
                .map(|(x, &l)| net.infer(x).map(|y| (y.argmax() == l) as usize))
                .try_reduce(|| 0, |a, b| Ok(a + b))
        }
        #[cfg(not(feature = "parallel"))]
        {
            let mut h = 0;
            for (x, &l) in data.inputs.iter().zip(data.labels.iter()) {
                h += (net.infer(x)?.argmax() == l) as usize;
            }
            Ok(h)
        }
    };
    Ok(hits? as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;

    fn toy_separable(n_per_class: usize, seed: u64) -> Dataset {
        // two gaussian blobs separated along the first coordinate
        let mut rng = Rng::seed_from(seed);
        let mut data = Dataset::new(2);
        for i in 0..2 * n_per_class {
            let label = i % 2;
            let center = if label == 0 { -2.0 } else { 2.0 };
            let x = Tensor::from_fn(vec![4], |j| {
                if j == 0 {
                    (center + 0.3 * rng.normal()) as f32
                } else {
                    rng.normal() as f32 * 0.3
                }
            });
            data.push(x, label);
        }
        data
    }

    fn toy_net(seed: u64) -> Network<f32> {
        Network::new(
            vec![4],
            vec![
                LayerSpec::FullyConnected { out: 8 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out: 2 },
                LayerSpec::Softmax,
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let data = toy_separable(25, 1);
        let mut net = toy_net(7);
        let curve = train(&mut net, &data, &TrainConfig::new(50, 0.01, 16, 3)).unwrap();
        assert!(
            curve.last().unwrap().accuracy == 1.0,
            "final train accuracy {}",
            curve.last().unwrap().accuracy
        );
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let data = toy_separable(10, 2);
        let mut net = toy_net(5);
        let before = net.params().to_vec();
        train(&mut net, &data, &TrainConfig::new(3, 0.0, 8, 3)).unwrap();
        for (a, b) in net.params().iter().flatten().zip(before.iter().flatten()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn same_seed_bit_identical_trajectories() {
        let data = toy_separable(12, 3);
        let cfg = TrainConfig::new(5, 0.01, 8, 11);
        let mut a = toy_net(2);
        let mut b = toy_net(2);
        let ca = train(&mut a, &data, &cfg).unwrap();
        let cb = train(&mut b, &data, &cfg).unwrap();
        for (x, y) in a.params().iter().flatten().zip(b.params().iter().flatten()) {
            assert_eq!(x.data(), y.data());
        }
        for (sa, sb) in ca.iter().zip(cb.iter()) {
            assert_eq!(sa.loss.to_bits(), sb.loss.to_bits());
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut net = toy_net(0);
        let data = Dataset::new(2);
        assert!(train(&mut net, &data, &TrainConfig::new(1, 0.1, 4, 0)).is_err());
    }

    #[test]
    fn out_of_arity_label_rejected() {
        let mut net = toy_net(0);
        let mut data = Dataset::new(5);
        data.push(Tensor::zeros(vec![4]), 4);
        assert!(train(&mut net, &data, &TrainConfig::new(1, 0.1, 4, 0)).is_err());
    }

    #[test]
    fn balanced_batches_cover_all_classes() {
        let mut data = Dataset::new(2);
        // 1:9 imbalance
        for i in 0..100 {
            data.push(Tensor::zeros(vec![4]), usize::from(i >= 10));
        }
        let cfg = TrainConfig {
            class_balanced: true,
            ..TrainConfig::new(1, 0.0, 10, 4)
        };
        let mut rng = Rng::seed_from(4);
        let batches = epoch_batches(&data, &cfg, &mut rng);
        assert!(!batches.is_empty());
        for b in batches {
            let zeros = b.iter().filter(|&&i| data.labels[i] == 0).count();
            assert_eq!(zeros, 5, "balanced batch should be half class 0");
        }
    }
}
