//! Trace classifier: preprocessing, the Conv1d -> FC -> BGRU stack -> GELU
//! -> dropout -> FC architecture, training, evaluation metrics, and
//! gradient-weighted activation maps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::layers::LayerSpec;
use crate::network::{NetError, Network};
use crate::tdc::TraceLabel;
use crate::tensor::Tensor;
use crate::train::{train, Dataset, EpochStats, OptimizerKind, TrainConfig};

/// Reference accuracies (%) reported for the hardware detector this twin
/// models; emitted in report footers for orientation, never asserted.
pub const REFERENCE_TOTAL_ACCURACY_PCT: f64 = 87.9;
pub const REFERENCE_MERGED_ACCURACY_PCT: f64 = 94.0;

pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Debug)]
pub struct DetectorConfig {
    /// block-averaging window applied to raw readouts
    pub window: usize,
    /// rows of the reshaped input matrix
    pub rows: usize,
    /// post-averaging trace length (crop/pad target), divisible by rows
    pub trace_len: usize,
    /// recurrent stack depth N
    pub rnn_layers: usize,
    /// recurrent hidden dimension D
    pub rnn_dim: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window: 10,
            rows: 3,
            trace_len: 768,
            rnn_layers: 5,
            rnn_dim: 128,
            conv_channels: 16,
            conv_kernel: 7,
            dropout: 0.3,
            epochs: 100,
            lr: 1e-2,
            batch: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DetectorError {
    BadConfig(String),
    MissingClass(TraceLabel),
    EmptySet,
    Net(String),
}

impl fmt::Display for DetectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorError::BadConfig(s) => write!(f, "bad detector config: {s}"),
            DetectorError::MissingClass(c) => {
                write!(f, "training set has no samples of class {}", c.name())
            }
            DetectorError::EmptySet => write!(f, "empty evaluation set"),
            DetectorError::Net(s) => write!(f, "{s}"),
        }
    }
}

impl core::error::Error for DetectorError {}

impl From<NetError> for DetectorError {
    fn from(e: NetError) -> Self {
        DetectorError::Net(format!("{e}"))
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.rows == 0 || self.trace_len % self.rows != 0 {
            return Err(DetectorError::BadConfig(format!(
                "trace_len {} not divisible by rows {}",
                self.trace_len, self.rows
            )));
        }
        if self.rnn_layers == 0 {
            return Err(DetectorError::BadConfig("rnn_layers 0".into()));
        }
        if self.window == 0 {
            return Err(DetectorError::BadConfig("window 0".into()));
        }
        Ok(())
    }

    pub fn columns(&self) -> usize {
        self.trace_len / self.rows
    }
}

/// Block-average, min-max normalize to [0,1], center-crop or symmetrically
/// zero-pad to `trace_len`, reshape row-major to `rows` x columns.
/// A constant trace normalizes to all 0.5.
pub fn preprocess(readouts: &[u32], cfg: &DetectorConfig) -> Tensor<f32> {
    // block average
    let mut avg: Vec<f32> = readouts
        .chunks(cfg.window)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() as f32 / c.len() as f32)
        .collect();
    if avg.is_empty() {
        avg.push(0.0);
    }
    // min-max normalize
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in &avg {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        let span = hi - lo;
        for v in &mut avg {
            *v = (*v - lo) / span;
        }
    } else {
        for v in &mut avg {
            *v = 0.5;
        }
    }
    // center-crop / symmetric zero-pad
    let target = cfg.trace_len;
    let mut fixed = vec![0.0f32; target];
    if avg.len() >= target {
        let start = (avg.len() - target) / 2;
        fixed.copy_from_slice(&avg[start..start + target]);
    } else {
        let start = (target - avg.len()) / 2;
        fixed[start..start + avg.len()].copy_from_slice(&avg);
    }
    Tensor::new(vec![cfg.rows, cfg.columns()], fixed).expect("trace_len divisible by rows")
}

/// Conv1d -> FC(D) -> N x BGRU -> GELU -> dropout -> FC(4) -> softmax.
/// The last recurrent layer emits the concatenated final states; earlier
/// ones keep the sequence.
pub fn build_detector(cfg: &DetectorConfig) -> Result<Network<f32>, DetectorError> {
    cfg.validate()?;
    let mut specs = vec![
        LayerSpec::Conv1d {
            out_channels: cfg.conv_channels,
            kernel: cfg.conv_kernel,
        },
        LayerSpec::FullyConnected { out: cfg.rnn_dim },
    ];
    for i in 0..cfg.rnn_layers {
        specs.push(LayerSpec::Bgru {
            hidden: cfg.rnn_dim,
            keep_sequence: i + 1 < cfg.rnn_layers,
        });
    }
    specs.push(LayerSpec::Gelu);
    specs.push(LayerSpec::Dropout { rate: cfg.dropout });
    specs.push(LayerSpec::FullyConnected { out: NUM_CLASSES });
    specs.push(LayerSpec::Softmax);
    Ok(Network::new(
        vec![cfg.rows, cfg.columns()],
        specs,
        cfg.seed,
    )?)
}

/// Train the classifier on preprocessed traces. Every class must be
/// represented; batches are class-balanced (the corpus is benign-light).
pub fn train_detector(
    data: &Dataset,
    cfg: &DetectorConfig,
) -> Result<(Network<f32>, Vec<EpochStats>), DetectorError> {
    let counts = data.class_counts();
    for label in TraceLabel::ALL {
        if counts.get(label as usize).copied().unwrap_or(0) == 0 {
            return Err(DetectorError::MissingClass(label));
        }
    }
    let mut net = build_detector(cfg)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch: cfg.batch,
        seed: cfg.seed,
        optimizer: OptimizerKind::adam(),
        class_balanced: true,
    };
    let curve = train(&mut net, data, &tc)?;
    Ok((net, curve))
}

/// Evaluation metrics. "Merged" pools the adversarial and extraction labels,
/// since extraction queries may themselves be adversarial samples.
#[derive(Clone, Debug)]
pub struct DetectionReport {
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub per_class_acc: [f64; NUM_CLASSES],
    pub total_acc: f64,
    pub merged_acc: f64,
    /// benign traces flagged as any attack class
    pub fpr: f64,
    pub reference_total_pct: f64,
    pub reference_merged_pct: f64,
}

fn merged_ok(label: usize, pred: usize) -> bool {
    let pool = |c: usize| if c == 3 { 1 } else { c };
    pool(label) == pool(pred)
}

pub fn evaluate(net: &Network<f32>, data: &Dataset) -> Result<DetectionReport, DetectorError> {
    if data.is_empty() {
        return Err(DetectorError::EmptySet);
    }
    let preds: Result<Vec<usize>, NetError> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            data.inputs.par_iter().map(|x| net.infer(x).map(|y| y.argmax())).collect()
        }
        #[cfg(not(feature = "parallel"))]
        data.inputs.iter().map(|x| net.infer(x).map(|y| y.argmax())).collect()
    };
    let preds = preds?;

    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&label, &pred) in data.labels.iter().zip(preds.iter()) {
        confusion[label][pred] += 1;
    }
    let mut per_class_acc = [0.0f64; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let row: usize = confusion[c].iter().sum();
        per_class_acc[c] = if row == 0 {
            0.0
        } else {
            confusion[c][c] as f64 / row as f64
        };
    }
    let total = data.len();
    let hits: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let merged_hits: usize = data
        .labels
        .iter()
        .zip(preds.iter())
        .filter(|(&l, &p)| merged_ok(l, p))
        .count();
    let benign_total: usize = confusion[0].iter().sum();
    let fpr = if benign_total == 0 {
        0.0
    } else {
        (benign_total - confusion[0][0]) as f64 / benign_total as f64
    };
    Ok(DetectionReport {
        confusion,
        per_class_acc,
        total_acc: hits as f64 / total as f64,
        merged_acc: merged_hits as f64 / total as f64,
        fpr,
        reference_total_pct: REFERENCE_TOTAL_ACCURACY_PCT,
        reference_merged_pct: REFERENCE_MERGED_ACCURACY_PCT,
    })
}

/// Importance series from gradient-weighted activation mapping.
#[derive(Clone, Debug)]
pub struct CamMap {
    /// nonnegative, max-normalized, aligned to the input column count
    pub importance: Vec<f32>,
    pub target_class: usize,
    /// no positive evidence anywhere (map left all-zero)
    pub all_zero: bool,
}

/// Gradient-weighted class activation map over the Conv1d layer: channel
/// weights are the time-mean logit gradients, the map is the ReLU of the
/// weighted channel sum, linearly upsampled to the input length and
/// max-normalized.
pub fn grad_cam(
    net: &Network<f32>,
    input: &Tensor<f32>,
    target_class: usize,
) -> Result<CamMap, DetectorError> {
    let conv_idx = net
        .specs()
        .iter()
        .position(|s| matches!(s, LayerSpec::Conv1d { .. }))
        .ok_or_else(|| DetectorError::BadConfig("network has no conv1d layer".into()))?;
    let logits_layer = net.logits_layer().map_err(DetectorError::from)?;

    let tape = net.forward_tape(input, None)?;
    let probs = tape.output();
    if target_class >= probs.len() {
        return Err(DetectorError::BadConfig(format!(
            "target class {target_class} outside arity {}",
            probs.len()
        )));
    }
    // class score: the negative classification loss toward the target
    // class; its logit gradient (onehot - probs) cancels evidence shared by
    // all classes, which a raw-logit score would keep
    let mut score_grad = probs.clone();
    score_grad.scale(-1.0);
    score_grad.data_mut()[target_class] += 1.0;
    let grads = net.backward_from(&tape, logits_layer, &score_grad, true)?;
    let act_grads = grads.activations.expect("requested activation grads");

    // conv output and its gradient, time-major [t, channels]
    let act = &tape.activations[conv_idx + 1];
    let dact = &act_grads[conv_idx + 1];
    let (t_len, channels) = (act.shape()[0], act.shape()[1]);

    let mut weights = vec![0.0f32; channels];
    for t in 0..t_len {
        for k in 0..channels {
            weights[k] += dact.data()[t * channels + k];
        }
    }
    for w in &mut weights {
        *w /= t_len as f32;
    }
    let mut map = vec![0.0f32; t_len];
    for (t, m) in map.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..channels {
            acc += weights[k] * act.data()[t * channels + k];
        }
        *m = acc.max(0.0);
    }

    // upsample to the input column count
    let target = input.shape()[1];
    let up = resample_linear(&map, target);
    let peak = up.iter().fold(0.0f32, |a, &b| a.max(b));
    let all_zero = peak <= 0.0;
    let importance = if all_zero {
        up
    } else {
        up.iter().map(|&v| v / peak).collect()
    };
    Ok(CamMap {
        importance,
        target_class,
        all_zero,
    })
}

fn resample_linear(src: &[f32], target: usize) -> Vec<f32> {
    if src.len() == target {
        return src.to_vec();
    }
    if src.len() == 1 {
        return vec![src[0]; target];
    }
    let scale = (src.len() - 1) as f32 / (target - 1) as f32;
    (0..target)
        .map(|i| {
            let f = i as f32 * scale;
            let lo = f as usize;
            let hi = (lo + 1).min(src.len() - 1);
            let d = f - lo as f32;
            src[lo] * (1.0 - d) + src[hi] * d
        })
        .collect()
}
