//! Training-data poisoning with blended triggers.

use alloc::format;
use alloc::vec::Vec;

use super::AttackError;
use crate::network::Network;
use crate::quant::{quantize_network, QuantizedNetwork};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{accuracy, train, Dataset, TrainConfig};
use crate::victim::VictimSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriggerKind {
    /// small high-contrast checkerboard patch, blended
    Pattern,
    /// one fixed out-of-class instance pasted onto a random pixel subset
    Instance,
    /// full-image diagonal-stripe watermark, blended
    Watermark,
    /// 3x3 solid square, the held-out trigger design
    Square3x3,
}

#[derive(Clone, Debug)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    /// binary 28x28 mask selecting the overwritten pixels
    pub mask: Tensor<f32>,
    /// 28x28 blend content
    pub content: Tensor<f32>,
    pub alpha: f32,
}

const SHAPE: [usize; 3] = [1, 28, 28];

impl TriggerSpec {
    /// 4x4 checkerboard patch in the bottom-right corner, Table-1 blend.
    pub fn pattern() -> TriggerSpec {
        let mask = Tensor::from_fn(SHAPE.to_vec(), |i| {
            let (y, x) = (i / 28, i % 28);
            f32::from((22..26).contains(&y) && (22..26).contains(&x))
        });
        let content = Tensor::from_fn(SHAPE.to_vec(), |i| {
            let (y, x) = (i / 28, i % 28);
            f32::from((y + x) % 2 == 0)
        });
        TriggerSpec {
            kind: TriggerKind::Pattern,
            mask,
            content,
            alpha: 0.4,
        }
    }

    /// Fixed out-of-class instance blended at full strength onto a random
    /// quarter of the pixels.
    pub fn instance(instance_image: &Tensor<f32>, seed: u64) -> TriggerSpec {
        let mut rng = Rng::derive(seed, 0x1257);
        let mut picks = alloc::vec![false; 28 * 28];
        let want = 28 * 28 / 4;
        let mut placed = 0;
        while placed < want {
            let i = rng.below(28 * 28);
            if !picks[i] {
                picks[i] = true;
                placed += 1;
            }
        }
        TriggerSpec {
            kind: TriggerKind::Instance,
            mask: Tensor::from_fn(SHAPE.to_vec(), |i| f32::from(picks[i])),
            content: instance_image.clone(),
            alpha: 1.0,
        }
    }

    /// Diagonal stripes across the whole frame, Table-1 blend.
    pub fn watermark() -> TriggerSpec {
        let mask = Tensor::full(SHAPE.to_vec(), 1.0);
        let content = Tensor::from_fn(SHAPE.to_vec(), |i| {
            let (y, x) = (i / 28, i % 28);
            f32::from((y + x) % 6 < 2)
        });
        TriggerSpec {
            kind: TriggerKind::Watermark,
            mask,
            content,
            alpha: 0.4,
        }
    }

    /// Solid 3x3 square near the top-left corner (unseen trigger).
    pub fn square3x3() -> TriggerSpec {
        let mask = Tensor::from_fn(SHAPE.to_vec(), |i| {
            let (y, x) = (i / 28, i % 28);
            f32::from((2..5).contains(&y) && (2..5).contains(&x))
        });
        TriggerSpec {
            kind: TriggerKind::Square3x3,
            mask: mask.clone(),
            content: mask,
            alpha: 1.0,
        }
    }

    pub fn for_kind(kind: TriggerKind, instance_image: &Tensor<f32>, seed: u64) -> TriggerSpec {
        match kind {
            TriggerKind::Pattern => TriggerSpec::pattern(),
            TriggerKind::Instance => TriggerSpec::instance(instance_image, seed),
            TriggerKind::Watermark => TriggerSpec::watermark(),
            TriggerKind::Square3x3 => TriggerSpec::square3x3(),
        }
    }
}

/// x' = (1 - alpha) x + alpha * content on masked pixels.
pub fn apply_trigger(x: &Tensor<f32>, trigger: &TriggerSpec) -> Tensor<f32> {
    let mut out = x.clone();
    let a = trigger.alpha;
    for ((o, &m), &c) in out
        .data_mut()
        .iter_mut()
        .zip(trigger.mask.data().iter())
        .zip(trigger.content.data().iter())
    {
        if m != 0.0 {
            *o = (1.0 - a) * *o + a * c;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct PoisonOutcome {
    pub net: Network<f32>,
    pub qnet: QuantizedNetwork,
    pub poisoned_count: usize,
    pub clean_accuracy: f64,
    pub attack_success_rate: f64,
    /// set when floor(rate * N) came out zero
    pub warned_zero_poison: bool,
}

/// Poison floor(rate * N) training samples with the trigger, retargeting
/// their labels, then train the victim spec on the poisoned set.
#[allow(clippy::too_many_arguments)]
pub fn poison_and_train(
    spec: &VictimSpec,
    data: &Dataset,
    trigger: &TriggerSpec,
    poison_rate: f64,
    target_label: usize,
    train_cfg: &TrainConfig,
    calib_samples: usize,
    seed: u64,
) -> Result<PoisonOutcome, AttackError> {
    if !(0.0..=1.0).contains(&poison_rate) {
        return Err(AttackError::BadParam(format!("poison rate {poison_rate}")));
    }
    if target_label >= data.num_classes {
        return Err(AttackError::BadParam(format!(
            "target label {target_label} outside {} classes",
            data.num_classes
        )));
    }

    let n = data.len();
    let quota = (poison_rate * n as f64) as usize;
    let warned_zero_poison = quota == 0 && poison_rate > 0.0;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::derive(seed, 0xbadd);
    rng.shuffle(&mut order);
    let poisoned_idx = &order[..quota];

    let mut poisoned = data.clone();
    for &i in poisoned_idx {
        poisoned.inputs[i] = apply_trigger(&data.inputs[i], trigger);
        poisoned.labels[i] = target_label;
    }

    let mut net = spec
        .build()
        .map_err(|e| AttackError::Net(format!("{e}")))?;
    train(&mut net, &poisoned, train_cfg).map_err(|e| AttackError::Net(format!("{e}")))?;

    let clean_accuracy =
        accuracy(&net, data).map_err(|e| AttackError::Net(format!("{e}")))?;

    // attack success: triggered non-target samples land on the target label
    let mut tried = 0usize;
    let mut hit = 0usize;
    for (x, &l) in data.inputs.iter().zip(data.labels.iter()) {
        if l == target_label {
            continue;
        }
        tried += 1;
        let t = apply_trigger(x, trigger);
        let pred = net
            .infer(&t)
            .map_err(|e| AttackError::Net(format!("{e}")))?
            .argmax();
        hit += usize::from(pred == target_label);
    }
    let attack_success_rate = if tried == 0 { 0.0 } else { hit as f64 / tried as f64 };

    let calib: Vec<_> = poisoned.inputs.iter().take(calib_samples.max(1)).cloned().collect();
    let qnet =
        quantize_network(&net, &calib).map_err(|e| AttackError::Net(format!("{e}")))?;

    Ok(PoisonOutcome {
        net,
        qnet,
        poisoned_count: quota,
        clean_accuracy,
        attack_success_rate,
        warned_zero_poison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_arithmetic() {
        // alpha 0.4 on a zero pixel with unit content gives 0.4
        let x = Tensor::zeros(SHAPE.to_vec());
        let mut trigger = TriggerSpec::watermark();
        trigger.content = Tensor::full(SHAPE.to_vec(), 1.0);
        let t = apply_trigger(&x, &trigger);
        for &v in t.data() {
            assert!((v - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn off_mask_pixels_untouched() {
        let x = Tensor::full(SHAPE.to_vec(), 0.3);
        let trigger = TriggerSpec::pattern();
        let t = apply_trigger(&x, &trigger);
        for i in 0..28 * 28 {
            if trigger.mask.data()[i] == 0.0 {
                assert_eq!(t.data()[i], x.data()[i]);
            }
        }
        // and the patch itself changed something
        assert_ne!(t.data(), x.data());
    }

    #[test]
    fn square_trigger_is_nine_pixels() {
        let t = TriggerSpec::square3x3();
        let on: usize = t.mask.data().iter().map(|&v| v as usize).sum();
        assert_eq!(on, 9);
    }

    #[test]
    fn instance_mask_is_quarter_of_pixels_and_seeded() {
        let img = Tensor::full(SHAPE.to_vec(), 0.7);
        let a = TriggerSpec::instance(&img, 5);
        let b = TriggerSpec::instance(&img, 5);
        let c = TriggerSpec::instance(&img, 6);
        assert_eq!(a.mask.data(), b.mask.data());
        assert_ne!(a.mask.data(), c.mask.data());
        let on: usize = a.mask.data().iter().map(|&v| v as usize).sum();
        assert_eq!(on, 28 * 28 / 4);
    }

    #[test]
    fn zero_rate_keeps_dataset_clean() {
        let data = crate::synth::digits(3, 60);
        let spec = crate::victim::generate_victim(11).unwrap();
        let out = poison_and_train(
            &spec,
            &data,
            &TriggerSpec::pattern(),
            0.0,
            0,
            &TrainConfig::new(2, 1e-3, 16, 1),
            8,
            9,
        )
        .unwrap();
        assert_eq!(out.poisoned_count, 0);
        assert!(!out.warned_zero_poison);
    }

    #[test]
    fn tiny_rate_warns_once_floor_hits_zero() {
        let data = crate::synth::digits(3, 40);
        let spec = crate::victim::generate_victim(11).unwrap();
        let out = poison_and_train(
            &spec,
            &data,
            &TriggerSpec::pattern(),
            0.01,
            0,
            &TrainConfig::new(1, 1e-3, 16, 1),
            8,
            9,
        )
        .unwrap();
        assert_eq!(out.poisoned_count, 0);
        assert!(out.warned_zero_poison);
    }
}
