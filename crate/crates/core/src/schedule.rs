//! Cycle-level operand schedule of quantized inference.
//!
//! Conv/FC layers run their multiply-accumulates in fixed raster order,
//! grouped into `mac_lanes`-wide cycles; each MAC cycle exposes the weight
//! bytes and activation bytes it consumed plus the low byte of the running
//! i32 accumulator. Pooling and activation layers emit one cycle per output
//! element carrying the bytes they touched. Cycle count and grouping depend
//! only on the network shapes, so timing is data-independent and only the
//! switching content varies with the input.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::layers::LayerSpec;
use crate::quant::{QuantLayer, QuantizedNetwork};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    ConvMac = 0,
    PoolCmp = 1,
    FcMac = 2,
    Activation = 3,
}

#[derive(Clone, Copy, Debug)]
pub struct ScheduleConfig {
    /// multiply-accumulates per MAC cycle
    pub mac_lanes: usize,
    /// include the low accumulator byte in each MAC cycle's words
    pub accumulator_byte: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            mac_lanes: 16,
            accumulator_byte: true,
        }
    }
}

/// One cycle's view into the stream.
#[derive(Clone, Copy, Debug)]
pub struct CycleEvent<'a> {
    pub layer_index: usize,
    pub engine: Engine,
    pub operand_words: &'a [u8],
}

/// Per-cycle operand-word events, stored flat.
#[derive(Clone, Debug, Default)]
pub struct OpStream {
    words: Vec<u8>,
    /// word range of cycle i is offsets[i]..offsets[i+1]
    offsets: Vec<u32>,
    layer_index: Vec<u16>,
    engine: Vec<Engine>,
}

impl OpStream {
    pub fn new() -> Self {
        OpStream {
            words: Vec::new(),
            offsets: vec![0],
            layer_index: Vec::new(),
            engine: Vec::new(),
        }
    }

    pub fn cycle_count(&self) -> usize {
        self.layer_index.len()
    }

    pub fn push_cycle(&mut self, layer_index: usize, engine: Engine, words: &[u8]) {
        debug_assert!(!words.is_empty(), "each cycle carries at least one word");
        self.words.extend_from_slice(words);
        self.offsets.push(self.words.len() as u32);
        self.layer_index.push(layer_index as u16);
        self.engine.push(engine);
    }

    pub fn cycle(&self, i: usize) -> CycleEvent<'_> {
        CycleEvent {
            layer_index: self.layer_index[i] as usize,
            engine: self.engine[i],
            operand_words: &self.words[self.offsets[i] as usize..self.offsets[i + 1] as usize],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = CycleEvent<'_>> {
        (0..self.cycle_count()).map(move |i| self.cycle(i))
    }

    /// Widest cycle in the stream (lane count for the leakage model).
    pub fn max_words(&self) -> usize {
        (0..self.cycle_count())
            .map(|i| (self.offsets[i + 1] - self.offsets[i]) as usize)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleError {
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    Unsupported(String),
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleError::InputShape { expected, got } => {
                write!(f, "input shape {got:?} does not match network input {expected:?}")
            }
            ScheduleError::Unsupported(s) => write!(f, "unsupported: {s}"),
        }
    }
}

impl core::error::Error for ScheduleError {}

struct MacGroup<'a> {
    sink: Option<&'a mut OpStream>,
    cfg: ScheduleConfig,
    layer: usize,
    engine: Engine,
    wbytes: Vec<u8>,
    abytes: Vec<u8>,
    acc: i32,
}

impl<'a> MacGroup<'a> {
    fn new(sink: Option<&'a mut OpStream>, cfg: ScheduleConfig, layer: usize, engine: Engine) -> Self {
        MacGroup {
            sink,
            cfg,
            layer,
            engine,
            wbytes: Vec::with_capacity(cfg.mac_lanes),
            abytes: Vec::with_capacity(cfg.mac_lanes),
            acc: 0,
        }
    }

    #[inline]
    fn mac(&mut self, w: i8, a: i8) {
        self.acc += w as i32 * a as i32;
        if self.sink.is_some() {
            self.wbytes.push(w as u8);
            self.abytes.push(a as u8);
            if self.wbytes.len() == self.cfg.mac_lanes {
                self.flush();
            }
        }
    }

    /// Close the current (possibly partial) cycle.
    fn flush(&mut self) {
        if let Some(sink) = self.sink.as_deref_mut() {
            if self.wbytes.is_empty() {
                return;
            }
            let mut words = Vec::with_capacity(2 * self.wbytes.len() + 1);
            words.extend_from_slice(&self.wbytes);
            words.extend_from_slice(&self.abytes);
            if self.cfg.accumulator_byte {
                words.push((self.acc & 0xff) as u8);
            }
            sink.push_cycle(self.layer, self.engine, &words);
            self.wbytes.clear();
            self.abytes.clear();
        }
    }

    /// Finish one output element: flush the tail group and return the
    /// accumulator.
    fn finish(&mut self) -> i32 {
        self.flush();
        core::mem::replace(&mut self.acc, 0)
    }
}

/// Quantized inference; when `sink` is given, also emits the cycle stream.
/// Returns the dequantized final activation.
pub fn run_quantized(
    qnet: &QuantizedNetwork,
    input: &Tensor<f32>,
    mut sink: Option<(&mut OpStream, ScheduleConfig)>,
) -> Result<(Tensor<f32>, usize), ScheduleError> {
    if input.shape() != qnet.input_shape.as_slice() {
        return Err(ScheduleError::InputShape {
            expected: qnet.input_shape.clone(),
            got: input.shape().to_vec(),
        });
    }

    let mut codes: Vec<i8> = qnet.quantize_input(input);
    let mut scale = qnet.input_qp.scale;
    let mut reals: Vec<f32> = codes.iter().map(|&c| c as f32 * scale).collect();

    for (li, layer) in qnet.layers.iter().enumerate() {
        let in_shape = &qnet.shapes[li];
        let (stream, cfg) = match sink.as_mut() {
            Some((s, c)) => (Some(&mut **s), *c),
            None => (None, ScheduleConfig::default()),
        };
        let (next_codes, next_reals) =
            forward_quant_layer(layer, li, in_shape, &codes, &reals, scale, stream, cfg)?;
        codes = next_codes;
        reals = next_reals;
        scale = layer.out_qp.scale;
    }

    let out_shape = qnet.shapes.last().unwrap().clone();
    let out = Tensor::new(out_shape, reals).expect("shape consistency");
    let cycles = sink.map(|(s, _)| s.cycle_count()).unwrap_or(0);
    Ok((out, cycles))
}

#[allow(clippy::too_many_arguments)]
fn forward_quant_layer(
    layer: &QuantLayer,
    li: usize,
    in_shape: &[usize],
    codes: &[i8],
    reals: &[f32],
    in_scale: f32,
    mut sink: Option<&mut OpStream>,
    cfg: ScheduleConfig,
) -> Result<(Vec<i8>, Vec<f32>), ScheduleError> {
    let requant = |vals: &[f32]| -> (Vec<i8>, Vec<f32>) {
        let qp = layer.out_qp;
        let c: Vec<i8> = vals.iter().map(|&v| qp.quantize(v)).collect();
        let r: Vec<f32> = c.iter().map(|&q| qp.dequantize(q)).collect();
        (c, r)
    };

    match layer.spec {
        LayerSpec::FullyConnected { out } => {
            let (wq, wshape, wqp) = layer.weight.as_ref().expect("fc weights");
            let bias = layer.bias.as_ref().expect("fc bias");
            let n_in: usize = in_shape.iter().product();
            debug_assert_eq!(wshape[0], n_in);
            let mut vals = vec![0.0f32; out];
            let mac_scale = wqp.scale * in_scale;
            for (o, val) in vals.iter_mut().enumerate() {
                let mut group = MacGroup::new(sink.as_deref_mut(), cfg, li, Engine::FcMac);
                for k in 0..n_in {
                    group.mac(wq[k * out + o], codes[k]);
                }
                let acc = group.finish();
                *val = acc as f32 * mac_scale + bias[o];
            }
            Ok(requant(&vals))
        }
        LayerSpec::Conv2d { out_channels, kernel } => {
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (h - kernel + 1, w - kernel + 1);
            let (wq, _, wqp) = layer.weight.as_ref().expect("conv weights");
            let bias = layer.bias.as_ref().expect("conv bias");
            let mac_scale = wqp.scale * in_scale;
            let mut vals = vec![0.0f32; out_channels * oh * ow];
            for f in 0..out_channels {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut group = MacGroup::new(sink.as_deref_mut(), cfg, li, Engine::ConvMac);
                        for ci in 0..c {
                            for i in 0..kernel {
                                for j in 0..kernel {
                                    let wv = wq[((f * c + ci) * kernel + i) * kernel + j];
                                    let av = codes[(ci * h + y + i) * w + x + j];
                                    group.mac(wv, av);
                                }
                            }
                        }
                        let acc = group.finish();
                        vals[(f * oh + y) * ow + x] = acc as f32 * mac_scale + bias[f];
                    }
                }
            }
            Ok(requant(&vals))
        }
        LayerSpec::MaxPool2d { kernel } => {
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (h / kernel, w / kernel);
            let mut vals = vec![0.0f32; c * oh * ow];
            let mut window = Vec::with_capacity(kernel * kernel + 1);
            for ci in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        window.clear();
                        let mut best = i8::MIN;
                        for i in 0..kernel {
                            for j in 0..kernel {
                                let v = codes[(ci * h + y * kernel + i) * w + x * kernel + j];
                                window.push(v as u8);
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        if let Some(s) = sink.as_deref_mut() {
                            window.push(best as u8);
                            s.push_cycle(li, Engine::PoolCmp, &window);
                        }
                        vals[(ci * oh + y) * ow + x] = best as f32 * in_scale;
                    }
                }
            }
            Ok(requant(&vals))
        }
        LayerSpec::Relu => {
            let vals: Vec<f32> = reals.iter().map(|&v| v.max(0.0)).collect();
            let (out_codes, out_reals) = requant(&vals);
            if let Some(s) = sink.as_deref_mut() {
                for (i, &code) in codes.iter().enumerate() {
                    s.push_cycle(li, Engine::Activation, &[code as u8, out_codes[i] as u8]);
                }
            }
            Ok((out_codes, out_reals))
        }
        LayerSpec::Softmax => {
            // computed on the dequantized values, requantized on the way out
            let mut max = f32::NEG_INFINITY;
            for &v in reals {
                max = max.max(v);
            }
            let exps: Vec<f32> = reals.iter().map(|&v| libm::expf(v - max)).collect();
            let sum: f32 = exps.iter().sum();
            let vals: Vec<f32> = exps.iter().map(|&e| e / sum).collect();
            let (out_codes, out_reals) = requant(&vals);
            if let Some(s) = sink.as_deref_mut() {
                for (i, &code) in codes.iter().enumerate() {
                    s.push_cycle(li, Engine::Activation, &[code as u8, out_codes[i] as u8]);
                }
            }
            Ok((out_codes, out_reals))
        }
        ref other => Err(ScheduleError::Unsupported(format!(
            "layer kind {} in quantized network",
            other.name()
        ))),
    }
}

/// Emit the full cycle stream for one inference.
pub fn emit_schedule(
    qnet: &QuantizedNetwork,
    input: &Tensor<f32>,
    cfg: ScheduleConfig,
) -> Result<OpStream, ScheduleError> {
    let mut stream = OpStream::new();
    run_quantized(qnet, input, Some((&mut stream, cfg)))?;
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;
    use crate::network::Network;
    use crate::quant::quantize_network;
    use crate::rng::Rng;

    fn tiny_fc(n_in: usize, n_out: usize, seed: u64) -> QuantizedNetwork {
        let net: Network<f32> = Network::new(
            vec![n_in],
            vec![LayerSpec::FullyConnected { out: n_out }],
            seed,
        )
        .unwrap();
        let mut rng = Rng::seed_from(seed);
        let calib: alloc::vec::Vec<Tensor<f32>> = (0..4)
            .map(|_| Tensor::from_fn(vec![n_in], |_| rng.next_f32()))
            .collect();
        quantize_network(&net, &calib).unwrap()
    }

    #[test]
    fn single_mac_is_one_cycle() {
        let qnet = tiny_fc(1, 1, 3);
        let x = Tensor::new(vec![1], vec![0.5]).unwrap();
        let stream = emit_schedule(&qnet, &x, ScheduleConfig::default()).unwrap();
        assert_eq!(stream.cycle_count(), 1);
        let ev = stream.cycle(0);
        assert_eq!(ev.engine, Engine::FcMac);
        // 1 weight byte + 1 activation byte + accumulator low byte
        assert_eq!(ev.operand_words.len(), 3);
    }

    #[test]
    fn zero_weights_zero_input_all_words_zero() {
        let mut qnet = tiny_fc(8, 4, 1);
        if let Some((codes, _, _)) = qnet.layers[0].weight.as_mut() {
            for c in codes.iter_mut() {
                *c = 0;
            }
        }
        qnet.layers[0].bias = Some(vec![0.0; 4]);
        let x = Tensor::zeros(vec![8]);
        let stream = emit_schedule(&qnet, &x, ScheduleConfig::default()).unwrap();
        assert!(stream.cycle_count() > 0);
        for ev in stream.iter() {
            assert!(ev.operand_words.iter().all(|&w| w == 0));
        }
    }

    #[test]
    fn cycle_count_matches_mac_group_recount() {
        // independent recount: ceil(macs_per_output / lanes) per output
        let g = 16usize;
        let net: Network<f32> = Network::new(
            vec![1, 6, 6],
            vec![
                LayerSpec::Conv2d { out_channels: 2, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { kernel: 2 },
                LayerSpec::FullyConnected { out: 5 },
                LayerSpec::Softmax,
            ],
            9,
        )
        .unwrap();
        let mut rng = Rng::seed_from(2);
        let calib: alloc::vec::Vec<Tensor<f32>> = (0..3)
            .map(|_| Tensor::from_fn(vec![1, 6, 6], |_| rng.next_f32()))
            .collect();
        let qnet = quantize_network(&net, &calib).unwrap();
        let x = Tensor::from_fn(vec![1, 6, 6], |_| rng.next_f32());
        let stream = emit_schedule(&qnet, &x, ScheduleConfig::default()).unwrap();

        // conv: 2 x 4x4 outputs, 9 macs each -> 1 group per output
        let conv_cycles = 2 * 4 * 4 * (9usize).div_ceil(g);
        // relu on 2x4x4
        let relu_cycles = 32;
        // pool to 2x2x2
        let pool_cycles = 8;
        // fc: 5 outputs, 8 inputs -> 1 group each
        let fc_cycles = 5 * (8usize).div_ceil(g);
        // softmax on 5
        let softmax_cycles = 5;
        assert_eq!(
            stream.cycle_count(),
            conv_cycles + relu_cycles + pool_cycles + fc_cycles + softmax_cycles
        );
    }

    #[test]
    fn cycle_count_is_input_independent() {
        let qnet = tiny_fc(10, 3, 7);
        let mut rng = Rng::seed_from(0);
        let a = Tensor::from_fn(vec![10], |_| rng.next_f32());
        let b = Tensor::from_fn(vec![10], |_| rng.next_f32());
        let sa = emit_schedule(&qnet, &a, ScheduleConfig::default()).unwrap();
        let sb = emit_schedule(&qnet, &b, ScheduleConfig::default()).unwrap();
        assert_eq!(sa.cycle_count(), sb.cycle_count());
    }

    #[test]
    fn identical_inputs_identical_streams() {
        let qnet = tiny_fc(10, 3, 7);
        let x = Tensor::from_fn(vec![10], |i| (i as f32) / 10.0);
        let sa = emit_schedule(&qnet, &x, ScheduleConfig::default()).unwrap();
        let sb = emit_schedule(&qnet, &x, ScheduleConfig::default()).unwrap();
        assert_eq!(sa.cycle_count(), sb.cycle_count());
        for (ea, eb) in sa.iter().zip(sb.iter()) {
            assert_eq!(ea.operand_words, eb.operand_words);
        }
    }

    #[test]
    fn layer_index_monotone_nondecreasing() {
        let qnet = tiny_fc(10, 3, 7);
        let x = Tensor::zeros(vec![10]);
        let stream = emit_schedule(&qnet, &x, ScheduleConfig::default()).unwrap();
        let mut last = 0;
        for ev in stream.iter() {
            assert!(ev.layer_index >= last);
            last = ev.layer_index;
        }
    }

    #[test]
    fn quantized_inference_tracks_float_network() {
        // quantized softmax output should stay near the f32 network's as
        // long as calibration covered the activation range
        let net: Network<f32> = Network::new(
            vec![6],
            vec![LayerSpec::FullyConnected { out: 4 }, LayerSpec::Softmax],
            21,
        )
        .unwrap();
        let mut rng = Rng::seed_from(8);
        let calib: alloc::vec::Vec<Tensor<f32>> = (0..32)
            .map(|_| Tensor::from_fn(vec![6], |_| rng.next_f32()))
            .collect();
        let qnet = quantize_network(&net, &calib).unwrap();
        for _ in 0..10 {
            let x = Tensor::from_fn(vec![6], |_| rng.next_f32());
            let exact = net.infer(&x).unwrap();
            let approx = qnet.infer(&x).unwrap();
            // argmax must survive quantization whenever the float call is
            // decisive
            let top = exact.argmax();
            let mut sorted: alloc::vec::Vec<f32> = exact.data().to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted[0] - sorted[1] > 0.1 {
                assert_eq!(top, approx.argmax());
            }
            for (e, a) in exact.data().iter().zip(approx.data().iter()) {
                assert!((e - a).abs() < 0.1, "float {e} vs quantized {a}");
            }
        }
    }
}
