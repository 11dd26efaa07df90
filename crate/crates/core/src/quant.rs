//! Symmetric per-tensor int8 quantization and quantized inference.
//!
//! Calibration is min-max over a batch: scale = max|x| / 127, zero point 0.
//! Quantized inference runs conv/fc accumulation in i32 over the int8 codes
//! (the operand traffic the leakage model consumes) and requantizes each
//! layer boundary with its calibrated activation scale.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::layers::LayerSpec;
use crate::network::Network;
use crate::tensor::Tensor;

/// Scale floor so constant-zero tensors never divide by zero.
pub const SCALE_FLOOR: f32 = 1e-8;
pub const QMAX: i32 = 127;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    /// always 0 under symmetric calibration; kept for the checkpoint format
    pub zero_point: i8,
}

impl QuantParams {
    pub fn from_max_abs(max_abs: f32) -> Self {
        QuantParams {
            scale: (max_abs / QMAX as f32).max(SCALE_FLOOR),
            zero_point: 0,
        }
    }

    pub fn calibrate(values: &[f32]) -> Self {
        let mut m = 0.0f32;
        for &v in values {
            let a = v.abs();
            if a > m {
                m = a;
            }
        }
        Self::from_max_abs(m)
    }

    #[inline]
    pub fn quantize(&self, x: f32) -> i8 {
        let q = libm::roundf(x / self.scale);
        q.clamp(-(QMAX as f32), QMAX as f32) as i8
    }

    #[inline]
    pub fn dequantize(&self, code: i8) -> f32 {
        code as f32 * self.scale
    }

    pub fn quantize_all(&self, values: &[f32]) -> Vec<i8> {
        values.iter().map(|&v| self.quantize(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuantError {
    EmptyCalibration,
    UnsupportedLayer { layer: usize, kind: &'static str },
    Net(String),
}

impl fmt::Display for QuantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantError::EmptyCalibration => write!(f, "calibration batch is empty"),
            QuantError::UnsupportedLayer { layer, kind } => {
                write!(f, "layer {layer} ({kind}) cannot be quantized")
            }
            QuantError::Net(s) => write!(f, "{s}"),
        }
    }
}

impl core::error::Error for QuantError {}

#[derive(Clone, Debug)]
pub struct QuantLayer {
    pub spec: LayerSpec,
    /// weight codes + original shape, for conv/fc layers
    pub weight: Option<(Vec<i8>, Vec<usize>, QuantParams)>,
    /// bias stays in real units
    pub bias: Option<Vec<f32>>,
    /// activation params at this layer's output
    pub out_qp: QuantParams,
}

/// An 8-bit network ready for schedule emission.
#[derive(Clone, Debug)]
pub struct QuantizedNetwork {
    pub input_shape: Vec<usize>,
    pub input_qp: QuantParams,
    pub layers: Vec<QuantLayer>,
    /// shape entering each layer (last entry = output shape)
    pub shapes: Vec<Vec<usize>>,
}

/// Quantize a trained victim network with min-max calibration over a batch.
pub fn quantize_network(
    net: &Network<f32>,
    calib: &[Tensor<f32>],
) -> Result<QuantizedNetwork, QuantError> {
    if calib.is_empty() {
        return Err(QuantError::EmptyCalibration);
    }
    for (i, spec) in net.specs().iter().enumerate() {
        match spec {
            LayerSpec::Conv2d { .. }
            | LayerSpec::MaxPool2d { .. }
            | LayerSpec::FullyConnected { .. }
            | LayerSpec::Relu
            | LayerSpec::Softmax => {}
            other => {
                return Err(QuantError::UnsupportedLayer {
                    layer: i,
                    kind: other.name(),
                })
            }
        }
    }

    // activation ranges over the calibration batch, per layer boundary
    let mut max_abs = vec![0.0f32; net.num_layers() + 1];
    for x in calib {
        let tape = net
            .forward_tape(x, None)
            .map_err(|e| QuantError::Net(format!("{e}")))?;
        for (i, act) in tape.activations.iter().enumerate() {
            for &v in act.data() {
                let a = v.abs();
                if a > max_abs[i] {
                    max_abs[i] = a;
                }
            }
        }
    }

    let input_qp = QuantParams::from_max_abs(max_abs[0]);
    let mut layers = Vec::with_capacity(net.num_layers());
    let mut shapes = vec![net.input_shape().to_vec()];
    for (i, spec) in net.specs().iter().enumerate() {
        shapes.push(net.layer_input_shape(i + 1).to_vec());
        let (weight, bias) = if spec.is_parameterized() {
            let w = &net.params()[i][0];
            let b = &net.params()[i][1];
            let qp = QuantParams::calibrate(w.data());
            (
                Some((qp.quantize_all(w.data()), w.shape().to_vec(), qp)),
                Some(b.data().to_vec()),
            )
        } else {
            (None, None)
        };
        layers.push(QuantLayer {
            spec: spec.clone(),
            weight,
            bias,
            out_qp: QuantParams::from_max_abs(max_abs[i + 1]),
        });
    }
    Ok(QuantizedNetwork {
        input_shape: net.input_shape().to_vec(),
        input_qp,
        layers,
        shapes,
    })
}

impl QuantizedNetwork {
    pub fn output_arity(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    /// Quantize an input with the network's input params.
    pub fn quantize_input(&self, x: &Tensor<f32>) -> Vec<i8> {
        self.input_qp.quantize_all(x.data())
    }

    /// Run quantized inference and return the dequantized output
    /// probabilities. See `schedule::emit_schedule` for the cycle-accurate
    /// variant that also reports operand traffic.
    pub fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, QuantError> {
        let (out, _) = crate::schedule::run_quantized(self, x, None)
            .map_err(|e| QuantError::Net(format!("{e}")))?;
        Ok(out)
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<usize, QuantError> {
        Ok(self.infer(x)?.argmax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn ternary_weights_scale_is_one_over_127() {
        let qp = QuantParams::calibrate(&[-1.0, 0.0, 1.0, 1.0, -1.0]);
        assert!((qp.scale - 1.0 / 127.0).abs() < 1e-9);
        assert_eq!(qp.zero_point, 0);
        assert_eq!(qp.quantize(1.0), 127);
        assert_eq!(qp.quantize(-1.0), -127);
        assert_eq!(qp.quantize(0.0), 0);
    }

    #[test]
    fn all_zero_tensor_gets_floor_scale() {
        let qp = QuantParams::calibrate(&[0.0; 16]);
        assert_eq!(qp.scale, SCALE_FLOOR);
        assert_eq!(qp.quantize(0.0), 0);
    }

    #[test]
    fn round_trip_error_bounded_by_half_scale() {
        let mut rng = Rng::seed_from(5);
        for _ in 0..50 {
            let vals: alloc::vec::Vec<f32> =
                (0..64).map(|_| rng.range_f64(-3.0, 3.0) as f32).collect();
            let qp = QuantParams::calibrate(&vals);
            for &v in &vals {
                let rt = qp.dequantize(qp.quantize(v));
                assert!(
                    (rt - v).abs() <= qp.scale / 2.0 + 1e-6,
                    "v={v} rt={rt} scale={}",
                    qp.scale
                );
            }
        }
    }
}
