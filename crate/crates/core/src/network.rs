//! Sequential networks: construction, taped forward passes, and
//! reverse-mode backpropagation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::layers::{
    backward_layer, forward_layer, init_params, output_shape, LayerCache, LayerError, LayerSpec,
};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum NetError {
    Layer(LayerError),
    /// input shape does not match the network's declared input
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    /// a layer produced NaN or infinity
    NonFinite { layer: usize },
    /// request referenced a layer the network does not have
    NoSuchLayer { layer: usize },
    /// operation requires a trailing softmax (logit access)
    NoLogits,
    Other(String),
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetError::Layer(e) => write!(f, "{e}"),
            NetError::InputShape { expected, got } => {
                write!(f, "input shape {got:?} does not match network input {expected:?}")
            }
            NetError::NonFinite { layer } => write!(f, "non-finite activation after layer {layer}"),
            NetError::NoSuchLayer { layer } => write!(f, "no layer {layer}"),
            NetError::NoLogits => write!(f, "network has no trailing softmax layer"),
            NetError::Other(s) => write!(f, "{s}"),
        }
    }
}

impl core::error::Error for NetError {}

impl From<LayerError> for NetError {
    fn from(e: LayerError) -> Self {
        NetError::Layer(e)
    }
}

pub type NetResult<T> = Result<T, NetError>;

/// A sequential network with per-layer parameter tensors.
#[derive(Clone, Debug)]
pub struct Network<S: Real = f32> {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    params: Vec<Vec<Tensor<S>>>,
    /// shape entering each layer; last entry is the output shape
    shapes: Vec<Vec<usize>>,
    seed: u64,
}

/// Activations recorded by a taped forward pass: `activations[0]` is the
/// input, `activations[i + 1]` the output of layer `i`.
pub struct Tape<S: Real> {
    pub activations: Vec<Tensor<S>>,
    caches: Vec<LayerCache<S>>,
}

impl<S: Real> Tape<S> {
    pub fn output(&self) -> &Tensor<S> {
        self.activations.last().expect("tape has at least the input")
    }
}

/// Gradients from a backward pass. `params[i]` mirrors the layer's parameter
/// tensors (all-zero tensors for frozen/parameterless layers in range, so a
/// present-but-zero gradient is distinguishable from an absent one).
pub struct Gradients<S: Real> {
    pub input: Tensor<S>,
    pub params: Vec<Vec<Tensor<S>>>,
    /// d(loss)/d(activation) entering each layer, populated on request
    pub activations: Option<Vec<Tensor<S>>>,
}

impl<S: Real> Network<S> {
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>, seed: u64) -> NetResult<Self> {
        let mut shapes = vec![input_shape.clone()];
        for (i, spec) in specs.iter().enumerate() {
            let next = output_shape(spec, i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        let mut rng = Rng::seed_from(seed);
        let params = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| init_params(spec, &shapes[i], &mut rng))
            .collect();
        Ok(Network {
            input_shape,
            specs,
            params,
            shapes,
            seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn layer_input_shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.specs.len()
    }

    pub fn params(&self) -> &[Vec<Tensor<S>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Tensor<S>>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(|t| t.len()).sum()
    }

    /// Index of the layer producing logits, i.e. the one feeding a trailing
    /// softmax.
    pub fn logits_layer(&self) -> NetResult<usize> {
        match self.specs.last() {
            Some(LayerSpec::Softmax) if self.specs.len() >= 2 => Ok(self.specs.len() - 2),
            _ => Err(NetError::NoLogits),
        }
    }

    fn check_input(&self, input: &Tensor<S>) -> NetResult<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(NetError::InputShape {
                expected: self.input_shape.clone(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Inference-mode forward pass (dropout inactive, no tape).
    pub fn infer(&self, input: &Tensor<S>) -> NetResult<Tensor<S>> {
        self.check_input(input)?;
        let mut current = input.clone();
        for (i, spec) in self.specs.iter().enumerate() {
            let out = forward_layer(spec, &self.params[i], &current, false, None);
            out.output
                .check_finite()
                .map_err(|_| NetError::NonFinite { layer: i })?;
            current = out.output;
        }
        Ok(current)
    }

    /// Forward pass recording the tape needed by [`Network::backward`].
    /// Training mode (dropout active) is selected by passing the rng.
    pub fn forward_tape(
        &self,
        input: &Tensor<S>,
        mut train_rng: Option<&mut Rng>,
    ) -> NetResult<Tape<S>> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.specs.len() + 1);
        let mut caches = Vec::with_capacity(self.specs.len());
        activations.push(input.clone());
        for (i, spec) in self.specs.iter().enumerate() {
            let out = forward_layer(
                spec,
                &self.params[i],
                activations.last().unwrap(),
                true,
                train_rng.as_deref_mut(),
            );
            out.output
                .check_finite()
                .map_err(|_| NetError::NonFinite { layer: i })?;
            activations.push(out.output);
            caches.push(out.cache);
        }
        Ok(Tape { activations, caches })
    }

    /// Backpropagate from the network output.
    pub fn backward(&self, tape: &Tape<S>, output_grad: &Tensor<S>) -> NetResult<Gradients<S>> {
        self.backward_from(tape, self.specs.len() - 1, output_grad, false)
    }

    /// Backpropagate a gradient injected at the output of `from_layer`.
    /// Layers above `from_layer` receive zero parameter gradients.
    /// `collect_activation_grads` additionally records d(loss)/d(input) of
    /// every layer up to `from_layer` (used by the activation-map analysis).
    pub fn backward_from(
        &self,
        tape: &Tape<S>,
        from_layer: usize,
        grad: &Tensor<S>,
        collect_activation_grads: bool,
    ) -> NetResult<Gradients<S>> {
        if from_layer >= self.specs.len() {
            return Err(NetError::NoSuchLayer { layer: from_layer });
        }
        let expected = tape.activations[from_layer + 1].shape();
        if grad.shape() != expected {
            return Err(NetError::InputShape {
                expected: expected.to_vec(),
                got: grad.shape().to_vec(),
            });
        }

        let mut param_grads: Vec<Vec<Tensor<S>>> = self
            .params
            .iter()
            .map(|ts| ts.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect())
            .collect();
        let mut act_grads: Vec<Tensor<S>> = Vec::new();

        let mut current = grad.clone();
        for i in (0..=from_layer).rev() {
            let (dx, dparams) = backward_layer(
                &self.specs[i],
                &self.params[i],
                &tape.activations[i],
                &tape.activations[i + 1],
                &tape.caches[i],
                &current,
            );
            for (slot, g) in param_grads[i].iter_mut().zip(dparams.into_iter()) {
                *slot = g;
            }
            if collect_activation_grads {
                act_grads.push(dx.clone());
            }
            current = dx;
        }
        if collect_activation_grads {
            act_grads.reverse();
        }
        Ok(Gradients {
            input: current,
            params: param_grads,
            activations: collect_activation_grads.then_some(act_grads),
        })
    }

    /// Convert the network to another scalar type (used by the gradient
    /// checker to run the same algebra in f64).
    pub fn convert<T: Real>(&self) -> Network<T> {
        Network {
            input_shape: self.input_shape.clone(),
            specs: self.specs.clone(),
            params: self
                .params
                .iter()
                .map(|ts| ts.iter().map(|t| t.convert()).collect())
                .collect(),
            shapes: self.shapes.clone(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_fc_net() -> Network<f32> {
        // 3 -> 3 fully connected with identity weights
        let mut net = Network::new(vec![3], vec![LayerSpec::FullyConnected { out: 3 }], 0).unwrap();
        let w = net.params_mut()[0][0].data_mut();
        for v in w.iter_mut() {
            *v = 0.0;
        }
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        net
    }

    #[test]
    fn identity_fully_connected_is_identity() {
        let net = identity_fc_net();
        let x = Tensor::new(vec![3], vec![0.5, -1.25, 3.0]).unwrap();
        let y = net.infer(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn gelu_values_match_gaussian_cdf_form() {
        let net = Network::<f64>::new(vec![1], vec![LayerSpec::Gelu], 0).unwrap();
        // GELU(0) = 0
        let y0 = net.infer(&Tensor::scalar(0.0)).unwrap();
        assert_eq!(y0.data()[0], 0.0);
        // GELU(1) = Phi(1), high-precision reference 0.8413447460685429
        let y1 = net.infer(&Tensor::scalar(1.0)).unwrap();
        assert!((y1.data()[0] - 0.841345).abs() < 1e-5, "{}", y1.data()[0]);
    }

    #[test]
    fn softmax_output_sums_to_one() {
        let net = Network::<f32>::new(
            vec![4],
            vec![LayerSpec::FullyConnected { out: 4 }, LayerSpec::Softmax],
            7,
        )
        .unwrap();
        let x = Tensor::new(vec![4], vec![0.1, -2.0, 3.0, 0.0]).unwrap();
        let y = net.infer(&x).unwrap();
        let s: f32 = y.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }

    #[test]
    fn linear_backward_is_outer_product() {
        // y = W x, loss = sum(y): dL/dW = outer(x, 1)
        let net = identity_fc_net();
        let x = Tensor::new(vec![3], vec![2.0, -1.0, 0.5]).unwrap();
        let tape = net.forward_tape(&x, None).unwrap();
        let ones = Tensor::full(vec![3], 1.0);
        let grads = net.backward(&tape, &ones).unwrap();
        let dw = &grads.params[0][0];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(dw.data()[i * 3 + j], x.data()[i]);
            }
        }
    }

    #[test]
    fn frozen_layer_grads_present_not_absent() {
        // inject gradient below the top layer: the top layer's grads exist
        // and are zero
        let net = Network::<f32>::new(
            vec![4],
            vec![
                LayerSpec::FullyConnected { out: 4 },
                LayerSpec::FullyConnected { out: 2 },
            ],
            3,
        )
        .unwrap();
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let tape = net.forward_tape(&x, None).unwrap();
        let g = Tensor::full(vec![4], 1.0);
        let grads = net.backward_from(&tape, 0, &g, false).unwrap();
        assert_eq!(grads.params[1].len(), 2);
        assert!(grads.params[1][0].data().iter().all(|&v| v == 0.0));
        assert!(grads.params[1][1].data().iter().all(|&v| v == 0.0));
        assert!(grads.params[0][0].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn dropout_identity_when_rate_zero_or_eval() {
        let net = Network::<f32>::new(vec![8], vec![LayerSpec::Dropout { rate: 0.0 }], 0).unwrap();
        let x = Tensor::from_fn(vec![8], |i| i as f32);
        let mut rng = Rng::seed_from(1);
        let tape = net.forward_tape(&x, Some(&mut rng)).unwrap();
        assert_eq!(tape.output().data(), x.data());

        let net = Network::<f32>::new(vec![8], vec![LayerSpec::Dropout { rate: 0.9 }], 0).unwrap();
        let y = net.infer(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn input_shape_mismatch_is_reported() {
        let net = identity_fc_net();
        let x = Tensor::zeros(vec![4]);
        match net.infer(&x) {
            Err(NetError::InputShape { .. }) => {}
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn nonfinite_intermediate_is_reported() {
        let mut net = identity_fc_net();
        net.params_mut()[0][0].data_mut()[0] = f32::INFINITY;
        let x = Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
        match net.infer(&x) {
            Err(NetError::NonFinite { layer: 0 }) => {}
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
