//! Central-finite-difference gradient checking.
//!
//! This is the independent oracle for the backward pass: analytic gradients
//! from reverse mode are compared against (L(θ+h) - L(θ-h)) / 2h per
//! parameter. It runs in f64; in f32 the difference quotient is dominated by
//! rounding noise at useful step sizes.

use alloc::vec::Vec;

use crate::layers::LayerSpec;
use crate::loss::{ce_loss_and_logit_grad, cross_entropy};
use crate::network::{NetError, NetResult, Network, Tape};
use crate::tensor::Tensor;

/// Parameter budget guard: finite differences are O(params) forward passes.
pub const MAX_CHECKED_PARAMS: usize = 10_000;

/// Scalar loss used by the checker: cross-entropy against class 0 when the
/// network ends in softmax, otherwise the sum of the outputs.
fn check_loss(net: &Network<f64>, tape: &Tape<f64>) -> f64 {
    if net.logits_layer().is_ok() {
        cross_entropy(tape.output(), 0)
    } else {
        tape.output().data().iter().sum()
    }
}

fn analytic_grads(net: &Network<f64>, input: &Tensor<f64>) -> NetResult<Vec<Vec<Tensor<f64>>>> {
    let tape = net.forward_tape(input, None)?;
    let grads = if net.logits_layer().is_ok() {
        let (_, logit_grad, logits_layer) = ce_loss_and_logit_grad(net, &tape, 0)?;
        net.backward_from(&tape, logits_layer, &logit_grad, false)?
    } else {
        let ones = Tensor::full(tape.output().shape().to_vec(), 1.0);
        net.backward(&tape, &ones)?
    };
    Ok(grads.params)
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients over every parameter of the network.
pub fn check_gradients(net: &Network<f64>, input: &Tensor<f64>, h: f64) -> NetResult<f64> {
    if net.param_count() > MAX_CHECKED_PARAMS {
        return Err(NetError::Other(alloc::format!(
            "gradient check limited to {MAX_CHECKED_PARAMS} parameters, network has {}",
            net.param_count()
        )));
    }
    let analytic = analytic_grads(net, input)?;

    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for layer in 0..net.num_layers() {
        for t in 0..net.params()[layer].len() {
            for i in 0..net.params()[layer][t].len() {
                let base = net.params()[layer][t].data()[i];

                probe.params_mut()[layer][t].data_mut()[i] = base + h;
                let tape = probe.forward_tape(input, None)?;
                let up = check_loss(&probe, &tape);

                probe.params_mut()[layer][t].data_mut()[i] = base - h;
                let tape = probe.forward_tape(input, None)?;
                let down = check_loss(&probe, &tape);

                probe.params_mut()[layer][t].data_mut()[i] = base;

                let numeric = (up - down) / (2.0 * h);
                let err = relative_error(analytic[layer][t].data()[i], numeric);
                if err > worst {
                    worst = err;
                }
            }
        }
    }
    Ok(worst)
}

/// Convenience used by the property suites: build a net from specs and check
/// a random input.
pub fn check_layer_stack(
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    seed: u64,
    h: f64,
) -> NetResult<f64> {
    let net: Network<f64> = Network::new(input_shape.clone(), specs, seed)?;
    let mut rng = crate::rng::Rng::derive(seed, 0x9ad);
    let input = Tensor::from_fn(input_shape, |_| rng.range_f64(-1.0, 1.0));
    check_gradients(&net, &input, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_net_is_exact_to_rounding() {
        let err = check_layer_stack(vec![6], vec![LayerSpec::FullyConnected { out: 4 }], 5, 1e-3)
            .unwrap();
        assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        // the checker itself must notice a broken gradient
        let net: Network<f64> =
            Network::new(vec![4], vec![LayerSpec::FullyConnected { out: 3 }], 9).unwrap();
        let mut rng = crate::rng::Rng::seed_from(2);
        let input = Tensor::from_fn(vec![4], |_| rng.range_f64(-1.0, 1.0));
        let analytic = analytic_grads(&net, &input).unwrap();
        // recompute one numeric derivative and compare against a corrupted
        // analytic value
        let h = 1e-3;
        let mut probe = net.clone();
        let base = net.params()[0][0].data()[0];
        probe.params_mut()[0][0].data_mut()[0] = base + h;
        let up: f64 = probe.infer(&input).unwrap().data().iter().sum();
        probe.params_mut()[0][0].data_mut()[0] = base - h;
        let down: f64 = probe.infer(&input).unwrap().data().iter().sum();
        let numeric = (up - down) / (2.0 * h);
        let corrupted = analytic[0][0].data()[0] + 0.1;
        assert!(relative_error(corrupted, numeric) > 1e-2);
    }

    #[test]
    fn budget_guard_refuses_large_nets() {
        let net: Network<f64> = Network::new(
            vec![200],
            vec![LayerSpec::FullyConnected { out: 200 }],
            0,
        )
        .unwrap();
        let input = Tensor::zeros(vec![200]);
        assert!(check_gradients(&net, &input, 1e-3).is_err());
    }
}
