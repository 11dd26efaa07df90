//! Cross-entropy loss over softmax outputs.

use crate::network::{NetError, NetResult, Network, Tape};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Probability floor so the loss and its gradient stay finite.
const PROB_FLOOR: f64 = 1e-12;

/// -ln p[label] on a probability vector.
pub fn cross_entropy<S: Real>(probs: &Tensor<S>, label: usize) -> S {
    let p = probs.data()[label].maximum(S::from_f64(PROB_FLOOR));
    -p.ln()
}

/// d(cross-entropy)/d(probs): -1/p at the label, 0 elsewhere.
pub fn cross_entropy_grad<S: Real>(probs: &Tensor<S>, label: usize) -> Tensor<S> {
    let mut g = Tensor::zeros(probs.shape().to_vec());
    let p = probs.data()[label].maximum(S::from_f64(PROB_FLOOR));
    g.data_mut()[label] = -S::ONE / p;
    g
}

/// Gradient of cross-entropy with respect to the logits feeding the trailing
/// softmax: `p - onehot(label)`. The fused form is exact and avoids the
/// 1/p blow-up of backpropagating through the softmax explicitly.
pub fn softmax_ce_logit_grad<S: Real>(probs: &Tensor<S>, label: usize) -> Tensor<S> {
    let mut g = probs.clone();
    g.data_mut()[label] -= S::ONE;
    g
}

/// Loss and the gradient injected below the trailing softmax, ready for
/// [`Network::backward_from`]. Errors if the network does not end in softmax.
pub fn ce_loss_and_logit_grad<S: Real>(
    net: &Network<S>,
    tape: &Tape<S>,
    label: usize,
) -> NetResult<(S, Tensor<S>, usize)> {
    let logits_layer = net.logits_layer()?;
    let probs = tape.output();
    if label >= probs.len() {
        return Err(NetError::Other(alloc::format!(
            "label {label} outside output arity {}",
            probs.len()
        )));
    }
    Ok((
        cross_entropy(probs, label),
        softmax_ce_logit_grad(probs, label),
        logits_layer,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cross_entropy_nonnegative_and_zero_at_certainty() {
        let p = Tensor::new(vec![3], vec![0.2f64, 0.5, 0.3]).unwrap();
        assert!(cross_entropy(&p, 1) > 0.0);
        let certain = Tensor::new(vec![2], vec![1.0f64, 0.0]).unwrap();
        assert_eq!(cross_entropy(&certain, 0), 0.0);
        // floored, not infinite
        assert!(cross_entropy(&certain, 1).is_finite());
    }

    #[test]
    fn fused_logit_grad_matches_identity() {
        let p = Tensor::new(vec![3], vec![0.1f64, 0.7, 0.2]).unwrap();
        let g = softmax_ce_logit_grad(&p, 1);
        for (got, want) in g.data().iter().zip([0.1, -0.3, 0.2]) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
