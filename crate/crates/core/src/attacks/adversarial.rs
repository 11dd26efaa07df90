//! White-box adversarial input crafting against a victim network.

use alloc::vec::Vec;

use super::AttackError;
use crate::loss::ce_loss_and_logit_grad;
use crate::network::Network;
use crate::tensor::Tensor;

type Result<T> = core::result::Result<T, AttackError>;

/// A successful adversarial example and its distortion.
#[derive(Clone, Debug)]
pub struct Adversarial {
    pub input: Tensor<f32>,
    /// L2 distance to the clean input
    pub distortion: f64,
}

fn clip01(x: &mut Tensor<f32>) {
    for v in x.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Gradient of the cross-entropy loss w.r.t. the input.
fn input_gradient(net: &Network<f32>, x: &Tensor<f32>, label: usize) -> Result<Tensor<f32>> {
    let tape = net.forward_tape(x, None)?;
    let (_, logit_grad, logits_layer) = ce_loss_and_logit_grad(net, &tape, label)?;
    let grads = net.backward_from(&tape, logits_layer, &logit_grad, false)?;
    grads
        .input
        .check_finite()
        .map_err(|_| AttackError::NonFiniteGradient)?;
    Ok(grads.input)
}

/// Single-step sign attack: x + eps * sign(dL/dx), clipped to [0,1].
pub fn fgsm(net: &Network<f32>, x: &Tensor<f32>, label: usize, eps: f64) -> Result<Tensor<f32>> {
    if eps < 0.0 {
        return Err(AttackError::BadParam(alloc::format!("eps {eps}")));
    }
    let g = input_gradient(net, x, label)?;
    let mut adv = x.clone();
    let e = eps as f32;
    for (a, gv) in adv.data_mut().iter_mut().zip(g.data().iter()) {
        *a += e * sign(*gv);
    }
    clip01(&mut adv);
    Ok(adv)
}

#[inline]
fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Iterative L2 attack: normalized gradient steps projected onto the
/// eps-ball around the clean input, clipped to [0,1] each step.
pub fn pgd(
    net: &Network<f32>,
    x: &Tensor<f32>,
    label: usize,
    eps: f64,
    step_size: f64,
    steps: usize,
) -> Result<Tensor<f32>> {
    if steps == 0 {
        return Err(AttackError::BadParam("steps 0".into()));
    }
    let mut adv = x.clone();
    for _ in 0..steps {
        let g = input_gradient(net, &adv, label)?;
        let norm = g.l2_norm();
        if norm > 0.0 {
            adv.add_scaled(&g, (step_size / norm) as f32);
        }
        // project onto the L2 ball around x
        let mut delta: Vec<f32> = adv
            .data()
            .iter()
            .zip(x.data().iter())
            .map(|(a, c)| a - c)
            .collect();
        let dnorm = libm::sqrt(delta.iter().map(|&d| (d as f64) * (d as f64)).sum());
        if dnorm > eps {
            let scale = (eps / dnorm) as f32;
            for d in &mut delta {
                *d *= scale;
            }
        }
        for ((a, c), d) in adv.data_mut().iter_mut().zip(x.data().iter()).zip(delta.iter()) {
            *a = (c + d).clamp(0.0, 1.0);
        }
    }
    Ok(adv)
}

#[derive(Clone, Copy, Debug)]
pub struct CwConfig {
    pub c_lo: f64,
    pub c_hi: f64,
    pub binary_steps: usize,
    pub max_iter: usize,
    pub lr: f64,
    /// confidence margin kappa in the f6 objective
    pub kappa: f64,
    /// bisection steps of the final boundary polish along the segment back
    /// to the clean input
    pub refine_steps: usize,
}

impl Default for CwConfig {
    fn default() -> Self {
        CwConfig {
            c_lo: 0.01,
            c_hi: 1e10,
            binary_steps: 9,
            max_iter: 200,
            lr: 0.05,
            kappa: 0.0,
            refine_steps: 25,
        }
    }
}

fn atanh_clamped(x: f32) -> f64 {
    let t = (2.0 * x as f64 - 1.0).clamp(-0.999999, 0.999999);
    0.5 * libm::log((1.0 + t) / (1.0 - t))
}

/// Logits = activation entering the trailing softmax.
fn logits_of(net: &Network<f32>, x: &Tensor<f32>) -> Result<(Tensor<f32>, usize)> {
    let logits_layer = net.logits_layer()?;
    let tape = net.forward_tape(x, None)?;
    Ok((tape.activations[logits_layer + 1].clone(), logits_layer))
}

fn runner_up(logits: &[f32], label: usize) -> usize {
    let mut best = usize::MAX;
    for j in 0..logits.len() {
        if j != label && (best == usize::MAX || logits[j] > logits[best]) {
            best = j;
        }
    }
    best
}

/// Minimal-L2 attack via tanh-space descent on |x'-x|^2 + c * f6, with a
/// log-space binary search over c. Returns the best adversarial found, or
/// `None` if no setting produced one within budget.
pub fn cw_l2(
    net: &Network<f32>,
    x: &Tensor<f32>,
    label: usize,
    cfg: &CwConfig,
) -> Result<Option<Adversarial>> {
    // already misclassified: the zero perturbation is optimal
    let clean_pred = net.infer(x)?.argmax();
    if clean_pred != label {
        return Ok(Some(Adversarial {
            input: x.clone(),
            distortion: 0.0,
        }));
    }

    let n = x.len();
    let w0: Vec<f64> = x.data().iter().map(|&v| atanh_clamped(v)).collect();
    let mut best: Option<Adversarial> = None;

    let mut lo = cfg.c_lo;
    let mut hi = cfg.c_hi;
    for _ in 0..cfg.binary_steps {
        let c = libm::sqrt(lo * hi);
        let mut w = w0.clone();
        let mut found_here = false;
        for _ in 0..cfg.max_iter {
            // x' = (tanh(w) + 1) / 2
            let mut xp = Tensor::zeros(x.shape().to_vec());
            let mut dxp_dw = Vec::with_capacity(n);
            for (i, v) in xp.data_mut().iter_mut().enumerate() {
                let t = libm::tanh(w[i]);
                *v = ((t + 1.0) / 2.0) as f32;
                dxp_dw.push((1.0 - t * t) / 2.0);
            }

            let (logits, logits_layer) = logits_of(net, &xp)?;
            let pred = logits.argmax();
            let j = runner_up(logits.data(), label);
            let margin = (logits.data()[label] - logits.data()[j]) as f64;

            if pred != label {
                found_here = true;
                let dist = xp
                    .data()
                    .iter()
                    .zip(x.data().iter())
                    .map(|(a, b)| ((a - b) as f64) * ((a - b) as f64))
                    .sum::<f64>();
                let dist = libm::sqrt(dist);
                if best.as_ref().map_or(true, |b| dist < b.distortion) {
                    best = Some(Adversarial {
                        input: xp.clone(),
                        distortion: dist,
                    });
                }
            }

            // gradient of c * f6 through the logits (zero when clamped)
            let mut total = Tensor::zeros(x.shape().to_vec());
            if margin > -cfg.kappa {
                let mut logit_grad = Tensor::zeros(logits.shape().to_vec());
                logit_grad.data_mut()[label] = c as f32;
                logit_grad.data_mut()[j] = -(c as f32);
                let tape = net.forward_tape(&xp, None)?;
                let g = net.backward_from(&tape, logits_layer, &logit_grad, false)?;
                total.add_assign(&g.input);
            }
            // gradient of the distance term
            for (t, (a, b)) in total.data_mut().iter_mut().zip(xp.data().iter().zip(x.data())) {
                *t += 2.0 * (a - b);
            }
            total
                .check_finite()
                .map_err(|_| AttackError::NonFiniteGradient)?;

            for i in 0..n {
                w[i] -= cfg.lr * total.data()[i] as f64 * dxp_dw[i];
            }
        }
        if found_here {
            hi = c;
        } else {
            lo = c;
        }
    }

    // polish: bisect the segment from the clean input to the found point
    // for the label-flip crossing, keeping the smallest adversarial
    if let Some(found) = &mut best {
        let mut lo_t = 0.0f64;
        let mut hi_t = 1.0f64;
        for _ in 0..cfg.refine_steps {
            let mid = 0.5 * (lo_t + hi_t);
            let probe = Tensor::from_fn(x.shape().to_vec(), |i| {
                let a = x.data()[i] as f64;
                let b = found.input.data()[i] as f64;
                (a + mid * (b - a)) as f32
            });
            if net.infer(&probe)?.argmax() != label {
                hi_t = mid;
            } else {
                lo_t = mid;
            }
        }
        if hi_t < 1.0 {
            let polished = Tensor::from_fn(x.shape().to_vec(), |i| {
                let a = x.data()[i] as f64;
                let b = found.input.data()[i] as f64;
                (a + hi_t * (b - a)) as f32
            });
            if net.infer(&polished)?.argmax() != label {
                let dist = polished
                    .data()
                    .iter()
                    .zip(x.data().iter())
                    .map(|(a, b)| ((a - b) as f64) * ((a - b) as f64))
                    .sum::<f64>();
                found.input = polished;
                found.distortion = libm::sqrt(dist);
            }
        }
    }
    Ok(best)
}

/// Iterative minimal-perturbation attack using per-class linearization;
/// overshoot 1.02. Returns `None` if the label never flips in budget.
pub fn deepfool(net: &Network<f32>, x: &Tensor<f32>, max_iter: usize) -> Result<Option<Adversarial>> {
    let orig = net.infer(x)?.argmax();
    let mut adv = x.clone();
    let logits_layer = net.logits_layer()?;

    for _ in 0..max_iter {
        let tape = net.forward_tape(&adv, None)?;
        let logits = tape.activations[logits_layer + 1].clone();
        if logits.argmax() != orig {
            let dist = adv
                .data()
                .iter()
                .zip(x.data().iter())
                .map(|(a, b)| ((a - b) as f64) * ((a - b) as f64))
                .sum::<f64>();
            return Ok(Some(Adversarial {
                input: adv,
                distortion: libm::sqrt(dist),
            }));
        }
        let classes = logits.len();
        // per-class input gradients of the logit differences
        let grad_of = |k: usize| -> Result<Tensor<f32>> {
            let mut g = Tensor::zeros(logits.shape().to_vec());
            g.data_mut()[k] = 1.0;
            Ok(net.backward_from(&tape, logits_layer, &g, false)?.input)
        };
        let w_orig = grad_of(orig)?;
        let mut best: Option<(f64, Tensor<f32>, f64)> = None;
        for k in 0..classes {
            if k == orig {
                continue;
            }
            let mut w_k = grad_of(k)?;
            for (a, b) in w_k.data_mut().iter_mut().zip(w_orig.data().iter()) {
                *a -= *b;
            }
            let f_k = (logits.data()[k] - logits.data()[orig]) as f64;
            let norm = w_k.l2_norm();
            if norm < 1e-12 {
                continue;
            }
            let ratio = libm::fabs(f_k) / norm;
            if best.as_ref().map_or(true, |(r, _, _)| ratio < *r) {
                best = Some((ratio, w_k, f_k));
            }
        }
        let Some((_, w_diff, f_k)) = best else {
            return Ok(None);
        };
        let wnorm = w_diff.l2_norm();
        let norm2 = wnorm * wnorm;
        let scale = ((libm::fabs(f_k) + 1e-6) / norm2 * 1.02) as f32;
        adv.add_scaled(&w_diff, scale);
        clip01(&mut adv);
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;
    use crate::rng::Rng;

    /// logistic-style model: 2 classes on an 8-pixel input
    fn linear_model(seed: u64) -> Network<f32> {
        Network::new(
            vec![8],
            vec![LayerSpec::FullyConnected { out: 2 }, LayerSpec::Softmax],
            seed,
        )
        .unwrap()
    }

    fn mid_input() -> Tensor<f32> {
        Tensor::full(alloc::vec![8], 0.5)
    }

    #[test]
    fn fgsm_zero_eps_is_identity() {
        let net = linear_model(3);
        let x = mid_input();
        let adv = fgsm(&net, &x, 0, 0.0).unwrap();
        assert_eq!(adv.data(), x.data());
    }

    #[test]
    fn fgsm_linf_budget_respected() {
        let net = linear_model(3);
        let x = mid_input();
        let adv = fgsm(&net, &x, 0, 0.5).unwrap();
        for (a, c) in adv.data().iter().zip(x.data().iter()) {
            assert!((a - c).abs() <= 0.5 + 1e-6);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn fgsm_direction_matches_analytic_logistic_gradient() {
        // with one pixel and a known weight sign, the cross-entropy gradient
        // direction for the true class is opposite the class weight margin
        let mut net = Network::new(
            alloc::vec![1],
            alloc::vec![LayerSpec::FullyConnected { out: 2 }, LayerSpec::Softmax],
            0,
        )
        .unwrap();
        {
            let w = net.params_mut()[0][0].data_mut();
            // logit_0 = 2x, logit_1 = -x; true class 1 -> dL/dx = w0 - w1 > 0
            w[0] = 2.0;
            w[1] = -1.0;
        }
        let x = Tensor::scalar(0.5f32);
        let adv = fgsm(&net, &x, 1, 0.25).unwrap();
        // gradient positive, so the attack pushes x up
        assert!((adv.data()[0] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn pgd_l2_budget_respected() {
        let net = linear_model(7);
        let x = mid_input();
        let eps = 0.5;
        let adv = pgd(&net, &x, 0, eps, 8.0 / 255.0, 40).unwrap();
        let d: f64 = adv
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        assert!(libm::sqrt(d) <= eps + 1e-6);
    }

    #[test]
    fn pgd_single_step_matches_normalized_gradient_step() {
        let net = linear_model(9);
        let x = mid_input();
        let step = 0.01;
        let adv = pgd(&net, &x, 0, 10.0, step, 1).unwrap();
        let g = input_gradient(&net, &x, 0).unwrap();
        let norm = g.l2_norm();
        for ((a, c), gv) in adv.data().iter().zip(x.data()).zip(g.data()) {
            let expect = (c + (step / norm) as f32 * gv).clamp(0.0, 1.0);
            assert!((a - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn cw_returns_clean_input_when_already_misclassified() {
        let net = linear_model(5);
        let x = mid_input();
        let pred = net.infer(&x).unwrap().argmax();
        let wrong = 1 - pred;
        let r = cw_l2(&net, &x, wrong, &CwConfig::default()).unwrap().unwrap();
        assert_eq!(r.distortion, 0.0);
        assert_eq!(r.input.data(), x.data());
    }

    #[test]
    fn cw_success_flips_label_and_nears_hyperplane_distance() {
        // the minimal L2 distortion to flip a linear 2-class model is the
        // point-to-decision-boundary distance |margin| / |w0 - w1|
        let mut rng = Rng::seed_from(40);
        let mut checked = 0;
        for seed in 0..20u64 {
            let net = linear_model(seed);
            let x = Tensor::from_fn(alloc::vec![8], |_| rng.range_f64(0.3, 0.7) as f32);
            let label = net.infer(&x).unwrap().argmax();
            let cfg = CwConfig {
                max_iter: 2000,
                binary_steps: 12,
                lr: 0.02,
                ..CwConfig::default()
            };
            let Some(adv) = cw_l2(&net, &x, label, &cfg).unwrap() else {
                continue;
            };
            assert_ne!(net.infer(&adv.input).unwrap().argmax(), label);

            let w = net.params()[0][0].data();
            let b = net.params()[0][1].data();
            let mut margin = (b[label] - b[1 - label]) as f64;
            let mut wnorm2 = 0.0;
            for i in 0..8 {
                let diff = (w[i * 2 + label] - w[i * 2 + (1 - label)]) as f64;
                margin += diff * x.data()[i] as f64;
                wnorm2 += diff * diff;
            }
            let analytic = margin.abs() / libm::sqrt(wnorm2);
            // interior optimum only; clipping makes the bound loose
            if adv
                .input
                .data()
                .iter()
                .all(|&v| (0.001..=0.999).contains(&v))
            {
                assert!(
                    (adv.distortion - analytic).abs() / analytic < 0.05,
                    "seed {seed}: cw {} vs analytic {}",
                    adv.distortion,
                    analytic
                );
                checked += 1;
            }
        }
        assert!(checked >= 5, "too few interior optima exercised: {checked}");
    }

    #[test]
    fn deepfool_one_step_on_linear_model_matches_margin() {
        let mut rng = Rng::seed_from(77);
        let mut checked = 0;
        for seed in 0..20u64 {
            let net = linear_model(seed + 100);
            let x = Tensor::from_fn(alloc::vec![8], |_| rng.range_f64(0.3, 0.7) as f32);
            let label = net.infer(&x).unwrap().argmax();
            let Some(adv) = deepfool(&net, &x, 50).unwrap() else {
                continue;
            };
            assert_ne!(net.infer(&adv.input).unwrap().argmax(), label);
            let w = net.params()[0][0].data();
            let b = net.params()[0][1].data();
            let mut margin = (b[label] - b[1 - label]) as f64;
            let mut wnorm2 = 0.0;
            for i in 0..8 {
                let diff = (w[i * 2 + label] - w[i * 2 + (1 - label)]) as f64;
                margin += diff * x.data()[i] as f64;
                wnorm2 += diff * diff;
            }
            let analytic = margin.abs() / libm::sqrt(wnorm2);
            if adv
                .input
                .data()
                .iter()
                .all(|&v| (0.001..=0.999).contains(&v))
            {
                // overshoot 1.02 puts the distortion just past the margin
                assert!(
                    adv.distortion >= analytic * 0.98 && adv.distortion <= analytic * 1.06,
                    "seed {seed}: deepfool {} vs analytic {}",
                    adv.distortion,
                    analytic
                );
                checked += 1;
            }
        }
        assert!(checked >= 5, "too few interior flips exercised: {checked}");
    }
}
