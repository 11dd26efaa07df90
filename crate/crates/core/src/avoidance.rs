//! Black-box detection-avoidance attack: NES gradient estimation over the
//! trace -> detector pipeline with momentum sign updates, box clipping, and
//! norm projection.
//!
//! One iteration draws d' antithetic Gaussian probes, queries the loss
//! oracle at the box-clipped probe points, and averages loss-weighted probe
//! directions into a gradient estimate; the perturbation then takes a signed
//! momentum step and is re-clipped and norm-projected.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::detector::DetectorConfig;
use crate::leakage::{apply_placement, pdn_filter, switching_activity, PdnParams, PlacementProfile};
use crate::loss::cross_entropy;
use crate::network::Network;
use crate::quant::QuantizedNetwork;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::schedule::{emit_schedule, ScheduleConfig};
use crate::tdc::{sample_trace, Calibration, TdcConfig, TraceLabel, TraceMeta};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L2,
    LInf,
}

impl Norm {
    pub fn eval(&self, delta: &Tensor<f32>) -> f64 {
        match self {
            Norm::L2 => delta.l2_norm(),
            Norm::LInf => delta.max_abs(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AvoidanceConfig {
    /// Gaussian samples per iteration (even; antithetic pairs)
    pub d_prime: usize,
    /// probe scale sigma
    pub sigma: f64,
    /// step size eta
    pub eta: f64,
    /// momentum mu
    pub mu: f64,
    /// perturbation bound epsilon
    pub epsilon: f64,
    pub norm: Norm,
    pub iters: usize,
    /// total estimation-query budget
    pub budget: u64,
    /// multiply each loss by the clipped probe (listing form) rather than
    /// the raw Gaussian; the two differ only at box boundaries
    pub weight_by_clipped: bool,
}

impl Default for AvoidanceConfig {
    fn default() -> Self {
        AvoidanceConfig {
            d_prime: 256,
            sigma: 1e-3,
            eta: 1e-3,
            mu: 0.5,
            epsilon: 1.0 / 255.0,
            norm: Norm::LInf,
            iters: 256,
            budget: 65_536,
            weight_by_clipped: true,
        }
    }
}

impl AvoidanceConfig {
    pub fn validate(&self) -> Result<(), AvoidanceError> {
        if self.d_prime == 0 || self.d_prime % 2 != 0 {
            return Err(AvoidanceError::BadConfig(format!(
                "d_prime {} must be even and nonzero",
                self.d_prime
            )));
        }
        if self.sigma <= 0.0 || self.eta <= 0.0 || self.epsilon <= 0.0 {
            return Err(AvoidanceError::BadConfig("sigma/eta/epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(AvoidanceError::BadConfig(format!("mu {}", self.mu)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AvoidanceState {
    pub delta: Tensor<f32>,
    pub grad_prev: Tensor<f32>,
    pub iteration: usize,
    /// estimation queries, capped by the budget
    pub queries_used: u64,
    /// re-evaluation queries (benign-rate sampling), counted separately
    pub eval_queries: u64,
}

impl AvoidanceState {
    pub fn new(n: usize) -> Self {
        AvoidanceState {
            delta: Tensor::zeros(alloc::vec![n]),
            grad_prev: Tensor::zeros(alloc::vec![n]),
            iteration: 0,
            queries_used: 0,
            eval_queries: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AvoidanceError {
    BadConfig(String),
    /// the estimation budget ran out mid-batch; state is preserved
    BudgetExhausted { queries_used: u64 },
    /// the starting input is already classified benign
    InvalidExperiment,
    Oracle(String),
}

impl fmt::Display for AvoidanceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AvoidanceError::BadConfig(s) => write!(f, "bad avoidance config: {s}"),
            AvoidanceError::BudgetExhausted { queries_used } => {
                write!(f, "query budget exhausted after {queries_used} queries")
            }
            AvoidanceError::InvalidExperiment => {
                write!(f, "input is already classified benign; nothing to avoid")
            }
            AvoidanceError::Oracle(s) => write!(f, "oracle failure: {s}"),
        }
    }
}

impl core::error::Error for AvoidanceError {}

/// One black-box query's outcome.
#[derive(Clone, Copy, Debug)]
pub struct OracleReply {
    /// detector loss toward the benign class
    pub loss: f64,
    pub detector_label: usize,
    /// victim prediction for the queried input, when the oracle runs one
    pub victim_label: Option<usize>,
}

/// Black-box view of the detection pipeline: one call is one traced
/// inference.
pub trait LossOracle {
    fn query(&mut self, x: &Tensor<f32>) -> Result<OracleReply, AvoidanceError>;

    /// Query a batch of independent points. The default runs sequentially;
    /// oracles that declare themselves parallel-safe may override (each
    /// query must own its noise stream).
    fn query_batch(&mut self, xs: &[Tensor<f32>]) -> Result<Vec<OracleReply>, AvoidanceError> {
        xs.iter().map(|x| self.query(x)).collect()
    }
}

/// NES gradient estimate at X + delta using d' antithetic probes.
/// Consumes d' budget queries; errors mid-batch leave the state intact.
pub fn nes_gradient(
    oracle: &mut dyn LossOracle,
    x: &Tensor<f32>,
    state: &mut AvoidanceState,
    cfg: &AvoidanceConfig,
    rng: &mut Rng,
) -> Result<Tensor<f32>, AvoidanceError> {
    cfg.validate()?;
    let n = x.len();
    let half = cfg.d_prime / 2;

    // antithetic probe set: theta_i for i < half, mirrored for the rest
    let mut probes: Vec<Vec<f32>> = Vec::with_capacity(cfg.d_prime);
    for _ in 0..half {
        probes.push((0..n).map(|_| rng.normal() as f32).collect());
    }
    for i in 0..half {
        // theta_{d'-i+1} = -theta_i, i.e. reversed-order mirror
        let mirrored: Vec<f32> = probes[half - 1 - i].iter().map(|&v| -v).collect();
        probes.push(mirrored);
    }

    let sigma = cfg.sigma as f32;
    let mut grad = Tensor::zeros(alloc::vec![n]);
    let scale = 1.0 / (cfg.sigma * cfg.d_prime as f64);

    // budget admits only this many probes; a short batch still consumes its
    // queries before the exhaustion error surfaces
    let admitted = (cfg.budget - state.queries_used.min(cfg.budget)) as usize;
    let run_now = probes.len().min(admitted);

    let mut queries = Vec::with_capacity(run_now);
    let mut clipped_all: Vec<Vec<f32>> = Vec::with_capacity(run_now);
    for theta in probes.iter().take(run_now) {
        // clipped probe: clamp(x + delta + sigma*theta, 0, 1) - x - delta
        let mut query = x.clone();
        let mut clipped = Vec::with_capacity(n);
        for i in 0..n {
            let base = x.data()[i] + state.delta.data()[i];
            let probe_at = (base + sigma * theta[i]).clamp(0.0, 1.0);
            clipped.push(probe_at - base);
            query.data_mut()[i] = probe_at;
        }
        queries.push(query);
        clipped_all.push(clipped);
    }
    let replies = oracle.query_batch(&queries)?;
    state.queries_used += replies.len() as u64;
    for (k, reply) in replies.iter().enumerate() {
        let w = (reply.loss * scale) as f32;
        if cfg.weight_by_clipped {
            // listing form: weight by the clipped probe
            for (g, c) in grad.data_mut().iter_mut().zip(clipped_all[k].iter()) {
                *g += w * c;
            }
        } else {
            // estimator form: weight by the raw Gaussian (1/sigma larger in
            // scale; the signed update is scale-invariant)
            for (g, t) in grad.data_mut().iter_mut().zip(probes[k].iter()) {
                *g += w * t;
            }
        }
    }
    if run_now < probes.len() {
        return Err(AvoidanceError::BudgetExhausted {
            queries_used: state.queries_used,
        });
    }
    Ok(grad)
}

/// Momentum-blended signed step with box clipping and norm projection.
pub fn avoidance_step(
    state: &mut AvoidanceState,
    grad: &Tensor<f32>,
    cfg: &AvoidanceConfig,
    x: &Tensor<f32>,
) {
    let mu = cfg.mu as f32;
    let mut blended = state.grad_prev.clone();
    blended.scale(mu);
    blended.add_scaled(grad, 1.0 - mu);

    let eta = cfg.eta as f32;
    for (d, g) in state.delta.data_mut().iter_mut().zip(blended.data().iter()) {
        if *g > 0.0 {
            *d -= eta;
        } else if *g < 0.0 {
            *d += eta;
        }
    }
    // keep x + delta inside the box
    for (d, &xv) in state.delta.data_mut().iter_mut().zip(x.data().iter()) {
        *d = (xv + *d).clamp(0.0, 1.0) - xv;
    }
    // rescale onto the norm ball
    let norm = cfg.norm.eval(&state.delta);
    if norm > cfg.epsilon {
        state.delta.scale((cfg.epsilon / norm) as f32);
    }
    state.grad_prev = blended;
    state.iteration += 1;
}

/// One row of the avoidance success curve.
#[derive(Clone, Copy, Debug)]
pub struct AvoidanceRow {
    pub iteration: usize,
    /// fraction of repeated trace collections classified benign
    pub benign_rate: f64,
    pub queries_used: u64,
    /// fraction of repeats where the victim still produced the original
    /// label (monitored, not enforced)
    pub victim_label_preserved: f64,
}

#[derive(Clone, Debug)]
pub struct AvoidanceRun {
    pub rows: Vec<AvoidanceRow>,
    pub final_delta: Tensor<f32>,
    pub queries_used: u64,
    pub eval_queries: u64,
}

/// Full avoidance run: NES iterations with a per-iteration benign-rate
/// estimate over `repeats` trace collections.
pub fn run_avoidance(
    oracle: &mut dyn LossOracle,
    x: &Tensor<f32>,
    cfg: &AvoidanceConfig,
    repeats: usize,
    seed: u64,
) -> Result<AvoidanceRun, AvoidanceError> {
    cfg.validate()?;
    let mut state = AvoidanceState::new(x.len());
    let mut rng = Rng::derive(seed, 0xae5);

    // reject inputs the detector already calls benign
    let initial = oracle.query(x)?;
    state.eval_queries += 1;
    if initial.detector_label == TraceLabel::Benign as usize {
        return Err(AvoidanceError::InvalidExperiment);
    }
    let victim_reference = initial.victim_label;

    let mut rows = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let grad = match nes_gradient(oracle, x, &mut state, cfg, &mut rng) {
            Ok(g) => g,
            Err(AvoidanceError::BudgetExhausted { .. }) => break,
            Err(e) => return Err(e),
        };
        avoidance_step(&mut state, &grad, cfg, x);

        let mut benign = 0usize;
        let mut preserved = 0usize;
        let mut probe = x.clone();
        probe.add_assign(&state.delta);
        for v in probe.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let eval_points = alloc::vec![probe.clone(); repeats.max(1)];
        let replies = oracle.query_batch(&eval_points)?;
        state.eval_queries += replies.len() as u64;
        for reply in &replies {
            benign += usize::from(reply.detector_label == TraceLabel::Benign as usize);
            if let (Some(now), Some(orig)) = (reply.victim_label, victim_reference) {
                preserved += usize::from(now == orig);
            }
        }
        let denom = repeats.max(1) as f64;
        rows.push(AvoidanceRow {
            iteration: state.iteration,
            benign_rate: benign as f64 / denom,
            queries_used: state.queries_used,
            victim_label_preserved: if victim_reference.is_some() {
                preserved as f64 / denom
            } else {
                1.0
            },
        });
    }
    Ok(AvoidanceRun {
        rows,
        final_delta: state.delta,
        queries_used: state.queries_used,
        eval_queries: state.eval_queries,
    })
}

/// The full noisy pipeline as a loss oracle: quantized victim inference,
/// schedule emission, PDN + placement, TDC sampling, preprocessing, and the
/// trained detector. Each query owns a derived noise stream, so queries are
/// reproducible regardless of order.
pub struct PipelineOracle<'a> {
    pub victim: &'a QuantizedNetwork,
    pub detector: &'a Network<f32>,
    pub det_cfg: DetectorConfig,
    pub pdn: PdnParams,
    pub profile: PlacementProfile,
    pub tdc_cfg: TdcConfig,
    pub calibration: Calibration,
    pub schedule_cfg: ScheduleConfig,
    pub frequency_factor: usize,
    pub noise_seed: u64,
    counter: u64,
}

impl<'a> PipelineOracle<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        victim: &'a QuantizedNetwork,
        detector: &'a Network<f32>,
        det_cfg: DetectorConfig,
        pdn: PdnParams,
        profile: PlacementProfile,
        tdc_cfg: TdcConfig,
        calibration: Calibration,
        noise_seed: u64,
    ) -> Self {
        PipelineOracle {
            victim,
            detector,
            det_cfg,
            pdn,
            profile,
            tdc_cfg,
            calibration,
            schedule_cfg: ScheduleConfig::default(),
            frequency_factor: 1,
            noise_seed,
            counter: 0,
        }
    }
}

impl PipelineOracle<'_> {
    fn query_at(&self, x: &Tensor<f32>, counter: u64) -> Result<OracleReply, AvoidanceError> {
        let stream = emit_schedule(self.victim, x, self.schedule_cfg)
            .map_err(|e| AvoidanceError::Oracle(format!("{e}")))?;
        let victim_label = self
            .victim
            .predict(x)
            .map_err(|e| AvoidanceError::Oracle(format!("{e}")))?;
        let activity = switching_activity(&stream);
        let clean = pdn_filter(&activity, &self.pdn);
        let mut noise_rng = Rng::derive(self.noise_seed, counter);
        let placed = apply_placement(&clean, &self.profile, self.pdn.noise_sigma_volts, &mut noise_rng);
        let meta = TraceMeta {
            victim_id: 0,
            attack: 0,
            placement: self.profile.placement as u8,
            frequency_factor: self.frequency_factor as u8,
        };
        let trace = sample_trace(
            &placed,
            &self.tdc_cfg,
            &self.calibration,
            self.frequency_factor,
            TraceLabel::Benign,
            meta,
        )
        .map_err(|e| AvoidanceError::Oracle(format!("{e}")))?;
        let input = crate::detector::preprocess(&trace.readouts, &self.det_cfg);
        let probs = self
            .detector
            .infer(&input)
            .map_err(|e| AvoidanceError::Oracle(format!("{e}")))?;
        Ok(OracleReply {
            loss: cross_entropy(&probs, TraceLabel::Benign as usize).to_f64(),
            detector_label: probs.argmax(),
            victim_label: Some(victim_label),
        })
    }
}

impl LossOracle for PipelineOracle<'_> {
    fn query(&mut self, x: &Tensor<f32>) -> Result<OracleReply, AvoidanceError> {
        let c = self.counter;
        self.counter += 1;
        self.query_at(x, c)
    }

    /// Parallel-safe: every query owns the noise stream derived from its
    /// batch position, so results are independent of scheduling.
    #[cfg(feature = "parallel")]
    fn query_batch(&mut self, xs: &[Tensor<f32>]) -> Result<Vec<OracleReply>, AvoidanceError> {
        use rayon::prelude::*;
        let base = self.counter;
        self.counter += xs.len() as u64;
        xs.par_iter()
            .enumerate()
            .map(|(i, x)| self.query_at(x, base + i as u64))
            .collect()
    }
}

/// Noiseless differentiable stand-in: the "detector" consumes the input
/// directly. Used to validate the attack machinery on a smooth landscape.
pub struct SurrogateOracle<'a> {
    pub net: &'a Network<f32>,
}

impl LossOracle for SurrogateOracle<'_> {
    fn query(&mut self, x: &Tensor<f32>) -> Result<OracleReply, AvoidanceError> {
        let probs = self
            .net
            .infer(x)
            .map_err(|e| AvoidanceError::Oracle(format!("{e}")))?;
        Ok(OracleReply {
            loss: cross_entropy(&probs, TraceLabel::Benign as usize).to_f64(),
            detector_label: probs.argmax(),
            victim_label: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Real;

    struct ConstOracle(f64);
    impl LossOracle for ConstOracle {
        fn query(&mut self, _x: &Tensor<f32>) -> Result<OracleReply, AvoidanceError> {
            Ok(OracleReply {
                loss: self.0,
                detector_label: 1,
                victim_label: None,
            })
        }
    }

    /// L(x) = |x - target|^2 as a black box.
    struct QuadraticOracle {
        target: Vec<f32>,
    }
    impl LossOracle for QuadraticOracle {
        fn query(&mut self, x: &Tensor<f32>) -> Result<OracleReply, AvoidanceError> {
            let loss: f64 = x
                .data()
                .iter()
                .zip(self.target.iter())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum();
            Ok(OracleReply {
                loss,
                detector_label: 1,
                victim_label: None,
            })
        }
    }

    #[test]
    fn antithetic_probes_cancel_for_constant_loss() {
        // constant loss weights both halves equally, so the estimate is
        // exactly zero away from the box boundary
        let mut oracle = ConstOracle(3.25);
        let cfg = AvoidanceConfig {
            d_prime: 64,
            ..AvoidanceConfig::default()
        };
        let x = Tensor::full(alloc::vec![16], 0.5f32);
        let mut state = AvoidanceState::new(16);
        let mut rng = Rng::seed_from(5);
        let grad = nes_gradient(&mut oracle, &x, &mut state, &cfg, &mut rng).unwrap();
        for &g in grad.data() {
            assert!(g.abs() < 1e-4, "residual {g}");
        }
        assert_eq!(state.queries_used, 64);
    }

    fn quadratic_cosine(seed: u64, d_prime: usize, blend_iters: usize) -> f64 {
        // cosine between the estimator output and the analytic gradient of
        // |x + delta - t|^2, evaluated at the current iterate
        let n = 64;
        let mut rng = Rng::seed_from(seed);
        let target: Vec<f32> = (0..n).map(|_| rng.range_f64(0.2, 0.8) as f32).collect();
        let x = Tensor::full(alloc::vec![n], 0.5f32);
        let mut oracle = QuadraticOracle { target: target.clone() };
        let cfg = AvoidanceConfig {
            d_prime,
            sigma: 1e-3,
            budget: u64::MAX,
            epsilon: 0.3,
            ..AvoidanceConfig::default()
        };
        let mut state = AvoidanceState::new(n);
        for _ in 0..blend_iters {
            let fresh = nes_gradient(&mut oracle, &x, &mut state, &cfg, &mut rng).unwrap();
            avoidance_step(&mut state, &fresh, &cfg, &x);
        }
        // the estimator output is the momentum-blended gradient
        let est = state.grad_prev.clone();
        let analytic: Vec<f64> = (0..n)
            .map(|i| 2.0 * ((0.5 + state.delta.data()[i] as f64) - target[i] as f64))
            .collect();
        let dot: f64 = est
            .data()
            .iter()
            .zip(analytic.iter())
            .map(|(g, a)| g.to_f64() * a)
            .sum();
        let gn = est.l2_norm();
        let an = libm::sqrt(analytic.iter().map(|a| a * a).sum());
        dot / (gn * an)
    }

    #[test]
    fn nes_estimate_aligns_with_quadratic_gradient() {
        // The gradient the attack outputs per iteration is the
        // momentum-blended estimate; at mu = 0.5 the steady-state blend
        // averages ~3 probe batches. Median cosine over 20 seeds must
        // clear 0.9 at the default d' = 256 on n = 64.
        let mut cosines: Vec<f64> = (0..20).map(|s| quadratic_cosine(s, 256, 8)).collect();
        cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = cosines[cosines.len() / 2];
        assert!(median >= 0.9, "median cosine {median} ({cosines:?})");
    }

    #[test]
    fn single_batch_estimate_points_roughly_right() {
        // one batch (no blending) carries irreducible projection noise of
        // about sqrt(1 + (n+2)/(d'/2)); just require clear alignment
        let mut cosines: Vec<f64> = (0..20).map(|s| quadratic_cosine(s, 256, 1)).collect();
        cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(cosines[10] > 0.7, "median single-batch cosine {}", cosines[10]);
    }

    #[test]
    fn cosine_improves_monotonically_with_probe_count() {
        // median cosine over seeds rises with d'
        let mut medians = Vec::new();
        for d_prime in [64usize, 256, 1024] {
            let mut cosines: Vec<f64> =
                (0..11).map(|s| quadratic_cosine(s, d_prime, 1)).collect();
            cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(cosines[5]);
        }
        assert!(
            medians[0] < medians[1] && medians[1] < medians[2],
            "medians not monotone: {medians:?}"
        );
    }

    #[test]
    fn momentum_one_keeps_previous_gradient() {
        let cfg = AvoidanceConfig {
            mu: 1.0,
            ..AvoidanceConfig::default()
        };
        let x = Tensor::full(alloc::vec![4], 0.5f32);
        let mut state = AvoidanceState::new(4);
        state.grad_prev = Tensor::new(alloc::vec![4], alloc::vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let grad = Tensor::new(alloc::vec![4], alloc::vec![-9.0, 9.0, -9.0, 9.0]).unwrap();
        avoidance_step(&mut state, &grad, &cfg, &x);
        // blended == grad_prev, so delta moves along -sign(grad_prev)
        assert_eq!(state.grad_prev.data(), &[1.0, -1.0, 1.0, -1.0]);
        assert!(state.delta.data()[0] < 0.0 && state.delta.data()[1] > 0.0);
    }

    #[test]
    fn interior_point_moves_exactly_eta_per_coordinate() {
        let cfg = AvoidanceConfig {
            epsilon: 0.5,
            eta: 1e-3,
            mu: 0.0,
            ..AvoidanceConfig::default()
        };
        let x = Tensor::full(alloc::vec![8], 0.5f32);
        let mut state = AvoidanceState::new(8);
        let grad = Tensor::full(alloc::vec![8], 2.0f32);
        avoidance_step(&mut state, &grad, &cfg, &x);
        for &d in state.delta.data() {
            assert!((d + 1e-3).abs() < 1e-7, "delta {d}");
        }
    }

    #[test]
    fn invariants_hold_over_many_random_steps() {
        let cfg = AvoidanceConfig {
            epsilon: 1.0 / 255.0,
            ..AvoidanceConfig::default()
        };
        let mut rng = Rng::seed_from(11);
        let n = 32;
        let x = Tensor::from_fn(alloc::vec![n], |_| rng.next_f32());
        let mut state = AvoidanceState::new(n);
        for _ in 0..10_000 {
            let grad = Tensor::from_fn(alloc::vec![n], |_| (rng.normal() as f32) * 10.0);
            avoidance_step(&mut state, &grad, &cfg, &x);
            let norm = cfg.norm.eval(&state.delta);
            assert!(norm <= cfg.epsilon + 1e-9, "norm {norm}");
            for (d, &xv) in state.delta.data().iter().zip(x.data().iter()) {
                let v = xv + d;
                assert!((-1e-6..=1.0 + 1e-6).contains(&v), "box violated: {v}");
            }
        }
    }

    #[test]
    fn projection_idempotent() {
        let cfg = AvoidanceConfig::default();
        let mut delta = Tensor::from_fn(alloc::vec![16], |i| (i as f32 - 8.0) * 0.01);
        let norm = cfg.norm.eval(&delta);
        assert!(norm > cfg.epsilon);
        delta.scale((cfg.epsilon / norm) as f32);
        let once = delta.clone();
        let norm2 = cfg.norm.eval(&delta);
        if norm2 > cfg.epsilon {
            delta.scale((cfg.epsilon / norm2) as f32);
        }
        assert_eq!(once.data(), delta.data());
    }

    #[test]
    fn budget_exhaustion_preserves_state() {
        let mut oracle = ConstOracle(1.0);
        let cfg = AvoidanceConfig {
            d_prime: 64,
            budget: 100,
            ..AvoidanceConfig::default()
        };
        let x = Tensor::full(alloc::vec![8], 0.5f32);
        let mut state = AvoidanceState::new(8);
        let mut rng = Rng::seed_from(1);
        // first batch fits
        nes_gradient(&mut oracle, &x, &mut state, &cfg, &mut rng).unwrap();
        assert_eq!(state.queries_used, 64);
        // second batch hits the wall mid-way
        match nes_gradient(&mut oracle, &x, &mut state, &cfg, &mut rng) {
            Err(AvoidanceError::BudgetExhausted { queries_used }) => {
                assert_eq!(queries_used, 100);
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
        assert_eq!(state.queries_used, 100);
    }

    #[test]
    fn query_accounting_exact() {
        struct Flip;
        impl LossOracle for Flip {
            fn query(&mut self, x: &Tensor<f32>) -> Result<OracleReply, AvoidanceError> {
                // label flips benign once x moves a bit; loss is quadratic
                let s: f64 = x.data().iter().map(|&v| v as f64).sum();
                Ok(OracleReply {
                    loss: s,
                    detector_label: 1,
                    victim_label: Some(0),
                })
            }
        }
        let cfg = AvoidanceConfig {
            d_prime: 32,
            iters: 5,
            budget: u64::MAX,
            ..AvoidanceConfig::default()
        };
        let x = Tensor::full(alloc::vec![8], 0.5f32);
        let run = run_avoidance(&mut Flip, &x, &cfg, 3, 7).unwrap();
        assert_eq!(run.rows.len(), 5);
        assert_eq!(run.queries_used, 5 * 32);
        // 1 initial + 3 per iteration
        assert_eq!(run.eval_queries, 1 + 5 * 3);
        for row in &run.rows {
            assert_eq!(row.victim_label_preserved, 1.0);
        }
    }

    #[test]
    fn already_benign_input_rejected() {
        struct Benign;
        impl LossOracle for Benign {
            fn query(&mut self, _x: &Tensor<f32>) -> Result<OracleReply, AvoidanceError> {
                Ok(OracleReply {
                    loss: 0.0,
                    detector_label: 0,
                    victim_label: None,
                })
            }
        }
        let cfg = AvoidanceConfig::default();
        let x = Tensor::full(alloc::vec![8], 0.5f32);
        assert_eq!(
            run_avoidance(&mut Benign, &x, &cfg, 1, 0).unwrap_err(),
            AvoidanceError::InvalidExperiment
        );
    }

    #[test]
    fn budget_caps_iterations_exactly() {
        let mut oracle = ConstOracle(1.0);
        let cfg = AvoidanceConfig {
            d_prime: 256,
            iters: 1000,
            budget: 65_536,
            ..AvoidanceConfig::default()
        };
        let x = Tensor::full(alloc::vec![4], 0.5f32);
        let run = run_avoidance(&mut oracle, &x, &cfg, 1, 3).unwrap();
        // 65,536 / 256 = 256 full iterations, then the budget wall
        assert_eq!(run.rows.len(), 256);
        assert_eq!(run.queries_used, 65_536);
    }
}
