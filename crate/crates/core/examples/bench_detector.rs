//! Quick throughput probe for the trace classifier's training loop.
//!
//! cargo run -p powertrace-core --release --example bench_detector

use std::time::Instant;

use powertrace_core::detector::{build_detector, DetectorConfig};
use powertrace_core::loss::ce_loss_and_logit_grad;
use powertrace_core::rng::Rng;
use powertrace_core::tensor::Tensor;
use powertrace_core::train::{train, Dataset, TrainConfig};

fn main() {
    let cfg = DetectorConfig::default();
    let net = build_detector(&cfg).unwrap();
    println!("detector parameters: {}", net.param_count());

    let mut rng = Rng::seed_from(0);
    let x = Tensor::from_fn(vec![3, 256], |_| rng.next_f32());

    // single-sample forward + backward timing
    let reps = 10;
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = net.forward_tape(&x, None).unwrap();
        let (_, g, l) = ce_loss_and_logit_grad(&net, &tape, 0).unwrap();
        let _ = net.backward_from(&tape, l, &g, false).unwrap();
    }
    let per = t0.elapsed().as_secs_f64() / reps as f64;
    println!("fwd+bwd per sample: {:.1} ms", per * 1e3);

    // small training run with the batch machinery (parallel feature active)
    let mut data = Dataset::new(4);
    for i in 0..64 {
        data.push(Tensor::from_fn(vec![3, 256], |_| rng.next_f32()), i % 4);
    }
    let mut net2 = build_detector(&cfg).unwrap();
    let t0 = Instant::now();
    let tc = TrainConfig::new(2, 1e-3, 32, 1);
    train(&mut net2, &data, &tc).unwrap();
    let per_sample = t0.elapsed().as_secs_f64() / (2.0 * 64.0);
    println!("train loop per sample: {:.1} ms", per_sample * 1e3);
    let epoch_1800 = per_sample * 1800.0;
    println!(
        "projected: {:.0} s/epoch on 1800 traces, {:.1} h for 100 epochs",
        epoch_1800,
        epoch_1800 * 100.0 / 3600.0
    );
}
