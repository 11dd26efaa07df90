// replicate the cam-focus construction and dump importance vectors
use powertrace_core::detector::{build_detector, grad_cam, DetectorConfig};
use powertrace_core::rng::Rng;
use powertrace_core::tensor::Tensor;
use powertrace_core::train::{train, Dataset, OptimizerKind, TrainConfig};

fn main() {
    let cfg = DetectorConfig {
        trace_len: 96,
        rnn_layers: 1,
        rnn_dim: 12,
        conv_channels: 16,
        conv_kernel: 7,
        dropout: 0.0,
        epochs: 60,
        lr: 5e-3,
        batch: 16,
        seed: 3,
        ..DetectorConfig::default()
    };
    let cols = cfg.columns();
    let rows = cfg.rows;
    let third = cols / 3;
    let mut rng = Rng::seed_from(9);
    let mut data = Dataset::new(4);
    for i in 0..240 {
        let class = i % 4;
        let x = Tensor::from_fn(vec![rows, cols], |p| {
            let col = p % cols;
            let mut v = 0.03 * rng.next_f32();
            // class 0 is bare background; classes 1..3 add a gaussian bump
            // at a class-specific spot inside the middle third
            if class > 0 {
                let center = third as f32 + (class as f32 - 0.5) / 3.0 * third as f32;
                let d = (col as f32 - center) / 1.6;
                v += 0.8 * (-d * d).exp();
            }
            v.clamp(0.0, 1.0)
        });
        data.push(x, class);
    }
    let mut all_masses = Vec::new();
    for seed in 0..6u64 {
        let mut net = build_detector(&DetectorConfig { seed, ..cfg.clone() }).unwrap();
        let tc = TrainConfig {
            epochs: cfg.epochs,
            lr: cfg.lr,
            batch: cfg.batch,
            seed,
            optimizer: OptimizerKind::adam(),
            class_balanced: true,
        };
        let curve = train(&mut net, &data, &tc).unwrap();
        let mut masses = Vec::new();
        for s in 0..40usize {
            let cam = grad_cam(&net, &data.inputs[s], data.labels[s]).unwrap();
            if cam.all_zero {
                continue;
            }
            let total: f32 = cam.importance.iter().sum();
            let mid: f32 = cam.importance[third..2 * third].iter().sum();
            masses.push(mid / total);
        }
        masses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = if masses.is_empty() { f32::NAN } else { masses[masses.len() / 2] };
        println!(
            "seed {seed}: train {:.2}, {} usable maps, median middle-mass {med:.2}",
            curve.last().unwrap().accuracy,
            masses.len()
        );
        all_masses.extend(masses);
    }
    all_masses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "overall: {} maps, median {:.2}, mean {:.2}",
        all_masses.len(),
        all_masses[all_masses.len() / 2],
        all_masses.iter().sum::<f32>() / all_masses.len() as f32
    );
}
