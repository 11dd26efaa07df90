// does centering + gain on detector inputs accelerate learning?
use powertrace_cli::config::RunConfig;
use powertrace_cli::dataset::Corpus;
use powertrace_core::detector::{build_detector, evaluate, DetectorConfig};
use powertrace_core::tensor::Tensor;
use powertrace_core::train::{train, Dataset, OptimizerKind, TrainConfig};

fn affine(data: &Dataset, center: f32, gain: f32) -> Dataset {
    let mut out = Dataset::new(4);
    for (x, &l) in data.inputs.iter().zip(&data.labels) {
        out.push(
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| (v - center) * gain).collect()).unwrap(),
            l,
        );
    }
    out
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(Some(std::path::Path::new(&args[1])), Some(7)).unwrap();
    let corpus = Corpus::open(std::path::Path::new(&args[2])).unwrap();
    let det = DetectorConfig { rnn_layers: 3, rnn_dim: 64, ..cfg.detector.clone() };
    let (train_raw, test_raw) = corpus.detector_sets(&det, 1).unwrap();

    // measure input stats
    let mut mean = 0.0f64;
    let mut var = 0.0f64;
    let mut n = 0usize;
    for x in &train_raw.inputs {
        for &v in x.data() {
            mean += v as f64;
            n += 1;
        }
    }
    mean /= n as f64;
    for x in &train_raw.inputs {
        for &v in x.data() {
            var += (v as f64 - mean).powi(2);
        }
    }
    let std = (var / n as f64).sqrt();
    println!("feature mean {mean:.3} std {std:.4}");

    for (name, center, gain) in [
        ("raw      ", 0.0f32, 1.0f32),
        ("center+g8", mean as f32, (1.0 / std) as f32),
    ] {
        let tr = affine(&train_raw, center, gain);
        let te = affine(&test_raw, center, gain);
        let mut net = build_detector(&det).unwrap();
        let tc = TrainConfig {
            epochs: 30,
            lr: 3e-3,
            batch: 32,
            seed: 5,
            optimizer: OptimizerKind::adam(),
            class_balanced: true,
        };
        let curve = train(&mut net, &tr, &tc).unwrap();
        let report = evaluate(&net, &te).unwrap();
        println!(
            "{name}: train acc ep10 {:.3} ep20 {:.3} ep30 {:.3} | test total {:.3} merged {:.3}",
            curve[9].accuracy,
            curve[19].accuracy,
            curve[29].accuracy,
            report.total_acc,
            report.merged_acc
        );
    }
}
