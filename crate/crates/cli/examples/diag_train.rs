// train the detector on a corpus and print the epoch curve
use powertrace_cli::config::RunConfig;
use powertrace_cli::dataset::Corpus;
use powertrace_core::detector::{build_detector, DetectorConfig};
use powertrace_core::train::{train, TrainConfig, OptimizerKind};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(Some(std::path::Path::new(&args[1])), Some(7)).unwrap();
    let corpus = Corpus::open(std::path::Path::new(&args[2])).unwrap();
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(30);
    let n: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2);
    let d: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(32);
    let lr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let det = DetectorConfig { rnn_layers: n, rnn_dim: d, epochs, lr, ..cfg.detector.clone() };
    let (train_set, test_set) = corpus.detector_sets(&det, 1).unwrap();
    println!("train {} test {}", train_set.len(), test_set.len());
    let mut net = build_detector(&det).unwrap();
    let tc = TrainConfig {
        epochs,
        lr,
        batch: det.batch,
        seed: det.seed,
        optimizer: OptimizerKind::adam(),
        class_balanced: true,
    };
    let t0 = std::time::Instant::now();
    let curve = train(&mut net, &train_set, &tc).unwrap();
    for (i, s) in curve.iter().enumerate() {
        if i % 2 == 0 || i + 1 == curve.len() {
            println!("epoch {:3}: loss {:.4} acc {:.3}", i, s.loss, s.accuracy);
        }
    }
    println!("trained in {:.1}s", t0.elapsed().as_secs_f64());
    let report = powertrace_core::detector::evaluate(&net, &test_set).unwrap();
    println!("test: total {:.3} merged {:.3}", report.total_acc, report.merged_acc);
}
