// linear / mlp probe on preprocessed traces: does the corpus carry signal?
use powertrace_cli::config::RunConfig;
use powertrace_cli::dataset::Corpus;
use powertrace_core::layers::LayerSpec;
use powertrace_core::network::Network;
use powertrace_core::tensor::Tensor;
use powertrace_core::train::{accuracy, train, Dataset, TrainConfig};

fn reshape3(data: &Dataset) -> Dataset {
    let mut out = Dataset::new(4);
    for (x, &l) in data.inputs.iter().zip(data.labels.iter()) {
        let t = Tensor::new(
            vec![1, x.shape()[0], x.shape()[1]],
            x.data().to_vec(),
        )
        .unwrap();
        out.push(t, l);
    }
    out
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(Some(std::path::Path::new(&args[1])), Some(7)).unwrap();
    let corpus = Corpus::open(std::path::Path::new(&args[2])).unwrap();
    let (train_set, test_set) = corpus.detector_sets(&cfg.detector, 1).unwrap();
    let (train3, test3) = (reshape3(&train_set), reshape3(&test_set));
    let rows = cfg.detector.rows;
    let cols = cfg.detector.columns();
    println!("train {} test {}", train3.len(), test3.len());

    for (name, specs) in [
        ("linear", vec![LayerSpec::FullyConnected { out: 4 }, LayerSpec::Softmax]),
        (
            "mlp-64",
            vec![
                LayerSpec::FullyConnected { out: 64 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out: 4 },
                LayerSpec::Softmax,
            ],
        ),
    ] {
        let mut net = Network::new(vec![1, rows, cols], specs, 3).unwrap();
        let tc = TrainConfig {
            class_balanced: true,
            ..TrainConfig::new(60, 3e-3, 32, 5)
        };
        let curve = train(&mut net, &train3, &tc).unwrap();
        let tr = curve.last().unwrap().accuracy;
        let te = accuracy(&net, &test3).unwrap();
        println!("{name}: train {tr:.3} test {te:.3}");
    }
}
