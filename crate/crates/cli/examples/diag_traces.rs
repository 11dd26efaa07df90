// quick per-class trace statistics
use powertrace_cli::config::RunConfig;
use powertrace_cli::dataset::Corpus;
use powertrace_core::detector::preprocess;

fn main() {
    let cfg = RunConfig::load(Some(std::path::Path::new("/tmp/mini.cfg")), Some(7)).unwrap();
    let corpus = Corpus::open(std::path::Path::new("/tmp/mini-corpus")).unwrap();
    for label in 0..4u8 {
        let mut lens = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for e in corpus.entries.iter().filter(|e| e.label as u8 == label).take(8) {
            let r = corpus.read_trace(e).unwrap();
            lens.push(r.len());
            let m: f64 = r.iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64;
            let s: f64 = (r.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
            means.push(m);
            stds.push(s);
            let p = preprocess(&r, &cfg.detector);
            let pm: f32 = p.data().iter().sum::<f32>() / p.len() as f32;
            let _ = pm;
        }
        println!(
            "label {label}: lens {:?}\n  raw means {:?}\n  raw stds  {:?}",
            lens,
            means.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>(),
            stds.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
        );
    }
}
