// per-victim class separability: nearest (victim, class) mean
use std::collections::HashMap;

use powertrace_cli::config::RunConfig;
use powertrace_cli::dataset::{Corpus, Split};
use powertrace_core::detector::preprocess;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(Some(std::path::Path::new(&args[1])), Some(7)).unwrap();
    let corpus = Corpus::open(std::path::Path::new(&args[2])).unwrap();

    // victim-conditional class means on the train split
    let mut sums: HashMap<(u32, usize), (Vec<f64>, usize)> = HashMap::new();
    let mut dim = 0usize;
    for e in corpus.entries.iter().filter(|e| e.split == Split::Train) {
        let r = corpus.read_trace(e).unwrap();
        let x = preprocess(&r, &cfg.detector);
        dim = x.len();
        let slot = sums
            .entry((e.victim, e.label as usize))
            .or_insert_with(|| (vec![0.0; x.len()], 0));
        for (s, &v) in slot.0.iter_mut().zip(x.data()) {
            *s += v as f64;
        }
        slot.1 += 1;
    }
    let means: HashMap<(u32, usize), Vec<f64>> = sums
        .into_iter()
        .map(|(k, (s, n))| (k, s.into_iter().map(|v| v / n as f64).collect()))
        .collect();

    // classify test traces among the SAME victim's class means
    let mut hits = 0usize;
    let mut merged = 0usize;
    let mut n = 0usize;
    for e in corpus.entries.iter().filter(|e| e.split == Split::Test) {
        let r = corpus.read_trace(e).unwrap();
        let x = preprocess(&r, &cfg.detector);
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for c in 0..4 {
            let Some(m) = means.get(&(e.victim, c)) else { continue };
            let d: f64 = x
                .data()
                .iter()
                .zip(m)
                .map(|(&v, mm)| (v as f64 - mm).powi(2))
                .sum();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if best == usize::MAX {
            continue;
        }
        n += 1;
        hits += usize::from(best == e.label as usize);
        let pool = |c: usize| if c == 3 { 1 } else { c };
        merged += usize::from(pool(best) == pool(e.label as usize));
    }
    println!(
        "victim-conditional nearest mean: total {:.3} merged {:.3} over {} test traces (dim {})",
        hits as f64 / n as f64,
        merged as f64 / n as f64,
        n,
        dim
    );
}
