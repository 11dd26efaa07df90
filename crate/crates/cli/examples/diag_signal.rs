// class-mean separability of preprocessed traces
use powertrace_cli::config::RunConfig;
use powertrace_cli::dataset::Corpus;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(Some(std::path::Path::new(&args[1])), Some(7)).unwrap();
    let corpus = Corpus::open(std::path::Path::new(&args[2])).unwrap();
    let (train_set, test_set) = corpus.detector_sets(&cfg.detector, 1).unwrap();
    let dim = train_set.inputs[0].len();

    // per-class mean and variance on train
    let mut mean = vec![vec![0.0f64; dim]; 4];
    let mut count = [0usize; 4];
    for (x, &l) in train_set.inputs.iter().zip(&train_set.labels) {
        for (m, &v) in mean[l].iter_mut().zip(x.data()) {
            *m += v as f64;
        }
        count[l] += 1;
    }
    for c in 0..4 {
        for m in &mut mean[c] {
            *m /= count[c] as f64;
        }
    }
    let mut within = vec![0.0f64; dim];
    for (x, &l) in train_set.inputs.iter().zip(&train_set.labels) {
        for (w, (&v, m)) in within.iter_mut().zip(x.data().iter().zip(&mean[l])) {
            *w += (v as f64 - m).powi(2);
        }
    }
    let n: usize = count.iter().sum();
    for w in &mut within {
        *w /= n as f64;
    }
    let grand: Vec<f64> = (0..dim)
        .map(|i| (0..4).map(|c| mean[c][i]).sum::<f64>() / 4.0)
        .collect();
    let mut fisher: Vec<f64> = (0..dim)
        .map(|i| {
            let between: f64 = (0..4).map(|c| (mean[c][i] - grand[i]).powi(2)).sum::<f64>() / 4.0;
            between / within[i].max(1e-12)
        })
        .collect();
    fisher.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!(
        "fisher scores: max {:.4} p95 {:.4} median {:.4}",
        fisher[0],
        fisher[dim / 20],
        fisher[dim / 2]
    );

    // nearest-class-mean on test
    let mut hits = 0usize;
    let mut merged = 0usize;
    for (x, &l) in test_set.inputs.iter().zip(&test_set.labels) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..4 {
            let d: f64 = x
                .data()
                .iter()
                .zip(&mean[c])
                .map(|(&v, m)| (v as f64 - m).powi(2))
                .sum();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        hits += usize::from(best == l);
        let pool = |c: usize| if c == 3 { 1 } else { c };
        merged += usize::from(pool(best) == pool(l));
    }
    println!(
        "nearest-class-mean on test: total {:.3} merged {:.3} ({} traces)",
        hits as f64 / test_set.len() as f64,
        merged as f64 / test_set.len() as f64,
        test_set.len()
    );
}
