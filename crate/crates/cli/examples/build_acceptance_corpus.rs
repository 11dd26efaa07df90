// build the desk-scale corpus with the acceptance suite's exact config
use powertrace_cli::config::{ConfigFile, RunConfig};
use powertrace_cli::dataset::build_corpus;
use powertrace_cli::manifest::Manifest;

fn main() {
    let file = ConfigFile::parse("[tables]\nsweep_layers = 1,5\nsweep_dims = 128\n").unwrap();
    let cfg = RunConfig::from_file(&file, Some(1)).unwrap();
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or("target/acceptance".into()));
    std::fs::create_dir_all(&dir).unwrap();
    let t0 = std::time::Instant::now();
    let mut manifest = Manifest::new(&cfg.dump_normalized(), cfg.seed);
    let corpus = build_corpus(&cfg, &dir, &mut manifest).unwrap();
    manifest.save(&dir.join("run-manifest.txt")).unwrap();
    println!(
        "{} traces in {:.0}s -> {}",
        corpus.entries.len(),
        t0.elapsed().as_secs_f64(),
        dir.display()
    );
}
