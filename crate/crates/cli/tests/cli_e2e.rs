//! End-to-end harness tests at toy scale: corpus building, byte-level
//! determinism of re-runs, table plumbing, and the CLI binary's exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use powertrace_cli::config::{ConfigFile, RunConfig};
use powertrace_cli::dataset::{build_corpus, Corpus, Split};
use powertrace_cli::manifest::Manifest;
use powertrace_cli::recipes;

fn toy_config(seed: u64) -> RunConfig {
    let file = ConfigFile::parse(
        "[victims]\n\
         count = 3\n\
         train_samples = 150\n\
         epochs = 4\n\
         min_train_accuracy = 0.5\n\
         unseen_poisoned = 2\n\
         [dataset]\n\
         traces_per_class = 9\n\
         unseen_per_family = 3\n\
         [detector]\n\
         rnn_layers = 1\n\
         rnn_dim = 12\n\
         conv_channels = 4\n\
         trace_len = 192\n\
         epochs = 3\n\
         batch = 8\n\
         [tables]\n\
         table_rnn_layers = 1\n\
         table_rnn_dim = 8\n\
         table_epochs = 2\n\
         sweep_layers = 1\n\
         sweep_dims = 12\n\
         frequency_factors = 2\n\
         frequency_windows = 10\n\
         avoidance_repeats = 2\n\
         [attacks]\n\
         cw_max_iter = 20\n\
         cw_binary_steps = 3\n\
         [avoidance]\n\
         d_prime = 8\n\
         iters = 2\n\
         budget = 64\n",
    )
    .unwrap();
    RunConfig::from_file(&file, Some(seed)).unwrap()
}

fn build_at(dir: &Path, seed: u64) -> Corpus {
    let cfg = toy_config(seed);
    let mut manifest = Manifest::new(&cfg.dump_normalized(), cfg.seed);
    let corpus = build_corpus(&cfg, dir, &mut manifest).expect("corpus builds");
    manifest.save(&dir.join("run-manifest.txt")).unwrap();
    corpus
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("powertrace-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn corpus_counts_and_split_arithmetic() {
    let dir = tempdir("counts");
    let corpus = build_at(&dir, 5);
    // 4 classes x 9 roster traces + 3 unseen families x 3
    assert_eq!(corpus.entries.len(), 4 * 9 + 3 * 3);
    let train = corpus.entries.iter().filter(|e| e.split == Split::Train).count();
    let test = corpus.entries.iter().filter(|e| e.split == Split::Test).count();
    let unseen = corpus.entries.iter().filter(|e| e.split == Split::Unseen).count();
    // 9 per class -> 8 train / 1 test under the 90/10 split
    assert_eq!(train, 32);
    assert_eq!(test, 4);
    assert_eq!(unseen, 9);
    // every trace file round-trips through the reader
    for e in &corpus.entries {
        let readouts = corpus.read_trace(e).unwrap();
        assert!(!readouts.is_empty());
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn rebuild_is_byte_identical() {
    let dir_a = tempdir("det-a");
    let dir_b = tempdir("det-b");
    build_at(&dir_a, 42);
    build_at(&dir_b, 42);

    // every trace, the index, and the input records must match byte for
    // byte; the manifest carries timings and is exempt
    let index_a = std::fs::read(dir_a.join("index.csv")).unwrap();
    let index_b = std::fs::read(dir_b.join("index.csv")).unwrap();
    assert_eq!(index_a, index_b, "index.csv differs");
    let inputs_a = std::fs::read(dir_a.join("inputs.scin")).unwrap();
    let inputs_b = std::fs::read(dir_b.join("inputs.scin")).unwrap();
    assert_eq!(inputs_a, inputs_b, "inputs.scin differs");
    let mut names: Vec<String> = std::fs::read_dir(dir_a.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in &names {
        let a = std::fs::read(dir_a.join("traces").join(name)).unwrap();
        let b = std::fs::read(dir_b.join("traces").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // a different seed must actually change the corpus
    let dir_c = tempdir("det-c");
    build_at(&dir_c, 43);
    let index_c = std::fs::read(dir_c.join("index.csv")).unwrap();
    let first_a = std::fs::read(dir_a.join("traces").join(&names[0])).unwrap();
    let first_c = std::fs::read(dir_c.join("traces").join(&names[0])).unwrap();
    assert!(index_a == index_c || true); // layout matches; contents may not
    assert_ne!(first_a, first_c, "different seeds produced identical traces");

    for d in [dir_a, dir_b, dir_c] {
        let _ = std::fs::remove_dir_all(&d);
    }
}

#[test]
fn tables_and_reports_run_at_toy_scale() {
    let dir = tempdir("tables");
    let cfg = toy_config(9);
    let corpus = build_at(&dir, 9);

    let report = recipes::run_accuracy(&corpus, &cfg, &dir.join("tables")).unwrap();
    assert!(dir.join("tables/detection.csv").exists());
    assert!(dir.join("tables/detection.txt").exists());
    let total: usize = report.confusion.iter().flatten().sum();
    assert_eq!(total, 4);
    assert!(report.merged_acc >= report.total_acc);

    let rows = recipes::run_rnn_sweep(&corpus, &cfg, &dir.join("tables")).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(dir.join("tables/rnn_sweep.csv").exists());
    assert!(dir.join("tables/rnn_sweep.svg").exists());

    let rows = recipes::run_frequency(&corpus, &cfg, &dir.join("tables")).unwrap();
    assert_eq!(rows.len(), 1);

    let rows = recipes::run_unseen(&corpus, &cfg, &dir.join("tables")).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.count > 0);
    }

    let victims = powertrace_cli::dataset::load_victims(&cfg, &dir).unwrap();
    let rows = recipes::run_location(&corpus, &victims, &cfg, &dir.join("tables")).unwrap();
    assert_eq!(rows.len(), 3);

    let cams = recipes::run_cam(&corpus, &cfg, &dir.join("cam")).unwrap();
    assert_eq!(cams.len(), 4);

    // a toy detector may classify nothing as an attack, in which case the
    // avoidance experiment is correctly rejected
    match recipes::run_avoid(&corpus, &victims, &cfg, &dir.join("avoidance")) {
        Ok(run) => {
            assert!(run.queries_used <= 64);
            assert!(dir.join("avoidance/avoidance.csv").exists());
        }
        Err(e) => {
            let msg = e.to_string();
            assert!(
                msg.contains("no detected attack trace")
                    || msg.contains("already classified benign"),
                "unexpected avoidance failure: {msg}"
            );
        }
    }

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn frequency_factor_one_cell_equals_accuracy_run() {
    // same detector config + same corpus -> the cached model is shared, so
    // the factor-1 frequency cell must reproduce the accuracy table exactly
    let dir = tempdir("consistency");
    let mut cfg = toy_config(13);
    let corpus = build_at(&dir, 13);
    // make the frequency table run the headline detector at factor 1
    cfg.tables.frequency_factors = vec![1];
    cfg.tables.frequency_windows = vec![cfg.detector.window];
    cfg.tables.table_rnn_layers = cfg.detector.rnn_layers;
    cfg.tables.table_rnn_dim = cfg.detector.rnn_dim;
    cfg.tables.table_epochs = cfg.detector.epochs;

    let report = recipes::run_accuracy(&corpus, &cfg, &dir.join("tables")).unwrap();
    let rows = recipes::run_frequency(&corpus, &cfg, &dir.join("tables")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].factor, 1);
    assert_eq!(rows[0].test_acc, report.merged_acc);

    let _ = std::fs::remove_dir_all(&dir);
}

fn bin() -> PathBuf {
    let mut p = PathBuf::from(env!("CARGO_BIN_EXE_powertrace"));
    assert!(p.exists(), "{p:?}");
    p = p.canonicalize().unwrap();
    p
}

#[test]
fn cli_exit_codes() {
    // config error -> 2
    let bad_cfg = std::env::temp_dir().join(format!("powertrace-bad-{}.cfg", std::process::id()));
    std::fs::write(&bad_cfg, "[detector]\nrnn_layers = banana\n").unwrap();
    let out = Command::new(bin())
        .args(["--config", bad_cfg.to_str().unwrap(), "calibrate-tdc"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // data error (no corpus) -> 3
    let empty = tempdir("no-corpus");
    let out = Command::new(bin())
        .args(["--out", empty.to_str().unwrap(), "eval"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");

    // success -> 0
    let out = Command::new(bin()).arg("calibrate-tdc").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("nominal readout"));

    let _ = std::fs::remove_file(&bad_cfg);
    let _ = std::fs::remove_dir_all(&empty);
}
