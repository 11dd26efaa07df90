//! Experiment recipes over a built corpus: detector training with a
//! content-addressed model cache, the evaluation tables, activation-map
//! rendering, and the detection-avoidance run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use powertrace_core::avoidance::{run_avoidance, AvoidanceRun, PipelineOracle};
use powertrace_core::detector::{
    evaluate, grad_cam, preprocess, train_detector, DetectionReport, DetectorConfig,
};
use powertrace_core::leakage::Placement;
use powertrace_core::network::Network;
use powertrace_core::rng::Rng;
use powertrace_core::tdc::{calibrate, TraceLabel};
use powertrace_core::tensor::Tensor;
use powertrace_core::train::{accuracy, Dataset};
use powertrace_core::attacks::AttackMethod;

use crate::config::RunConfig;
use crate::dataset::{qnet_for_provenance, simulate_readouts, Corpus, IndexEntry, Split, VictimSet};
use crate::error::{CliError, CliResult};
use crate::formats::scnn;
use crate::manifest::{digest_hex, Manifest};
use crate::plot::{cam_panel, line_chart, Series};
use crate::report::{detection_csv, detection_text};

/// Digest binding cached models to the exact corpus they were trained on.
pub fn corpus_digest(dir: &Path) -> CliResult<String> {
    Manifest::read_corpus_digest(&dir.join("run-manifest.txt"))
}

/// Detector configuration the robustness tables use (lighter stack; the
/// headline accuracy and sweep tables keep the full [detector] settings).
pub fn table_detector_cfg(cfg: &RunConfig) -> DetectorConfig {
    DetectorConfig {
        rnn_layers: cfg.tables.table_rnn_layers,
        rnn_dim: cfg.tables.table_rnn_dim,
        epochs: cfg.tables.table_epochs,
        ..cfg.detector.clone()
    }
}

fn cache_key(det_cfg: &DetectorConfig, factor: usize, corpus_digest: &str) -> String {
    digest_hex(format!("{det_cfg:?}|factor={factor}|{corpus_digest}").as_bytes())
}

/// Train accuracy recorded next to each cached model.
fn meta_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("meta")
}

pub struct TrainedDetector {
    pub net: Network<f32>,
    pub train_accuracy: f64,
    pub from_cache: bool,
    pub model_path: PathBuf,
}

/// Train a detector on the corpus train split (decimated by `factor`), or
/// load it from the cache when this exact configuration already ran.
pub fn train_or_load(
    corpus: &Corpus,
    det_cfg: &DetectorConfig,
    factor: usize,
) -> CliResult<TrainedDetector> {
    let digest = corpus_digest(&corpus.dir)?;
    let key = cache_key(det_cfg, factor, &digest);
    let models = corpus.dir.join("models");
    std::fs::create_dir_all(&models)?;
    let model_path = models.join(format!("{key}.scnn"));

    if model_path.exists() {
        let net = scnn::load(&model_path)?;
        let train_accuracy = std::fs::read_to_string(meta_path(&model_path))
            .ok()
            .and_then(|s| {
                s.lines()
                    .find_map(|l| l.strip_prefix("train_acc = ").and_then(|v| v.parse().ok()))
            })
            .unwrap_or(f64::NAN);
        return Ok(TrainedDetector {
            net,
            train_accuracy,
            from_cache: true,
            model_path,
        });
    }

    let (train, _) = corpus.detector_sets(det_cfg, factor)?;
    let (net, curve) =
        train_detector(&train, det_cfg).map_err(|e| CliError::experiment(e.to_string()))?;
    let train_accuracy = accuracy(&net, &train).map_err(|e| CliError::experiment(e.to_string()))?;
    let _ = curve;
    scnn::save(&net, &model_path)?;
    // checkpoint sidecars: the config section and the training accuracy
    std::fs::write(
        model_path.with_extension("cfg"),
        detector_cfg_section(det_cfg, factor),
    )?;
    std::fs::write(meta_path(&model_path), format!("train_acc = {train_accuracy}\n"))?;
    Ok(TrainedDetector {
        net,
        train_accuracy,
        from_cache: false,
        model_path,
    })
}

fn detector_cfg_section(det_cfg: &DetectorConfig, factor: usize) -> String {
    format!(
        "[detector]\nwindow = {}\nrows = {}\ntrace_len = {}\nrnn_layers = {}\nrnn_dim = {}\nconv_channels = {}\nconv_kernel = {}\ndropout = {}\nepochs = {}\nlr = {}\nbatch = {}\nseed = {}\nfrequency_factor = {}\n",
        det_cfg.window,
        det_cfg.rows,
        det_cfg.trace_len,
        det_cfg.rnn_layers,
        det_cfg.rnn_dim,
        det_cfg.conv_channels,
        det_cfg.conv_kernel,
        det_cfg.dropout,
        det_cfg.epochs,
        det_cfg.lr,
        det_cfg.batch,
        det_cfg.seed,
        factor
    )
}

/// Headline detection-accuracy table.
pub fn run_accuracy(corpus: &Corpus, cfg: &RunConfig, out: &Path) -> CliResult<DetectionReport> {
    std::fs::create_dir_all(out)?;
    let trained = train_or_load(corpus, &cfg.detector, 1)?;
    let (_, test) = corpus.detector_sets(&cfg.detector, 1)?;
    let report = evaluate(&trained.net, &test).map_err(|e| CliError::experiment(e.to_string()))?;
    std::fs::write(out.join("detection.csv"), detection_csv(&report))?;
    std::fs::write(out.join("detection.txt"), detection_text(&report))?;
    Ok(report)
}

pub struct SweepRow {
    pub n: usize,
    pub d: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Recurrent-stack sweep: N x D grid, train and test accuracy per cell.
pub fn run_rnn_sweep(corpus: &Corpus, cfg: &RunConfig, out: &Path) -> CliResult<Vec<SweepRow>> {
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let (_, test) = corpus.detector_sets(&cfg.detector, 1)?;
    for &d in &cfg.tables.sweep_dims {
        for &n in &cfg.tables.sweep_layers {
            let det_cfg = DetectorConfig {
                rnn_layers: n,
                rnn_dim: d,
                ..cfg.detector.clone()
            };
            let trained = train_or_load(corpus, &det_cfg, 1)?;
            let report =
                evaluate(&trained.net, &test).map_err(|e| CliError::experiment(e.to_string()))?;
            rows.push(SweepRow {
                n,
                d,
                train_acc: trained.train_accuracy,
                test_acc: report.merged_acc,
            });
        }
    }
    let mut csv = String::from("n,d,train_acc,test_acc\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:.6},{:.6}", r.n, r.d, r.train_acc, r.test_acc);
    }
    std::fs::write(out.join("rnn_sweep.csv"), &csv)?;

    let series: Vec<Series> = cfg
        .tables
        .sweep_dims
        .iter()
        .map(|&d| Series {
            name: format!("D={d}"),
            points: rows
                .iter()
                .filter(|r| r.d == d)
                .map(|r| (r.n as f64, r.test_acc))
                .collect(),
        })
        .collect();
    std::fs::write(
        out.join("rnn_sweep.svg"),
        line_chart("recurrent stack sweep", "layers N", "test accuracy (merged)", &series),
    )?;
    Ok(rows)
}

pub struct FrequencyRow {
    pub factor: usize,
    pub window: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Bus-frequency robustness: decimate traces by each factor, average with
/// each window, retrain, evaluate.
pub fn run_frequency(corpus: &Corpus, cfg: &RunConfig, out: &Path) -> CliResult<Vec<FrequencyRow>> {
    std::fs::create_dir_all(out)?;
    let base = table_detector_cfg(cfg);
    let mut rows = Vec::new();
    for &window in &cfg.tables.frequency_windows {
        for &factor in &cfg.tables.frequency_factors {
            let det_cfg = DetectorConfig { window, ..base.clone() };
            let trained = train_or_load(corpus, &det_cfg, factor)?;
            let (_, test) = corpus.detector_sets(&det_cfg, factor)?;
            let report =
                evaluate(&trained.net, &test).map_err(|e| CliError::experiment(e.to_string()))?;
            rows.push(FrequencyRow {
                factor,
                window,
                train_acc: trained.train_accuracy,
                test_acc: report.merged_acc,
            });
        }
    }
    let mut csv = String::from("factor,window,train_acc,test_acc\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:.6},{:.6}", r.factor, r.window, r.train_acc, r.test_acc);
    }
    std::fs::write(out.join("frequency.csv"), &csv)?;
    let series: Vec<Series> = cfg
        .tables
        .frequency_windows
        .iter()
        .map(|&w| Series {
            name: format!("window={w}"),
            points: rows
                .iter()
                .filter(|r| r.window == w)
                .map(|r| (r.factor as f64, r.test_acc))
                .collect(),
        })
        .collect();
    std::fs::write(
        out.join("frequency.svg"),
        line_chart("bus-frequency robustness", "frequency factor", "test accuracy (merged)", &series),
    )?;
    Ok(rows)
}

pub struct LocationRow {
    pub placement: Placement,
    pub acc_noaug: f64,
    pub acc_aug: f64,
    pub merged_noaug: f64,
    pub merged_aug: f64,
}

/// Sensor-placement robustness: evaluate a baseline-trained detector on
/// traces re-simulated at each location, then again after augmenting the
/// training set with a slice of relocated traces.
pub fn run_location(
    corpus: &Corpus,
    victims: &VictimSet,
    cfg: &RunConfig,
    out: &Path,
) -> CliResult<Vec<LocationRow>> {
    std::fs::create_dir_all(out)?;
    let det_cfg = table_detector_cfg(cfg);
    let cal = calibrate(&cfg.tdc).map_err(|e| CliError::config(e.to_string()))?;
    let inputs = corpus.load_inputs()?;

    let resim = |entry: &IndexEntry, placement: Placement| -> CliResult<Tensor<f32>> {
        let qnet = qnet_for_provenance(victims, entry.victim, entry.attack);
        let input = inputs
            .get(entry.input_id as usize)
            .ok_or_else(|| CliError::data(format!("input {} missing", entry.input_id)))?;
        let id = Corpus::trace_id(entry)?;
        let readouts = simulate_readouts(cfg, &cal, qnet, input, placement, 1, id)?;
        Ok(preprocess(&readouts, &det_cfg))
    };

    let roster = |split: Split| -> Vec<&IndexEntry> {
        corpus.entries.iter().filter(|e| e.split == split).collect()
    };

    // baseline-trained model
    let base_model = train_or_load(corpus, &det_cfg, 1)?;

    // augmented training set: baseline train + share per location
    let train_entries = roster(Split::Train);
    let (aug_train, _) = corpus.detector_sets(&det_cfg, 1)?;
    let mut aug_train = aug_train;
    let share = (train_entries.len() as f64 * cfg.tables.location_augment_share) as usize;
    let mut pick_rng = Rng::derive(cfg.seed ^ 0x10c, 0);
    for placement in Placement::OFF_BASELINE {
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        pick_rng.shuffle(&mut order);
        let picks: Vec<CliResult<(Tensor<f32>, usize)>> = {
            use rayon::prelude::*;
            order[..share.min(order.len())]
                .par_iter()
                .map(|&k| {
                    let e = train_entries[k];
                    Ok((resim(e, placement)?, e.label as usize))
                })
                .collect()
        };
        for p in picks {
            let (x, label) = p?;
            aug_train.push(x, label);
        }
    }
    let (aug_net, _) = train_detector(&aug_train, &DetectorConfig { seed: det_cfg.seed ^ 0xa6, ..det_cfg.clone() })
        .map_err(|e| CliError::experiment(e.to_string()))?;

    // evaluate both models at each location
    let test_entries = roster(Split::Test);
    let mut rows = Vec::new();
    for placement in Placement::OFF_BASELINE {
        let sets: Vec<CliResult<(Tensor<f32>, usize)>> = {
            use rayon::prelude::*;
            test_entries
                .par_iter()
                .map(|e| Ok((resim(e, placement)?, e.label as usize)))
                .collect()
        };
        let mut test = Dataset::new(4);
        for s in sets {
            let (x, label) = s?;
            test.push(x, label);
        }
        let r0 = evaluate(&base_model.net, &test).map_err(|e| CliError::experiment(e.to_string()))?;
        let r1 = evaluate(&aug_net, &test).map_err(|e| CliError::experiment(e.to_string()))?;
        rows.push(LocationRow {
            placement,
            acc_noaug: r0.total_acc,
            acc_aug: r1.total_acc,
            merged_noaug: r0.merged_acc,
            merged_aug: r1.merged_acc,
        });
    }

    let mut csv = String::from("location,acc_noaug,acc_aug,merged_noaug,merged_aug\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.placement.name(),
            r.acc_noaug,
            r.acc_aug,
            r.merged_noaug,
            r.merged_aug
        );
    }
    std::fs::write(out.join("location.csv"), &csv)?;
    let series = vec![
        Series {
            name: "without augmentation".into(),
            points: rows.iter().enumerate().map(|(i, r)| (i as f64, r.acc_noaug)).collect(),
        },
        Series {
            name: "with augmentation".into(),
            points: rows.iter().enumerate().map(|(i, r)| (i as f64, r.acc_aug)).collect(),
        },
    ];
    std::fs::write(
        out.join("location.svg"),
        line_chart("sensor-placement robustness", "location index", "test accuracy", &series),
    )?;
    Ok(rows)
}

pub struct UnseenRow {
    pub method: AttackMethod,
    pub count: usize,
    /// family-correct rate: the family label for the new backdoor trigger,
    /// adversarial or extraction pooled for the other two
    pub family_accuracy: f64,
}

/// Generalization to attacks held out of training.
pub fn run_unseen(corpus: &Corpus, cfg: &RunConfig, out: &Path) -> CliResult<Vec<UnseenRow>> {
    std::fs::create_dir_all(out)?;
    let det_cfg = table_detector_cfg(cfg);
    let trained = train_or_load(corpus, &det_cfg, 1)?;
    let sets = corpus.unseen_sets(&det_cfg)?;
    let mut rows = Vec::new();
    for (method, set) in sets {
        if set.is_empty() {
            continue;
        }
        let mut hits = 0usize;
        for (x, &label) in set.inputs.iter().zip(set.labels.iter()) {
            let pred = trained
                .net
                .infer(x)
                .map_err(|e| CliError::experiment(e.to_string()))?
                .argmax();
            let ok = match method.label() {
                TraceLabel::Backdoor => pred == label,
                // adversarial and extraction are pooled, as in the merged
                // metric
                _ => pred == 1 || pred == 3,
            };
            hits += usize::from(ok);
        }
        rows.push(UnseenRow {
            method,
            count: set.len(),
            family_accuracy: hits as f64 / set.len() as f64,
        });
    }
    let mut csv = String::from("family,n,family_accuracy\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:.6}", r.method.name(), r.count, r.family_accuracy);
    }
    std::fs::write(out.join("unseen.csv"), &csv)?;
    Ok(rows)
}

/// Render one activation-map panel per class from test traces.
pub fn run_cam(corpus: &Corpus, cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let trained = train_or_load(corpus, &cfg.detector, 1)?;
    let mut paths = Vec::new();
    for label in TraceLabel::ALL {
        let entry = corpus
            .entries
            .iter()
            .find(|e| e.split == Split::Test && e.label == label)
            .or_else(|| corpus.entries.iter().find(|e| e.label == label))
            .ok_or_else(|| CliError::data(format!("no trace of class {}", label.name())))?;
        let readouts = corpus.read_trace(entry)?;
        let matrix = preprocess(&readouts, &cfg.detector);
        let cam = grad_cam(&trained.net, &matrix, label as usize)
            .map_err(|e| CliError::experiment(e.to_string()))?;
        // flatten the matrix back to the averaged series for display
        let flat: Vec<f32> = matrix.data().to_vec();
        let per_row = cfg.detector.columns();
        let mut importance = Vec::with_capacity(flat.len());
        for _ in 0..cfg.detector.rows {
            importance.extend_from_slice(&cam.importance[..per_row.min(cam.importance.len())]);
        }
        importance.resize(flat.len(), 0.0);
        let svg = cam_panel(
            &format!("class activation: {}", label.name()),
            &flat,
            &importance,
            cam.all_zero,
        );
        let path = out.join(format!("cam_{}.svg", label.name()));
        std::fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Detection-avoidance attack against the trained detector over the full
/// noisy pipeline.
pub fn run_avoid(
    corpus: &Corpus,
    victims: &VictimSet,
    cfg: &RunConfig,
    out: &Path,
) -> CliResult<AvoidanceRun> {
    std::fs::create_dir_all(out)?;
    let trained = train_or_load(corpus, &cfg.detector, 1)?;
    let cal = calibrate(&cfg.tdc).map_err(|e| CliError::config(e.to_string()))?;
    let inputs = corpus.load_inputs()?;

    // a successful attack input: the detector must label its trace as an
    // attack class before avoidance starts
    let mut chosen: Option<(&IndexEntry, Tensor<f32>)> = None;
    // prefer test-split attacks; fall back to train-split ones
    let mut candidates: Vec<&IndexEntry> = corpus
        .entries
        .iter()
        .filter(|e| e.split == Split::Test)
        .collect();
    candidates.extend(corpus.entries.iter().filter(|e| e.split == Split::Train));
    for e in candidates {
        if e.label == TraceLabel::Benign {
            continue;
        }
        if AttackMethod::from_id(e.attack)
            .map(|m| AttackMethod::UNSEEN.contains(&m))
            .unwrap_or(false)
        {
            continue;
        }
        let readouts = corpus.read_trace(e)?;
        let matrix = preprocess(&readouts, &cfg.detector);
        let pred = trained
            .net
            .infer(&matrix)
            .map_err(|e| CliError::experiment(e.to_string()))?
            .argmax();
        if pred != TraceLabel::Benign as usize {
            let x = inputs
                .get(e.input_id as usize)
                .ok_or_else(|| CliError::data(format!("input {} missing", e.input_id)))?
                .clone();
            chosen = Some((e, x));
            break;
        }
    }
    let (entry, x) = chosen
        .ok_or_else(|| CliError::experiment("no detected attack trace to start from".to_string()))?;

    let qnet = qnet_for_provenance(victims, entry.victim, entry.attack);
    let mut oracle = PipelineOracle::new(
        qnet,
        &trained.net,
        cfg.detector.clone(),
        cfg.pdn,
        Placement::Baseline.profile(),
        cfg.tdc,
        cal,
        cfg.seed ^ 0xa701d,
    );
    let run = run_avoidance(
        &mut oracle,
        &x,
        &cfg.avoidance,
        cfg.tables.avoidance_repeats,
        cfg.seed,
    )
    .map_err(|e| CliError::experiment(e.to_string()))?;

    let mut csv = String::from("iteration,benign_rate,queries_used,victim_label_preserved\n");
    for r in &run.rows {
        let _ = writeln!(
            csv,
            "{},{:.6},{},{:.6}",
            r.iteration, r.benign_rate, r.queries_used, r.victim_label_preserved
        );
    }
    std::fs::write(out.join("avoidance.csv"), &csv)?;
    let series = [Series {
        name: "benign rate".into(),
        points: run.rows.iter().map(|r| (r.iteration as f64, r.benign_rate)).collect(),
    }];
    std::fs::write(
        out.join("avoidance.svg"),
        line_chart("detection avoidance", "iteration", "rate classified benign", &series),
    )?;
    Ok(run)
}
