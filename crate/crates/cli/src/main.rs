//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use powertrace_cli::config::RunConfig;
use powertrace_cli::dataset::{build_corpus, generate_victims, load_victims, Corpus};
use powertrace_cli::error::{CliError, CliResult};
use powertrace_cli::manifest::Manifest;
use powertrace_cli::recipes;

#[derive(Parser)]
#[command(
    name = "powertrace",
    about = "Desk-scale digital twin of a power side-channel threat detector for AI accelerators",
    version
)]
struct Cli {
    /// configuration file (sectioned key = value text)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// master seed override
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// output / corpus directory
    #[arg(long, global = true, default_value = "powertrace-out")]
    out: PathBuf,

    /// restore the full-scale victim and trace counts of the original
    /// measurement campaign
    #[arg(long, global = true)]
    paper_scale: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TableName {
    RnnSweep,
    Accuracy,
    Frequency,
    Location,
    Unseen,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, train, quantize, and backdoor the victim fleet
    GenVictims,
    /// Build the full trace corpus (victims included if absent)
    BuildDataset,
    /// Train the default detector on the corpus train split
    TrainDetector,
    /// Evaluate the default detector on the corpus test split
    Eval,
    /// Run an experiment table
    Table {
        #[arg(value_enum)]
        name: TableName,
    },
    /// Render per-class activation-map panels
    Cam,
    /// Run the black-box detection-avoidance attack
    Avoid,
    /// Calibrate the sensor's initial delay and print the result
    CalibrateTdc,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    if cli.paper_scale {
        cfg.apply_paper_scale();
    }
    let out = cli.out;

    match cli.command {
        Command::GenVictims => {
            std::fs::create_dir_all(&out)?;
            let mut manifest = Manifest::new(&cfg.dump_normalized(), cfg.seed);
            let set = generate_victims(&cfg, &out, &mut manifest)?;
            manifest.save(&out.join("victims-manifest.txt"))?;
            println!(
                "trained {} victims (+{} backdoored, +{} held-out square-trigger) under {}",
                set.clean.len(),
                set.poisoned.len(),
                set.unseen_poisoned.len(),
                out.display()
            );
        }
        Command::BuildDataset => {
            std::fs::create_dir_all(&out)?;
            let mut manifest = Manifest::new(&cfg.dump_normalized(), cfg.seed);
            let t0 = Instant::now();
            let corpus = build_corpus(&cfg, &out, &mut manifest)?;
            manifest.save(&out.join("run-manifest.txt"))?;
            let train = corpus.entries.iter().filter(|e| e.split.name() == "train").count();
            let test = corpus.entries.iter().filter(|e| e.split.name() == "test").count();
            let unseen = corpus.entries.len() - train - test;
            println!(
                "corpus: {} traces ({train} train / {test} test / {unseen} unseen) in {:.1}s -> {}",
                corpus.entries.len(),
                t0.elapsed().as_secs_f64(),
                out.display()
            );
        }
        Command::TrainDetector => {
            let corpus = Corpus::open(&out)?;
            let t0 = Instant::now();
            let trained = recipes::train_or_load(&corpus, &cfg.detector, 1)?;
            println!(
                "detector {} (train accuracy {:.3}) in {:.1}s -> {}",
                if trained.from_cache { "loaded from cache" } else { "trained" },
                trained.train_accuracy,
                t0.elapsed().as_secs_f64(),
                trained.model_path.display()
            );
        }
        Command::Eval => {
            let corpus = Corpus::open(&out)?;
            let report = recipes::run_accuracy(&corpus, &cfg, &out.join("reports"))?;
            print!("{}", powertrace_cli::report::detection_text(&report));
            println!("written to {}", out.join("reports").display());
        }
        Command::Table { name } => {
            let corpus = Corpus::open(&out)?;
            let tdir = out.join("tables");
            match name {
                TableName::Accuracy => {
                    let report = recipes::run_accuracy(&corpus, &cfg, &tdir)?;
                    println!(
                        "accuracy table: total {:.3}, merged {:.3}, fpr {:.3} -> {}",
                        report.total_acc,
                        report.merged_acc,
                        report.fpr,
                        tdir.display()
                    );
                }
                TableName::RnnSweep => {
                    let rows = recipes::run_rnn_sweep(&corpus, &cfg, &tdir)?;
                    for r in &rows {
                        println!("N={} D={}: train {:.3} test {:.3}", r.n, r.d, r.train_acc, r.test_acc);
                    }
                }
                TableName::Frequency => {
                    let rows = recipes::run_frequency(&corpus, &cfg, &tdir)?;
                    for r in &rows {
                        println!(
                            "factor={} window={}: train {:.3} test {:.3}",
                            r.factor, r.window, r.train_acc, r.test_acc
                        );
                    }
                }
                TableName::Location => {
                    let victims = load_victims(&cfg, &out)?;
                    let rows = recipes::run_location(&corpus, &victims, &cfg, &tdir)?;
                    for r in &rows {
                        println!(
                            "{}: {:.3} without augmentation, {:.3} with",
                            r.placement.name(),
                            r.acc_noaug,
                            r.acc_aug
                        );
                    }
                }
                TableName::Unseen => {
                    let rows = recipes::run_unseen(&corpus, &cfg, &tdir)?;
                    for r in &rows {
                        println!(
                            "{}: {:.3} family accuracy over {} traces",
                            r.method.name(),
                            r.family_accuracy,
                            r.count
                        );
                    }
                }
            }
        }
        Command::Cam => {
            let corpus = Corpus::open(&out)?;
            let paths = recipes::run_cam(&corpus, &cfg, &out.join("cam"))?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Avoid => {
            let corpus = Corpus::open(&out)?;
            let victims = load_victims(&cfg, &out)?;
            let run = recipes::run_avoid(&corpus, &victims, &cfg, &out.join("avoidance"))?;
            let last = run.rows.last();
            println!(
                "avoidance: {} iterations, {} estimation queries, final benign rate {}",
                run.rows.len(),
                run.queries_used,
                last.map(|r| format!("{:.3}", r.benign_rate)).unwrap_or_else(|| "-".into())
            );
        }
        Command::CalibrateTdc => {
            let cal = powertrace_core::tdc::calibrate(&cfg.tdc)
                .map_err(|e| CliError::config(e.to_string()))?;
            println!(
                "coarse {} x {} ps + fine {} x {} ps -> nominal readout {} of {} taps",
                cal.coarse_len,
                cfg.tdc.coarse_unit_ps,
                cal.fine_len,
                cfg.tdc.fine_unit_ps,
                cal.nominal_readout,
                cfg.tdc.taps
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("powertrace: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
