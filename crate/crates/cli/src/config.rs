//! Sectioned key-value configuration.
//!
//! ```text
//! # comment
//! [pdn]
//! r_ohms = 0.1
//! noise_sigma_volts = 1.25e-3
//!
//! [detector]
//! rnn_layers = 5
//! ```
//!
//! Sections mirror the module configs; anything absent falls back to the
//! built-in defaults. `dump_normalized` renders the effective settings in
//! sorted order, which is what the run manifest hashes.

use std::collections::BTreeMap;
use std::path::Path;

use powertrace_core::avoidance::{AvoidanceConfig, Norm};
use powertrace_core::detector::DetectorConfig;
use powertrace_core::leakage::PdnParams;
use powertrace_core::schedule::ScheduleConfig;
use powertrace_core::tdc::{ReadoutMode, TdcConfig};
use powertrace_core::victim::VictimTrainRecipe;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<ConfigFile> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::config(format!("line {}: unterminated section header", lineno + 1)))?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected key = value", lineno + 1)))?;
            if current.is_empty() {
                return Err(CliError::config(format!(
                    "line {}: key outside any [section]",
                    lineno + 1
                )));
            }
            sections
                .get_mut(&current)
                .expect("section exists")
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { sections })
    }

    pub fn load(path: &Path) -> CliResult<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> CliResult<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                CliError::config(format!("[{section}] {key}: cannot parse {raw:?}"))
            }),
        }
    }

    pub fn f64(&self, section: &str, key: &str, default: f64) -> CliResult<f64> {
        self.parsed(section, key, default)
    }

    pub fn usize(&self, section: &str, key: &str, default: usize) -> CliResult<usize> {
        self.parsed(section, key, default)
    }

    pub fn u64(&self, section: &str, key: &str, default: u64) -> CliResult<u64> {
        self.parsed(section, key, default)
    }

    pub fn bool(&self, section: &str, key: &str, default: bool) -> CliResult<bool> {
        self.parsed(section, key, default)
    }

    pub fn string(&self, section: &str, key: &str, default: &str) -> String {
        self.get(section, key).unwrap_or(default).to_string()
    }

    pub fn usize_list(&self, section: &str, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        CliError::config(format!("[{section}] {key}: bad list entry {p:?}"))
                    })
                })
                .collect(),
        }
    }
}

/// Fully resolved settings for a run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub pdn: PdnParams,
    pub tdc: TdcConfig,
    pub schedule: ScheduleConfig,
    pub detector: DetectorConfig,
    pub victims: VictimSettings,
    pub dataset: DatasetSettings,
    pub attacks: AttackSettings,
    pub avoidance: AvoidanceConfig,
    pub tables: TableSettings,
}

#[derive(Clone, Debug)]
pub struct VictimSettings {
    pub count: usize,
    pub train_samples: usize,
    pub recipe: VictimTrainRecipe,
    /// victims additionally poisoned with the held-out square trigger
    pub unseen_poisoned: usize,
}

#[derive(Clone, Debug)]
pub struct DatasetSettings {
    pub traces_per_class: usize,
    /// held-out traces per unseen attack family
    pub unseen_per_family: usize,
    pub poison_rate: f64,
    pub instance_poison_rate: f64,
    pub backdoor_target: usize,
    pub jbda_seeds: usize,
    pub jbda_rounds: usize,
}

#[derive(Clone, Debug)]
pub struct AttackSettings {
    pub fgsm_eps: f64,
    pub pgd_eps: f64,
    pub pgd_step: f64,
    pub pgd_steps: usize,
    pub cw_max_iter: usize,
    pub cw_binary_steps: usize,
    pub cw_lr: f64,
    pub deepfool_max_iter: usize,
}

#[derive(Clone, Debug)]
pub struct TableSettings {
    pub sweep_layers: Vec<usize>,
    pub sweep_dims: Vec<usize>,
    pub frequency_factors: Vec<usize>,
    pub frequency_windows: Vec<usize>,
    /// detector overrides for the robustness tables (frequency, location,
    /// unseen); the headline tables always use [detector]
    pub table_rnn_layers: usize,
    pub table_rnn_dim: usize,
    pub table_epochs: usize,
    pub location_augment_share: f64,
    pub avoidance_repeats: usize,
}

impl RunConfig {
    pub fn from_file(file: &ConfigFile, seed_override: Option<u64>) -> CliResult<RunConfig> {
        let seed = match seed_override {
            Some(s) => s,
            None => file.u64("run", "seed", 1)?,
        };

        let pdn = PdnParams {
            r_ohms: file.f64("pdn", "r_ohms", 0.1)?,
            l_henries: file.f64("pdn", "l_henries", 1e-9)?,
            c_farads: file.f64("pdn", "c_farads", 1e-6)?,
            dt_seconds: file.f64("pdn", "dt_seconds", 1e-7)?,
            amps_per_toggle: file.f64("pdn", "amps_per_toggle", 5e-4)?,
            noise_sigma_volts: file.f64("pdn", "noise_sigma_volts", 0.5 / 3200.0)?,
        };
        if !pdn.validate() {
            return Err(CliError::config("pdn parameters must be positive"));
        }

        let readout_mode = match file.string("tdc", "readout_mode", "sum").as_str() {
            "raw" => ReadoutMode::Raw,
            "sum" => ReadoutMode::Sum,
            "exp_sum" => ReadoutMode::ExpSum,
            other => {
                return Err(CliError::config(format!("[tdc] readout_mode: unknown {other:?}")))
            }
        };
        let tdc = TdcConfig {
            taps: file.usize("tdc", "taps", 128)?,
            coarse_max: file.usize("tdc", "coarse_max", 32)?,
            fine_max: file.usize("tdc", "fine_max", 32)?,
            coarse_unit_ps: file.f64("tdc", "coarse_unit_ps", 80.0)?,
            fine_unit_ps: file.f64("tdc", "fine_unit_ps", 10.0)?,
            tap_unit_ps: file.f64("tdc", "tap_unit_ps", 20.0)?,
            sensor_clock_hz: file.f64("tdc", "sensor_clock_hz", 150e6)?,
            bus_clock_hz: file.f64("tdc", "bus_clock_hz", 10e6)?,
            sensitivity_taps_per_volt: file.f64("tdc", "sensitivity_taps_per_volt", 3200.0)?,
            readout_mode,
        };
        tdc.validate().map_err(|e| CliError::config(e.to_string()))?;

        let schedule = ScheduleConfig {
            mac_lanes: file.usize("schedule", "mac_lanes", 16)?,
            accumulator_byte: file.bool("schedule", "accumulator_byte", true)?,
        };

        let detector = DetectorConfig {
            window: file.usize("detector", "window", 10)?,
            rows: file.usize("detector", "rows", 3)?,
            trace_len: file.usize("detector", "trace_len", 768)?,
            rnn_layers: file.usize("detector", "rnn_layers", 5)?,
            rnn_dim: file.usize("detector", "rnn_dim", 128)?,
            conv_channels: file.usize("detector", "conv_channels", 16)?,
            conv_kernel: file.usize("detector", "conv_kernel", 7)?,
            dropout: file.f64("detector", "dropout", 0.3)?,
            epochs: file.usize("detector", "epochs", 100)?,
            lr: file.f64("detector", "lr", 1e-2)?,
            batch: file.usize("detector", "batch", 32)?,
            seed,
        };
        detector.validate().map_err(|e| CliError::config(e.to_string()))?;

        let victims = VictimSettings {
            count: file.usize("victims", "count", 40)?,
            train_samples: file.usize("victims", "train_samples", 1000)?,
            recipe: VictimTrainRecipe {
                epochs: file.usize("victims", "epochs", 10)?,
                lr: file.f64("victims", "lr", 1e-3)?,
                batch: file.usize("victims", "batch", 64)?,
                min_train_accuracy: file.f64("victims", "min_train_accuracy", 0.9)?,
                max_regens: file.usize("victims", "max_regens", 4)?,
                calib_samples: file.usize("victims", "calib_samples", 32)?,
            },
            unseen_poisoned: file.usize("victims", "unseen_poisoned", 8)?,
        };

        let dataset = DatasetSettings {
            traces_per_class: file.usize("dataset", "traces_per_class", 500)?,
            unseen_per_family: file.usize("dataset", "unseen_per_family", 60)?,
            poison_rate: file.f64("dataset", "poison_rate", 0.10)?,
            instance_poison_rate: file.f64("dataset", "instance_poison_rate", 0.017)?,
            backdoor_target: file.usize("dataset", "backdoor_target", 0)?,
            jbda_seeds: file.usize("dataset", "jbda_seeds", 16)?,
            jbda_rounds: file.usize("dataset", "jbda_rounds", 2)?,
        };

        let attacks = AttackSettings {
            fgsm_eps: file.f64("attacks", "fgsm_eps", 0.5)?,
            pgd_eps: file.f64("attacks", "pgd_eps", 0.5)?,
            pgd_step: file.f64("attacks", "pgd_step", 8.0 / 255.0)?,
            pgd_steps: file.usize("attacks", "pgd_steps", 40)?,
            cw_max_iter: file.usize("attacks", "cw_max_iter", 80)?,
            cw_binary_steps: file.usize("attacks", "cw_binary_steps", 6)?,
            cw_lr: file.f64("attacks", "cw_lr", 0.05)?,
            deepfool_max_iter: file.usize("attacks", "deepfool_max_iter", 50)?,
        };

        let norm = match file.string("avoidance", "norm", "linf").as_str() {
            "l2" => Norm::L2,
            "linf" => Norm::LInf,
            other => return Err(CliError::config(format!("[avoidance] norm: unknown {other:?}"))),
        };
        let avoidance = AvoidanceConfig {
            d_prime: file.usize("avoidance", "d_prime", 256)?,
            sigma: file.f64("avoidance", "sigma", 1e-3)?,
            eta: file.f64("avoidance", "eta", 1e-3)?,
            mu: file.f64("avoidance", "mu", 0.5)?,
            epsilon: file.f64("avoidance", "epsilon", 1.0 / 255.0)?,
            norm,
            iters: file.usize("avoidance", "iters", 256)?,
            budget: file.u64("avoidance", "budget", 65_536)?,
            weight_by_clipped: file.bool("avoidance", "weight_by_clipped", true)?,
        };
        avoidance.validate().map_err(|e| CliError::config(e.to_string()))?;

        let tables = TableSettings {
            sweep_layers: file.usize_list("tables", "sweep_layers", &[1, 2, 3, 4, 5, 6])?,
            sweep_dims: file.usize_list("tables", "sweep_dims", &[128, 256])?,
            frequency_factors: file.usize_list("tables", "frequency_factors", &[1, 2, 3, 4, 5])?,
            frequency_windows: file.usize_list("tables", "frequency_windows", &[50, 10])?,
            table_rnn_layers: file.usize("tables", "table_rnn_layers", 2)?,
            table_rnn_dim: file.usize("tables", "table_rnn_dim", 48)?,
            table_epochs: file.usize("tables", "table_epochs", 30)?,
            location_augment_share: file.f64("tables", "location_augment_share", 0.10)?,
            avoidance_repeats: file.usize("tables", "avoidance_repeats", 100)?,
        };

        Ok(RunConfig {
            seed,
            pdn,
            tdc,
            schedule,
            detector,
            victims,
            dataset,
            attacks,
            avoidance,
            tables,
        })
    }

    /// Restore the full-scale counts used by the original measurement
    /// campaign (400 victims, full sweep grid).
    pub fn apply_paper_scale(&mut self) {
        self.victims.count = 400;
        self.dataset.traces_per_class = 5000;
    }

    /// Canonical rendering of the effective configuration (sorted sections
    /// and keys); hashed into the run manifest.
    pub fn dump_normalized(&self) -> String {
        let mut s = String::new();
        let mut kv = |sec: &str, pairs: Vec<(&str, String)>| {
            s.push_str(&format!("[{sec}]\n"));
            for (k, v) in pairs {
                s.push_str(&format!("{k} = {v}\n"));
            }
        };
        kv(
            "attacks",
            vec![
                ("cw_binary_steps", self.attacks.cw_binary_steps.to_string()),
                ("cw_lr", self.attacks.cw_lr.to_string()),
                ("cw_max_iter", self.attacks.cw_max_iter.to_string()),
                ("deepfool_max_iter", self.attacks.deepfool_max_iter.to_string()),
                ("fgsm_eps", self.attacks.fgsm_eps.to_string()),
                ("pgd_eps", self.attacks.pgd_eps.to_string()),
                ("pgd_step", self.attacks.pgd_step.to_string()),
                ("pgd_steps", self.attacks.pgd_steps.to_string()),
            ],
        );
        kv(
            "avoidance",
            vec![
                ("budget", self.avoidance.budget.to_string()),
                ("d_prime", self.avoidance.d_prime.to_string()),
                ("epsilon", self.avoidance.epsilon.to_string()),
                ("eta", self.avoidance.eta.to_string()),
                ("iters", self.avoidance.iters.to_string()),
                ("mu", self.avoidance.mu.to_string()),
                ("norm", format!("{:?}", self.avoidance.norm)),
                ("sigma", self.avoidance.sigma.to_string()),
                ("weight_by_clipped", self.avoidance.weight_by_clipped.to_string()),
            ],
        );
        kv(
            "dataset",
            vec![
                ("backdoor_target", self.dataset.backdoor_target.to_string()),
                ("instance_poison_rate", self.dataset.instance_poison_rate.to_string()),
                ("jbda_rounds", self.dataset.jbda_rounds.to_string()),
                ("jbda_seeds", self.dataset.jbda_seeds.to_string()),
                ("poison_rate", self.dataset.poison_rate.to_string()),
                ("traces_per_class", self.dataset.traces_per_class.to_string()),
                ("unseen_per_family", self.dataset.unseen_per_family.to_string()),
            ],
        );
        kv(
            "detector",
            vec![
                ("batch", self.detector.batch.to_string()),
                ("conv_channels", self.detector.conv_channels.to_string()),
                ("conv_kernel", self.detector.conv_kernel.to_string()),
                ("dropout", self.detector.dropout.to_string()),
                ("epochs", self.detector.epochs.to_string()),
                ("lr", self.detector.lr.to_string()),
                ("rnn_dim", self.detector.rnn_dim.to_string()),
                ("rnn_layers", self.detector.rnn_layers.to_string()),
                ("rows", self.detector.rows.to_string()),
                ("trace_len", self.detector.trace_len.to_string()),
                ("window", self.detector.window.to_string()),
            ],
        );
        kv(
            "pdn",
            vec![
                ("amps_per_toggle", self.pdn.amps_per_toggle.to_string()),
                ("c_farads", self.pdn.c_farads.to_string()),
                ("dt_seconds", self.pdn.dt_seconds.to_string()),
                ("l_henries", self.pdn.l_henries.to_string()),
                ("noise_sigma_volts", self.pdn.noise_sigma_volts.to_string()),
                ("r_ohms", self.pdn.r_ohms.to_string()),
            ],
        );
        kv("run", vec![("seed", self.seed.to_string())]);
        kv(
            "schedule",
            vec![
                ("accumulator_byte", self.schedule.accumulator_byte.to_string()),
                ("mac_lanes", self.schedule.mac_lanes.to_string()),
            ],
        );
        kv(
            "tables",
            vec![
                (
                    "frequency_factors",
                    format!("{:?}", self.tables.frequency_factors),
                ),
                (
                    "frequency_windows",
                    format!("{:?}", self.tables.frequency_windows),
                ),
                ("location_augment_share", self.tables.location_augment_share.to_string()),
                ("avoidance_repeats", self.tables.avoidance_repeats.to_string()),
                ("sweep_dims", format!("{:?}", self.tables.sweep_dims)),
                ("sweep_layers", format!("{:?}", self.tables.sweep_layers)),
                ("table_epochs", self.tables.table_epochs.to_string()),
                ("table_rnn_dim", self.tables.table_rnn_dim.to_string()),
                ("table_rnn_layers", self.tables.table_rnn_layers.to_string()),
            ],
        );
        kv(
            "tdc",
            vec![
                ("bus_clock_hz", self.tdc.bus_clock_hz.to_string()),
                ("coarse_max", self.tdc.coarse_max.to_string()),
                ("coarse_unit_ps", self.tdc.coarse_unit_ps.to_string()),
                ("fine_max", self.tdc.fine_max.to_string()),
                ("fine_unit_ps", self.tdc.fine_unit_ps.to_string()),
                ("readout_mode", format!("{:?}", self.tdc.readout_mode)),
                ("sensitivity_taps_per_volt", self.tdc.sensitivity_taps_per_volt.to_string()),
                ("sensor_clock_hz", self.tdc.sensor_clock_hz.to_string()),
                ("tap_unit_ps", self.tdc.tap_unit_ps.to_string()),
                ("taps", self.tdc.taps.to_string()),
            ],
        );
        kv(
            "victims",
            vec![
                ("calib_samples", self.victims.recipe.calib_samples.to_string()),
                ("count", self.victims.count.to_string()),
                ("epochs", self.victims.recipe.epochs.to_string()),
                ("lr", self.victims.recipe.lr.to_string()),
                ("max_regens", self.victims.recipe.max_regens.to_string()),
                ("min_train_accuracy", self.victims.recipe.min_train_accuracy.to_string()),
                ("train_samples", self.victims.train_samples.to_string()),
                ("unseen_poisoned", self.victims.unseen_poisoned.to_string()),
            ],
        );
        s
    }

    pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> CliResult<RunConfig> {
        let file = match path {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        Self::from_file(&file, seed_override)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip_defaults() {
        let cfg = RunConfig::load(None, None).unwrap();
        assert_eq!(cfg.detector.rnn_layers, 5);
        assert_eq!(cfg.detector.rnn_dim, 128);
        assert_eq!(cfg.victims.count, 40);
        assert_eq!(cfg.avoidance.d_prime, 256);
        assert!((cfg.pdn.noise_sigma_volts - 0.5 / 3200.0).abs() < 1e-12);
    }

    #[test]
    fn sections_and_overrides() {
        let file = ConfigFile::parse(
            "# top comment\n[detector]\nrnn_layers = 3\n\n[pdn]\nr_ohms = 0.2 # inline\n",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&file, Some(9)).unwrap();
        assert_eq!(cfg.detector.rnn_layers, 3);
        assert_eq!(cfg.pdn.r_ohms, 0.2);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn bad_lines_are_config_errors() {
        assert!(ConfigFile::parse("[unterminated\n").is_err());
        assert!(ConfigFile::parse("key_without_section = 1\n").is_err());
        let file = ConfigFile::parse("[detector]\nrnn_layers = banana\n").unwrap();
        match RunConfig::from_file(&file, None) {
            Err(CliError::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn normalized_dump_is_stable() {
        let a = RunConfig::load(None, Some(5)).unwrap().dump_normalized();
        let b = RunConfig::load(None, Some(5)).unwrap().dump_normalized();
        assert_eq!(a, b);
        assert!(a.contains("[detector]"));
    }
}
