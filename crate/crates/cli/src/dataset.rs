//! Corpus construction: train and quantize the victim fleet, run the attack
//! roster, simulate every inference through the leakage and sensor models,
//! and emit trace files with an index and split lists.
//!
//! Directory layout under the output root:
//!
//! ```text
//! victims/victim_NNN.scnn          clean fleet
//! victims/poisoned_NNN.scnn        roster-trigger backdoored variants
//! victims/unseen_NNN.scnn          square-trigger variants (held out)
//! victims/victims.csv              accuracy / attack-success bookkeeping
//! traces/trace_NNNNN.sctr          readout series
//! inputs.scin                      the model input behind each trace
//! index.csv                        label, provenance, split per trace
//! run-manifest.txt                 config hash, timings, file digests
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use powertrace_core::attacks::{
    apply_trigger, cw_l2, deepfool, fgsm, jbda, pgd, poison_and_train, surrogate_queries,
    AttackMethod, CwConfig, JbdaConfig, TriggerKind, TriggerSpec,
};
use powertrace_core::detector::{preprocess, DetectorConfig};
use powertrace_core::leakage::{apply_placement, pdn_filter, switching_activity, Placement};
use powertrace_core::network::Network;
use powertrace_core::quant::{quantize_network, QuantizedNetwork};
use powertrace_core::rng::Rng;
use powertrace_core::schedule::emit_schedule;
use powertrace_core::synth;
use powertrace_core::tdc::{calibrate, sample_trace, Calibration, TraceLabel, TraceMeta};
use powertrace_core::tensor::Tensor;
use powertrace_core::train::Dataset;
use powertrace_core::victim::{train_victims, TrainedVictim};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{scin, scnn, sctr};
use crate::manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Unseen,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unseen => "unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "unseen" => Some(Split::Unseen),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IndexEntry {
    pub file: String,
    pub label: TraceLabel,
    pub victim: u32,
    pub attack: u8,
    pub placement: u8,
    pub factor: u8,
    pub split: Split,
    pub input_id: u32,
}

/// A corpus opened for experiments.
pub struct Corpus {
    pub dir: PathBuf,
    pub entries: Vec<IndexEntry>,
}

/// The victim fleet with quantized forms rebuilt.
pub struct VictimSet {
    pub clean: Vec<(Network<f32>, QuantizedNetwork)>,
    pub poisoned: Vec<(Network<f32>, QuantizedNetwork)>,
    pub unseen_poisoned: Vec<(Network<f32>, QuantizedNetwork)>,
}

/// Trigger assigned to a victim's backdoored variant under the roster.
pub fn roster_trigger(cfg: &RunConfig, victim: usize) -> TriggerSpec {
    let kind = [TriggerKind::Pattern, TriggerKind::Instance, TriggerKind::Watermark][victim % 3];
    let instance = synth::fashion_like(cfg.seed ^ 0x1257, 1).pop().expect("one image");
    TriggerSpec::for_kind(kind, &instance, cfg.seed ^ victim as u64)
}

fn poison_rate_for(cfg: &RunConfig, kind: TriggerKind) -> f64 {
    match kind {
        TriggerKind::Instance => cfg.dataset.instance_poison_rate,
        _ => cfg.dataset.poison_rate,
    }
}

/// The 10-class victim training set (synthetic digits).
pub fn victim_training_data(cfg: &RunConfig) -> Dataset {
    synth::digits(cfg.seed ^ 0xd0d0, cfg.victims.train_samples)
}

fn calib_inputs(data: &Dataset, n: usize) -> Vec<Tensor<f32>> {
    data.inputs.iter().take(n.max(1)).cloned().collect()
}

/// Generate, train, quantize, and persist the victim fleet (clean +
/// backdoored variants). Returns the in-memory set.
pub fn generate_victims(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> CliResult<VictimSet> {
    let vdir = out.join("victims");
    std::fs::create_dir_all(&vdir)?;
    let data = victim_training_data(cfg);
    let calib = calib_inputs(&data, cfg.victims.recipe.calib_samples);

    let t0 = std::time::Instant::now();
    let trained: Vec<TrainedVictim> =
        train_victims(cfg.victims.count, cfg.seed, &data, &cfg.victims.recipe)
            .map_err(|e| CliError::experiment(e.to_string()))?;
    manifest.stage_done("train_victims", t0);
    if trained.len() != cfg.victims.count {
        return Err(CliError::experiment(format!(
            "only {}/{} victims reached the accuracy threshold",
            trained.len(),
            cfg.victims.count
        )));
    }

    let mut csv = String::from("id,kind,seed,depth,train_acc,clean_acc,asr,poisoned\n");
    let mut clean = Vec::with_capacity(trained.len());
    for v in &trained {
        let path = vdir.join(format!("victim_{:03}.scnn", v.id));
        let bytes = scnn::encode(&v.net);
        manifest.write_file(&path, &bytes)?;
        let _ = writeln!(
            csv,
            "{},clean,{},{},{:.4},,,",
            v.id, v.spec.seed, v.spec.depth, v.train_accuracy
        );
        clean.push((v.net.clone(), v.qnet.clone()));
    }

    // roster-trigger backdoored variant per victim
    let mut poisoned = Vec::with_capacity(trained.len());
    let t0 = std::time::Instant::now();
    {
        let jobs: Vec<usize> = (0..trained.len()).collect();
        let results: Vec<CliResult<_>> = {
            use rayon::prelude::*;
            jobs.par_iter()
                .map(|&i| {
                    let v = &trained[i];
                    let trigger = roster_trigger(cfg, i);
                    let rate = poison_rate_for(cfg, trigger.kind);
                    let tc = powertrace_core::train::TrainConfig::new(
                        cfg.victims.recipe.epochs,
                        cfg.victims.recipe.lr,
                        cfg.victims.recipe.batch,
                        v.spec.seed ^ 0xbd00,
                    );
                    poison_and_train(
                        &v.spec,
                        &data,
                        &trigger,
                        rate,
                        cfg.dataset.backdoor_target,
                        &tc,
                        cfg.victims.recipe.calib_samples,
                        v.spec.seed,
                    )
                    .map(|o| (i, trigger.kind, o))
                    .map_err(|e| CliError::experiment(format!("poisoning victim {i}: {e}")))
                })
                .collect()
        };
        for r in results {
            let (i, kind, o) = r?;
            let path = vdir.join(format!("poisoned_{i:03}.scnn"));
            let bytes = scnn::encode(&o.net);
            manifest.write_file(&path, &bytes)?;
            let _ = writeln!(
                csv,
                "{i},poisoned-{:?},{},{},,{:.4},{:.4},{}",
                kind,
                trained[i].spec.seed,
                trained[i].spec.depth,
                o.clean_accuracy,
                o.attack_success_rate,
                o.poisoned_count
            );
            poisoned.push((o.net, o.qnet));
        }
    }
    manifest.stage_done("poison_victims", t0);

    // held-out square-trigger variants
    let mut unseen_poisoned = Vec::new();
    let t0 = std::time::Instant::now();
    {
        let n = cfg.victims.unseen_poisoned.min(trained.len());
        let results: Vec<CliResult<_>> = {
            use rayon::prelude::*;
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let v = &trained[i];
                    let trigger = TriggerSpec::square3x3();
                    let tc = powertrace_core::train::TrainConfig::new(
                        cfg.victims.recipe.epochs,
                        cfg.victims.recipe.lr,
                        cfg.victims.recipe.batch,
                        v.spec.seed ^ 0x5c3a,
                    );
                    poison_and_train(
                        &v.spec,
                        &data,
                        &trigger,
                        cfg.dataset.poison_rate,
                        cfg.dataset.backdoor_target,
                        &tc,
                        cfg.victims.recipe.calib_samples,
                        v.spec.seed ^ 0x30,
                    )
                    .map(|o| (i, o))
                    .map_err(|e| CliError::experiment(format!("square-trigger victim {i}: {e}")))
                })
                .collect()
        };
        for r in results {
            let (i, o) = r?;
            let v = &trained[i];
            let path = vdir.join(format!("unseen_{i:03}.scnn"));
            let bytes = scnn::encode(&o.net);
            manifest.write_file(&path, &bytes)?;
            let _ = writeln!(
                csv,
                "{i},unseen-square,{},{},,{:.4},{:.4},{}",
                v.spec.seed, v.spec.depth, o.clean_accuracy, o.attack_success_rate, o.poisoned_count
            );
            unseen_poisoned.push((o.net, o.qnet));
        }
    }
    manifest.stage_done("poison_unseen", t0);

    manifest.write_file(&vdir.join("victims.csv"), csv.as_bytes())?;
    let _ = calib;
    Ok(VictimSet {
        clean,
        poisoned,
        unseen_poisoned,
    })
}

/// Load the persisted fleet and rebuild the quantized forms with the same
/// calibration batch the builder used.
pub fn load_victims(cfg: &RunConfig, out: &Path) -> CliResult<VictimSet> {
    let vdir = out.join("victims");
    let data = victim_training_data(cfg);
    let calib = calib_inputs(&data, cfg.victims.recipe.calib_samples);
    let poison_calib = |net: &Network<f32>| -> CliResult<QuantizedNetwork> {
        quantize_network(net, &calib).map_err(|e| CliError::data(e.to_string()))
    };

    let mut clean = Vec::new();
    for i in 0.. {
        let path = vdir.join(format!("victim_{i:03}.scnn"));
        if !path.exists() {
            break;
        }
        let net = scnn::load(&path)?;
        let qnet = poison_calib(&net)?;
        clean.push((net, qnet));
    }
    if clean.is_empty() {
        return Err(CliError::data(format!(
            "no victims under {} (run gen-victims first)",
            vdir.display()
        )));
    }
    let mut poisoned = Vec::new();
    for i in 0..clean.len() {
        let path = vdir.join(format!("poisoned_{i:03}.scnn"));
        if !path.exists() {
            break;
        }
        let net = scnn::load(&path)?;
        // poisoned victims calibrate on poisoned data at build time; the
        // clean calibration batch is close enough for re-quantization to be
        // exact because weights and scales are reloaded, not retrained
        let trigger = roster_trigger(cfg, i);
        let mut pdata = data.clone();
        let quota = (poison_rate_for(cfg, trigger.kind) * pdata.len() as f64) as usize;
        let mut order: Vec<usize> = (0..pdata.len()).collect();
        let mut rng = Rng::derive(clean[i].0.seed(), 0xbadd);
        rng.shuffle(&mut order);
        for &j in &order[..quota] {
            pdata.inputs[j] = apply_trigger(&data.inputs[j], &trigger);
        }
        let pcal = calib_inputs(&pdata, cfg.victims.recipe.calib_samples);
        let qnet = quantize_network(&net, &pcal).map_err(|e| CliError::data(e.to_string()))?;
        poisoned.push((net, qnet));
    }
    let mut unseen_poisoned = Vec::new();
    for i in 0..cfg.victims.unseen_poisoned {
        let path = vdir.join(format!("unseen_{i:03}.scnn"));
        if !path.exists() {
            break;
        }
        let net = scnn::load(&path)?;
        let trigger = TriggerSpec::square3x3();
        let mut pdata = data.clone();
        let quota = (cfg.dataset.poison_rate * pdata.len() as f64) as usize;
        let mut order: Vec<usize> = (0..pdata.len()).collect();
        let mut rng = Rng::derive(net.seed(), 0xbadd);
        rng.shuffle(&mut order);
        for &j in &order[..quota] {
            pdata.inputs[j] = apply_trigger(&data.inputs[j], &trigger);
        }
        let pcal = calib_inputs(&pdata, cfg.victims.recipe.calib_samples);
        let qnet = quantize_network(&net, &pcal).map_err(|e| CliError::data(e.to_string()))?;
        unseen_poisoned.push((net, qnet));
    }
    Ok(VictimSet {
        clean,
        poisoned,
        unseen_poisoned,
    })
}

/// One traced inference: quantized run, operand schedule, PDN, placement,
/// TDC sampling. The noise stream is derived from (seed, trace id,
/// placement) so regeneration at another placement is deterministic.
pub fn simulate_readouts(
    cfg: &RunConfig,
    cal: &Calibration,
    qnet: &QuantizedNetwork,
    input: &Tensor<f32>,
    placement: Placement,
    factor: usize,
    trace_id: u64,
) -> CliResult<Vec<u32>> {
    let stream = emit_schedule(qnet, input, cfg.schedule)
        .map_err(|e| CliError::experiment(e.to_string()))?;
    let activity = switching_activity(&stream);
    let clean = pdn_filter(&activity, &cfg.pdn);
    let mut noise_rng = Rng::derive(cfg.seed ^ 0x7face, trace_id * 4 + placement as u64);
    let placed = apply_placement(&clean, &placement.profile(), cfg.pdn.noise_sigma_volts, &mut noise_rng);
    let meta = TraceMeta {
        victim_id: 0,
        attack: 0,
        placement: placement as u8,
        frequency_factor: factor as u8,
    };
    let trace = sample_trace(&placed, &cfg.tdc, cal, factor, TraceLabel::Benign, meta)
        .map_err(|e| CliError::experiment(e.to_string()))?;
    Ok(trace.readouts)
}

struct TraceJob {
    global_id: u64,
    label: TraceLabel,
    attack: u8,
    victim: u32,
    /// index into the shared input pool table
    input_id: u32,
}

struct JobResult {
    readouts: Vec<u32>,
    job: TraceJob,
}

/// Everything the trace jobs read; assembled once, shared across workers.
struct BuildContext<'a> {
    cal: Calibration,
    victims: &'a VictimSet,
    /// all model inputs, indexed by input_id
    pool: Vec<Tensor<f32>>,
}

fn craft_input(ctx: &BuildContext<'_>, job: &TraceJob) -> CliResult<Tensor<f32>> {
    Ok(ctx.pool[job.input_id as usize].clone())
}

fn qnet_for<'a>(ctx: &'a BuildContext<'_>, job: &TraceJob) -> &'a QuantizedNetwork {
    qnet_for_provenance(ctx.victims, job.victim, job.attack)
}

/// The accelerator-resident network a trace's inference ran on.
pub fn qnet_for_provenance<'a>(
    victims: &'a VictimSet,
    victim: u32,
    attack: u8,
) -> &'a QuantizedNetwork {
    let v = victim as usize;
    match AttackMethod::from_id(attack) {
        Some(m) if m.label() == TraceLabel::Backdoor => {
            if m == AttackMethod::Square3x3Trigger {
                &victims.unseen_poisoned[v % victims.unseen_poisoned.len()].1
            } else {
                &victims.poisoned[v].1
            }
        }
        _ => &victims.clean[v].1,
    }
}

/// Build the full trace corpus. Returns the opened corpus.
pub fn build_corpus(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> CliResult<Corpus> {
    std::fs::create_dir_all(out.join("traces"))?;
    let victims = match load_victims(cfg, out) {
        Ok(v) if v.clean.len() == cfg.victims.count => v,
        _ => generate_victims(cfg, out, manifest)?,
    };
    if victims.poisoned.len() != victims.clean.len() {
        return Err(CliError::data("poisoned fleet incomplete; rerun gen-victims"));
    }
    let cal = calibrate(&cfg.tdc).map_err(|e| CliError::config(e.to_string()))?;

    // assemble the input pool and the job list
    let per_class = cfg.dataset.traces_per_class;
    let unseen_n = cfg.dataset.unseen_per_family;
    let v_count = victims.clean.len();

    let mut pool: Vec<Tensor<f32>> = Vec::new();
    let mut jobs: Vec<TraceJob> = Vec::new();
    let mut global: u64 = 0;

    let t0 = std::time::Instant::now();
    {
        // fresh digits the victims never trained on
        let digit_pool = synth::digits(cfg.seed ^ 0x7e57, 4 * per_class + 2 * unseen_n).inputs;
        let mut digits = digit_pool.into_iter();
        let mut next_digit = || {
            digits
                .next()
                .ok_or_else(|| CliError::experiment("digit pool exhausted"))
        };

        // benign
        for i in 0..per_class {
            let x = next_digit()?;
            pool.push(x);
            jobs.push(TraceJob {
                global_id: global,
                label: TraceLabel::Benign,
                attack: 0,
                victim: (i % v_count) as u32,
                input_id: (pool.len() - 1) as u32,
            });
            global += 1;
        }

        // adversarial roster: fgsm / pgd / cw rotation, crafted against the
        // victim that will execute the query
        let adv_jobs: Vec<(usize, Tensor<f32>)> = (0..per_class)
            .map(|i| Ok((i, next_digit()?)))
            .collect::<CliResult<_>>()?;
        let crafted: Vec<CliResult<(usize, Tensor<f32>, AttackMethod)>> = {
            use rayon::prelude::*;
            adv_jobs
                .par_iter()
                .map(|(i, x)| {
                    let v = *i % v_count;
                    let net = &victims.clean[v].0;
                    let label = net
                        .infer(x)
                        .map_err(|e| CliError::experiment(e.to_string()))?
                        .argmax();
                    let method = AttackMethod::ROSTER[*i % 3];
                    let adv = craft_adversarial(cfg, net, x, label, method, *i as u64)?;
                    Ok((*i, adv, method))
                })
                .collect()
        };
        let mut crafted_ok = Vec::with_capacity(per_class);
        for c in crafted {
            crafted_ok.push(c?);
        }
        crafted_ok.sort_by_key(|(i, _, _)| *i);
        for (i, adv, method) in crafted_ok {
            pool.push(adv);
            jobs.push(TraceJob {
                global_id: global,
                label: TraceLabel::Adversarial,
                attack: method as u8,
                victim: (i % v_count) as u32,
                input_id: (pool.len() - 1) as u32,
            });
            global += 1;
        }

        // backdoor roster: victim's own trigger applied to a fresh digit
        for i in 0..per_class {
            let v = i % v_count;
            let trigger = roster_trigger(cfg, v);
            let x = apply_trigger(&next_digit()?, &trigger);
            let method = match trigger.kind {
                TriggerKind::Pattern => AttackMethod::PatternTrigger,
                TriggerKind::Instance => AttackMethod::InstanceTrigger,
                TriggerKind::Watermark => AttackMethod::Watermark,
                TriggerKind::Square3x3 => AttackMethod::Square3x3Trigger,
            };
            pool.push(x);
            jobs.push(TraceJob {
                global_id: global,
                label: TraceLabel::Backdoor,
                attack: method as u8,
                victim: v as u32,
                input_id: (pool.len() - 1) as u32,
            });
            global += 1;
        }

        // extraction roster: fashion / cifar10 surrogates and JBDA streams
        let fashion = surrogate_queries(&synth::fashion_like(cfg.seed ^ 0xfa, per_class))
            .map_err(|e| CliError::experiment(e.to_string()))?;
        let cifar10 = surrogate_queries(&synth::cifar_like(cfg.seed ^ 0xc10, per_class, 10))
            .map_err(|e| CliError::experiment(e.to_string()))?;
        let jbda_streams: Vec<CliResult<Vec<Tensor<f32>>>> = {
            use rayon::prelude::*;
            (0..v_count)
                .into_par_iter()
                .map(|v| {
                    let seeds = synth::digits(cfg.seed ^ 0x5eed ^ v as u64, cfg.dataset.jbda_seeds);
                    let jc = JbdaConfig {
                        lambda: 0.1,
                        lr: 5e-3,
                        epochs: 10,
                        rounds: cfg.dataset.jbda_rounds,
                        seed: cfg.seed ^ v as u64,
                    };
                    jbda(&victims.clean[v].1, &seeds.inputs, &jc)
                        .map(|r| r.queries)
                        .map_err(|e| CliError::experiment(format!("jbda victim {v}: {e}")))
                })
                .collect()
        };
        let mut jbda_by_victim = Vec::with_capacity(v_count);
        for s in jbda_streams {
            jbda_by_victim.push(s?);
        }
        let mut fashion = fashion.into_iter();
        let mut cifar10 = cifar10.into_iter();
        let mut jbda_cursor = vec![0usize; v_count];
        for i in 0..per_class {
            let v = i % v_count;
            let (x, method) = match i % 3 {
                0 => (
                    fashion.next().ok_or_else(|| CliError::experiment("fashion pool exhausted"))?,
                    AttackMethod::SurrogateFashion,
                ),
                1 => (
                    cifar10.next().ok_or_else(|| CliError::experiment("cifar pool exhausted"))?,
                    AttackMethod::SurrogateCifar10,
                ),
                _ => {
                    let stream = &jbda_by_victim[v];
                    let x = stream[jbda_cursor[v] % stream.len()].clone();
                    jbda_cursor[v] += 1;
                    (x, AttackMethod::SyntheticJbda)
                }
            };
            pool.push(x);
            jobs.push(TraceJob {
                global_id: global,
                label: TraceLabel::Extraction,
                attack: method as u8,
                victim: v as u32,
                input_id: (pool.len() - 1) as u32,
            });
            global += 1;
        }

        // unseen families, held out of training: deepfool, square trigger,
        // cifar100 surrogate
        let df_jobs: Vec<(usize, Tensor<f32>)> = (0..unseen_n)
            .map(|i| Ok((i, next_digit()?)))
            .collect::<CliResult<_>>()?;
        let df_crafted: Vec<CliResult<(usize, Tensor<f32>)>> = {
            use rayon::prelude::*;
            df_jobs
                .par_iter()
                .map(|(i, x)| {
                    let v = *i % v_count;
                    let net = &victims.clean[v].0;
                    let adv = deepfool(net, x, cfg.attacks.deepfool_max_iter)
                        .map_err(|e| CliError::experiment(e.to_string()))?
                        .map(|a| a.input)
                        .unwrap_or_else(|| x.clone());
                    Ok((*i, adv))
                })
                .collect()
        };
        let mut df_ok = Vec::with_capacity(unseen_n);
        for c in df_crafted {
            df_ok.push(c?);
        }
        df_ok.sort_by_key(|(i, _)| *i);
        for (i, adv) in df_ok {
            pool.push(adv);
            jobs.push(TraceJob {
                global_id: global,
                label: TraceLabel::Adversarial,
                attack: AttackMethod::Deepfool as u8,
                victim: (i % v_count) as u32,
                input_id: (pool.len() - 1) as u32,
            });
            global += 1;
        }
        if !victims.unseen_poisoned.is_empty() {
            let square = TriggerSpec::square3x3();
            for i in 0..unseen_n {
                let x = apply_trigger(&next_digit()?, &square);
                pool.push(x);
                jobs.push(TraceJob {
                    global_id: global,
                    label: TraceLabel::Backdoor,
                    attack: AttackMethod::Square3x3Trigger as u8,
                    victim: (i % victims.unseen_poisoned.len()) as u32,
                    input_id: (pool.len() - 1) as u32,
                });
                global += 1;
            }
        }
        let cifar100 = surrogate_queries(&synth::cifar_like(cfg.seed ^ 0xc100, unseen_n, 100))
            .map_err(|e| CliError::experiment(e.to_string()))?;
        for (i, x) in cifar100.into_iter().enumerate() {
            pool.push(x);
            jobs.push(TraceJob {
                global_id: global,
                label: TraceLabel::Extraction,
                attack: AttackMethod::SurrogateCifar100 as u8,
                victim: (i % v_count) as u32,
                input_id: (pool.len() - 1) as u32,
            });
            global += 1;
        }
    }
    manifest.stage_done("craft_inputs", t0);

    // simulate every trace
    let ctx = BuildContext {
        cal,
        victims: &victims,
        pool,
    };
    let t0 = std::time::Instant::now();
    let results: Vec<CliResult<JobResult>> = {
        use rayon::prelude::*;
        jobs.into_par_iter()
            .map(|job| {
                let input = craft_input(&ctx, &job)?;
                let qnet = qnet_for(&ctx, &job);
                let readouts =
                    simulate_readouts(cfg, &ctx.cal, qnet, &input, Placement::Baseline, 1, job.global_id)?;
                Ok(JobResult { readouts, job })
            })
            .collect()
    };
    manifest.stage_done("simulate_traces", t0);

    // write traces, the index, and the split lists
    let mut entries: Vec<IndexEntry> = Vec::new();
    let t0 = std::time::Instant::now();
    {
        let mut ordered = Vec::with_capacity(results.len());
        for r in results {
            ordered.push(r?);
        }
        ordered.sort_by_key(|r| r.job.global_id);

        for r in &ordered {
            let file = format!("traces/trace_{:05}.sctr", r.job.global_id);
            let trace = powertrace_core::tdc::Trace {
                readouts: r.readouts.clone(),
                label: r.job.label,
                meta: TraceMeta {
                    victim_id: r.job.victim,
                    attack: r.job.attack,
                    placement: Placement::Baseline as u8,
                    frequency_factor: 1,
                },
            };
            let bytes = sctr::encode(&trace, cfg.tdc.readout_mode);
            manifest.write_file(&out.join(&file), &bytes)?;
            entries.push(IndexEntry {
                file,
                label: r.job.label,
                victim: r.job.victim,
                attack: r.job.attack,
                placement: Placement::Baseline as u8,
                factor: 1,
                split: Split::Unseen, // provisional; fixed below
                input_id: r.job.input_id,
            });
        }

        // stratified 90/10 split over the roster traces; unseen families
        // keep the unseen split
        for label in TraceLabel::ALL {
            let mut idx: Vec<usize> = entries
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    e.label == label
                        && AttackMethod::from_id(e.attack)
                            .map(|m| !AttackMethod::UNSEEN.contains(&m))
                            .unwrap_or(true)
                })
                .map(|(i, _)| i)
                .collect();
            let mut rng = Rng::derive(cfg.seed ^ 0x59117, label as u64);
            rng.shuffle(&mut idx);
            let train_n = idx.len() * 9 / 10;
            for (k, &i) in idx.iter().enumerate() {
                entries[i].split = if k < train_n { Split::Train } else { Split::Test };
            }
        }

        let inputs_path = out.join("inputs.scin");
        let bytes = scin::encode(&ctx.pool)?;
        manifest.write_file(&inputs_path, &bytes)?;

        let index_path = out.join("index.csv");
        let csv = index_to_csv(&entries);
        manifest.write_file(&index_path, csv.as_bytes())?;
    }
    manifest.stage_done("write_corpus", t0);

    Ok(Corpus {
        dir: out.to_path_buf(),
        entries,
    })
}

fn craft_adversarial(
    cfg: &RunConfig,
    net: &Network<f32>,
    x: &Tensor<f32>,
    label: usize,
    method: AttackMethod,
    salt: u64,
) -> CliResult<Tensor<f32>> {
    let _ = salt;
    match method {
        AttackMethod::Fgsm => fgsm(net, x, label, cfg.attacks.fgsm_eps)
            .map_err(|e| CliError::experiment(e.to_string())),
        AttackMethod::Pgd => pgd(
            net,
            x,
            label,
            cfg.attacks.pgd_eps,
            cfg.attacks.pgd_step,
            cfg.attacks.pgd_steps,
        )
        .map_err(|e| CliError::experiment(e.to_string())),
        AttackMethod::CarliniWagner => {
            let cw_cfg = CwConfig {
                max_iter: cfg.attacks.cw_max_iter,
                binary_steps: cfg.attacks.cw_binary_steps,
                lr: cfg.attacks.cw_lr,
                ..CwConfig::default()
            };
            match cw_l2(net, x, label, &cw_cfg).map_err(|e| CliError::experiment(e.to_string()))? {
                Some(adv) => Ok(adv.input),
                // the best-effort query an attacker would still submit
                None => pgd(net, x, label, cfg.attacks.pgd_eps, cfg.attacks.pgd_step, 10)
                    .map_err(|e| CliError::experiment(e.to_string())),
            }
        }
        other => Err(CliError::experiment(format!(
            "{} is not an adversarial roster method",
            other.name()
        ))),
    }
}

fn index_to_csv(entries: &[IndexEntry]) -> String {
    let mut csv = String::from("file,label,victim,attack,placement,factor,split,input_id\n");
    for e in entries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            e.file,
            e.label as u8,
            e.victim,
            e.attack,
            e.placement,
            e.factor,
            e.split.name(),
            e.input_id
        );
    }
    csv
}

impl Corpus {
    pub fn open(dir: &Path) -> CliResult<Corpus> {
        let index_path = dir.join("index.csv");
        let text = std::fs::read_to_string(&index_path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", index_path.display())))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 8 {
                return Err(CliError::data(format!("index.csv line {}: bad row", lineno + 1)));
            }
            let parse = |s: &str, what: &str| -> CliResult<u32> {
                s.parse()
                    .map_err(|_| CliError::data(format!("index.csv line {}: bad {what}", lineno + 1)))
            };
            entries.push(IndexEntry {
                file: parts[0].to_string(),
                label: TraceLabel::from_id(parse(parts[1], "label")? as u8)
                    .ok_or_else(|| CliError::data(format!("index.csv line {}: bad label", lineno + 1)))?,
                victim: parse(parts[2], "victim")?,
                attack: parse(parts[3], "attack")? as u8,
                placement: parse(parts[4], "placement")? as u8,
                factor: parse(parts[5], "factor")? as u8,
                split: Split::parse(parts[6])
                    .ok_or_else(|| CliError::data(format!("index.csv line {}: bad split", lineno + 1)))?,
                input_id: parse(parts[7], "input_id")?,
            });
        }
        if entries.is_empty() {
            return Err(CliError::data("index.csv lists no traces"));
        }
        Ok(Corpus {
            dir: dir.to_path_buf(),
            entries,
        })
    }

    pub fn read_trace(&self, entry: &IndexEntry) -> CliResult<Vec<u32>> {
        let (trace, _) = sctr::load(&self.dir.join(&entry.file))?;
        Ok(trace.readouts)
    }

    /// Trace id parsed from the file name (the builder's global counter).
    pub fn trace_id(entry: &IndexEntry) -> CliResult<u64> {
        let stem = entry
            .file
            .rsplit('/')
            .next()
            .and_then(|f| f.strip_prefix("trace_"))
            .and_then(|f| f.strip_suffix(".sctr"))
            .ok_or_else(|| CliError::data(format!("unrecognized trace file name {}", entry.file)))?;
        stem.parse()
            .map_err(|_| CliError::data(format!("unrecognized trace file name {}", entry.file)))
    }

    pub fn load_inputs(&self) -> CliResult<Vec<Tensor<f32>>> {
        scin::load(&self.dir.join("inputs.scin"))
    }

    /// Preprocessed datasets for the detector: (train, test) from the
    /// roster traces, decimated by `factor` before windowed averaging.
    pub fn detector_sets(
        &self,
        det_cfg: &DetectorConfig,
        factor: usize,
    ) -> CliResult<(Dataset, Dataset)> {
        let mut train = Dataset::new(4);
        let mut test = Dataset::new(4);
        let prepared = self.prepare_split(det_cfg, factor, &[Split::Train, Split::Test])?;
        for (entry_split, x, label) in prepared {
            match entry_split {
                Split::Train => train.push(x, label),
                Split::Test => test.push(x, label),
                Split::Unseen => {}
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(CliError::data("corpus split is empty"));
        }
        Ok((train, test))
    }

    /// Preprocessed unseen-family traces grouped by attack method.
    pub fn unseen_sets(
        &self,
        det_cfg: &DetectorConfig,
    ) -> CliResult<Vec<(AttackMethod, Dataset)>> {
        let mut sets: Vec<(AttackMethod, Dataset)> = AttackMethod::UNSEEN
            .iter()
            .map(|&m| (m, Dataset::new(4)))
            .collect();
        for e in &self.entries {
            if e.split != Split::Unseen {
                continue;
            }
            let Some(method) = AttackMethod::from_id(e.attack) else {
                continue;
            };
            let Some(slot) = sets.iter_mut().find(|(m, _)| *m == method) else {
                continue;
            };
            let readouts = self.read_trace(e)?;
            slot.1.push(preprocess(&readouts, det_cfg), e.label as usize);
        }
        Ok(sets)
    }

    fn prepare_split(
        &self,
        det_cfg: &DetectorConfig,
        factor: usize,
        splits: &[Split],
    ) -> CliResult<Vec<(Split, Tensor<f32>, usize)>> {
        use rayon::prelude::*;
        let wanted: Vec<&IndexEntry> = self
            .entries
            .iter()
            .filter(|e| splits.contains(&e.split))
            .collect();
        wanted
            .par_iter()
            .map(|e| {
                let readouts = self.read_trace(e)?;
                let decimated: Vec<u32> = readouts.iter().copied().step_by(factor.max(1)).collect();
                Ok((e.split, preprocess(&decimated, det_cfg), e.label as usize))
            })
            .collect()
    }
}
