// noiseless signal audit: benign vs attacked input through one victim
use powertrace_cli::config::RunConfig;
use powertrace_core::attacks::{apply_trigger, fgsm, TriggerSpec};
use powertrace_core::leakage::{pdn_filter, switching_activity};
use powertrace_core::quant::quantize_network;
use powertrace_core::schedule::emit_schedule;
use powertrace_core::synth;
use powertrace_core::tdc::calibrate;
use powertrace_core::train::{train, TrainConfig};
use powertrace_core::victim::generate_victim;

fn main() {
    let cfg = RunConfig::load(None, Some(7)).unwrap();
    let data = synth::digits(1, 400);
    let spec = generate_victim(12345).unwrap();
    println!("victim depth {} layers {:?}", spec.depth, spec.layers.len());
    let mut net = spec.build().unwrap();
    train(&mut net, &data, &TrainConfig::new(6, 1e-3, 64, 3)).unwrap();
    let calib: Vec<_> = data.inputs.iter().take(32).cloned().collect();
    let qnet = quantize_network(&net, &calib).unwrap();

    let x = synth::digits(99, 10).inputs.pop().unwrap();
    let label = net.infer(&x).unwrap().argmax();
    let x_adv = fgsm(&net, &x, label, 0.5).unwrap();
    let x_trig = apply_trigger(&x, &TriggerSpec::pattern());
    let fashion = synth::fashion_like(3, 1).pop().unwrap();

    let cal = calibrate(&cfg.tdc).unwrap();
    let mut stats = |name: &str, input: &powertrace_core::tensor::Tensor<f32>| {
        let stream = emit_schedule(&qnet, input, cfg.schedule).unwrap();
        let act = switching_activity(&stream);
        let v = pdn_filter(&act, &cfg.pdn);
        let mean_v: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let taps_mean = cfg.tdc.sensitivity_taps_per_volt * mean_v;
        println!(
            "{name}: cycles {} mean activity {:.2} mean drop {:.3} mV = {:.2} taps",
            act.len(),
            act.iter().map(|&a| a as f64).sum::<f64>() / act.len() as f64,
            mean_v * 1e3,
            taps_mean
        );
        v
    };
    let v0 = stats("benign  ", &x);
    let v1 = stats("fgsm    ", &x_adv);
    let v2 = stats("trigger ", &x_trig);
    let v3 = stats("fashion ", &fashion);

    // pointwise |difference| vs quantization step and noise
    let quant_mv = 1000.0 / cfg.tdc.sensitivity_taps_per_volt; // 1 tap
    let noise_mv = cfg.pdn.noise_sigma_volts * 1e3;
    for (name, v) in [("fgsm", &v1), ("trigger", &v2), ("fashion", &v3)] {
        let n = v0.len().min(v.len());
        let diff: Vec<f64> = (0..n).map(|i| (v[i] - v0[i]).abs() * 1e3).collect();
        let mean = diff.iter().sum::<f64>() / n as f64;
        let mut sorted = diff.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "benign vs {name}: mean |dV| {:.4} mV, p90 {:.4} mV  (quant step {quant_mv:.3} mV, noise {noise_mv:.3} mV)",
            mean,
            sorted[(n * 9) / 10]
        );
    }
    let _ = cal;
}
