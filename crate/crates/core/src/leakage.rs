//! Switching-activity leakage through a lumped PDN model.
//!
//! Dynamic current is proportional to the Hamming distance between
//! consecutive operand words per lane; the supply drop is the series
//! IR + L di/dt response followed by a single-pole RC low-pass
//! (forward-Euler, alpha = min(1, dt / RC)) and a clamp at zero.

use alloc::vec::Vec;

use crate::rng::Rng;
use crate::schedule::OpStream;

#[derive(Clone, Copy, Debug)]
pub struct PdnParams {
    pub r_ohms: f64,
    pub l_henries: f64,
    pub c_farads: f64,
    /// simulation timestep = 1 / accelerator clock
    pub dt_seconds: f64,
    pub amps_per_toggle: f64,
    /// readout-referred noise, in volts (0.5 TDC taps at the default
    /// 3200 taps/V sensitivity)
    pub noise_sigma_volts: f64,
}

impl Default for PdnParams {
    fn default() -> Self {
        PdnParams {
            r_ohms: 0.1,
            l_henries: 1e-9,
            c_farads: 1e-6,
            dt_seconds: 1e-7, // 10 MHz accelerator clock
            amps_per_toggle: 5e-4,
            noise_sigma_volts: 0.5 / 3200.0,
        }
    }
}

impl PdnParams {
    pub fn validate(&self) -> bool {
        self.r_ohms > 0.0
            && self.l_henries > 0.0
            && self.c_farads > 0.0
            && self.dt_seconds > 0.0
            && self.amps_per_toggle > 0.0
            && self.noise_sigma_volts >= 0.0
    }
}

/// Bit toggles per cycle: sum over lanes of the Hamming distance between a
/// cycle's word and the previous cycle's word in the same lane (all-zero
/// words before cycle 0).
pub fn switching_activity(stream: &OpStream) -> Vec<u32> {
    let mut prev: Vec<u8> = Vec::new();
    let mut out = Vec::with_capacity(stream.cycle_count());
    for ev in stream.iter() {
        let words = ev.operand_words;
        let mut toggles = 0u32;
        for (lane, &w) in words.iter().enumerate() {
            let p = prev.get(lane).copied().unwrap_or(0);
            toggles += (w ^ p).count_ones();
        }
        prev.clear();
        prev.extend_from_slice(words);
        out.push(toggles);
    }
    out
}

/// Supply-drop series in volts, clamped at zero from below.
pub fn pdn_filter(activity: &[u32], p: &PdnParams) -> Vec<f64> {
    let alpha = (p.dt_seconds / (p.r_ohms * p.c_farads)).min(1.0);
    let mut out = Vec::with_capacity(activity.len());
    let mut prev_i = 0.0;
    let mut y = 0.0;
    for &a in activity {
        let i = p.amps_per_toggle * a as f64;
        let raw = i * p.r_ohms + p.l_henries * (i - prev_i) / p.dt_seconds;
        prev_i = i;
        y += alpha * (raw - y);
        out.push(y.max(0.0));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Baseline = 0,
    TopLeft = 1,
    Center = 2,
    BottomRight = 3,
}

impl Placement {
    pub const ALL: [Placement; 4] = [
        Placement::Baseline,
        Placement::TopLeft,
        Placement::Center,
        Placement::BottomRight,
    ];

    pub const OFF_BASELINE: [Placement; 3] =
        [Placement::TopLeft, Placement::Center, Placement::BottomRight];

    pub fn profile(self) -> PlacementProfile {
        match self {
            Placement::Baseline => PlacementProfile { placement: self, gain: 1.0, smear: 0 },
            Placement::TopLeft => PlacementProfile { placement: self, gain: 0.55, smear: 3 },
            Placement::Center => PlacementProfile { placement: self, gain: 0.7, smear: 2 },
            Placement::BottomRight => PlacementProfile { placement: self, gain: 0.85, smear: 1 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Placement::Baseline => "baseline",
            Placement::TopLeft => "top-left",
            Placement::Center => "center",
            Placement::BottomRight => "bottom-right",
        }
    }

    pub fn from_id(id: u8) -> Option<Placement> {
        Placement::ALL.into_iter().find(|p| *p as u8 == id)
    }
}

/// Sensor-position model: attenuation plus extra low-pass smear.
#[derive(Clone, Copy, Debug)]
pub struct PlacementProfile {
    pub placement: Placement,
    pub gain: f64,
    /// extra cycles of box filtering
    pub smear: usize,
}

/// Scale by gain, box-filter over (1 + smear) trailing cycles, add Gaussian
/// readout noise.
pub fn apply_placement(
    series: &[f64],
    profile: &PlacementProfile,
    noise_sigma_volts: f64,
    rng: &mut Rng,
) -> Vec<f64> {
    let window = 1 + profile.smear;
    let mut out = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        let lo = t.saturating_sub(window - 1);
        let mut acc = 0.0;
        for v in &series[lo..=t] {
            acc += v * profile.gain;
        }
        let mut v = acc / (t - lo + 1) as f64;
        if noise_sigma_volts > 0.0 {
            v += noise_sigma_volts * rng.normal();
        }
        out.push(v);
    }
    out
}
