//! Time-to-digital converter model: two-loop calibration of the initial
//! delay, voltage-dependent tap propagation, and bus-rate trace sampling.
//!
//! The launch edge propagates for half a sensor-clock period; the initial
//! delay (coarse + fine line) positions the edge so the registered tap count
//! sits mid-line at zero drop. Supply drop slows propagation linearly
//! (`sensitivity` taps per volt).

use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadoutMode {
    Raw = 0,
    Sum = 1,
    ExpSum = 2,
}

impl ReadoutMode {
    pub fn from_id(id: u8) -> Option<ReadoutMode> {
        match id {
            0 => Some(ReadoutMode::Raw),
            1 => Some(ReadoutMode::Sum),
            2 => Some(ReadoutMode::ExpSum),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TdcConfig {
    /// tapped-line length; multiple of 4 (carry elements register 4 outputs)
    pub taps: usize,
    pub coarse_max: usize,
    pub fine_max: usize,
    /// delay per coarse element, ps
    pub coarse_unit_ps: f64,
    /// delay per fine element, ps
    pub fine_unit_ps: f64,
    /// delay per tap at nominal voltage, ps
    pub tap_unit_ps: f64,
    pub sensor_clock_hz: f64,
    pub bus_clock_hz: f64,
    /// taps lost per volt of supply drop
    pub sensitivity_taps_per_volt: f64,
    pub readout_mode: ReadoutMode,
}

impl Default for TdcConfig {
    fn default() -> Self {
        TdcConfig {
            taps: 128,
            coarse_max: 32,
            fine_max: 32,
            coarse_unit_ps: 80.0,
            fine_unit_ps: 10.0,
            tap_unit_ps: 20.0,
            sensor_clock_hz: 150e6,
            bus_clock_hz: 10e6,
            sensitivity_taps_per_volt: 3200.0,
            readout_mode: ReadoutMode::Sum,
        }
    }
}

impl TdcConfig {
    pub fn validate(&self) -> Result<(), TdcError> {
        if self.taps == 0 || self.taps % 4 != 0 {
            return Err(TdcError::BadConfig("taps must be a positive multiple of 4"));
        }
        if self.sensor_clock_hz <= 0.0 || self.bus_clock_hz <= 0.0 {
            return Err(TdcError::BadConfig("clocks must be positive"));
        }
        if self.sensor_clock_hz < self.bus_clock_hz {
            return Err(TdcError::BadConfig("sensor clock below bus clock"));
        }
        Ok(())
    }

    /// Propagation window: the high phase of the sensor clock.
    pub fn window_ps(&self) -> f64 {
        0.5e12 / self.sensor_clock_hz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TdcError {
    BadConfig(&'static str),
    /// no coarse/fine combination keeps the edge inside the line
    CalibrationFailed,
    EmptySeries,
}

impl fmt::Display for TdcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TdcError::BadConfig(s) => write!(f, "bad TDC config: {s}"),
            TdcError::CalibrationFailed => write!(f, "calibration failed: edge not capturable mid-line"),
            TdcError::EmptySeries => write!(f, "empty voltage series"),
        }
    }
}

impl core::error::Error for TdcError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Calibration {
    pub coarse_len: usize,
    pub fine_len: usize,
    pub nominal_readout: u32,
}

/// Taps reached for a given initial delay at zero drop.
fn taps_for(cfg: &TdcConfig, coarse: usize, fine: usize) -> u32 {
    let initial = coarse as f64 * cfg.coarse_unit_ps + fine as f64 * cfg.fine_unit_ps;
    let remaining = cfg.window_ps() - initial;
    if remaining <= 0.0 {
        return 0;
    }
    let taps = libm::floor(remaining / cfg.tap_unit_ps);
    (taps as u64).min(cfg.taps as u64) as u32
}

/// Exhaustive two-loop search for the initial delay putting the nominal
/// readout closest to mid-line; ties break toward shorter coarse, then
/// shorter fine. Fails if the best landing is not strictly inside
/// [taps/4, 3 taps/4].
pub fn calibrate(cfg: &TdcConfig) -> Result<Calibration, TdcError> {
    cfg.validate()?;
    let target = cfg.taps as f64 / 2.0;
    let mut best: Option<(f64, usize, usize, u32)> = None;
    for coarse in 0..=cfg.coarse_max {
        for fine in 0..=cfg.fine_max {
            let reached = taps_for(cfg, coarse, fine);
            let dist = libm::fabs(reached as f64 - target);
            let better = match &best {
                None => true,
                Some((d, c, f, _)) => {
                    dist < *d || (dist == *d && (coarse < *c || (coarse == *c && fine < *f)))
                }
            };
            if better {
                best = Some((dist, coarse, fine, reached));
            }
        }
    }
    let (_, coarse_len, fine_len, nominal_readout) = best.expect("nonempty search space");
    let lo = cfg.taps as u32 / 4;
    let hi = 3 * cfg.taps as u32 / 4;
    if nominal_readout <= lo || nominal_readout >= hi {
        return Err(TdcError::CalibrationFailed);
    }
    Ok(Calibration {
        coarse_len,
        fine_len,
        nominal_readout,
    })
}

/// Registered tap count under a supply drop; monotone nonincreasing in
/// `v_drop`.
pub fn readout(cfg: &TdcConfig, cal: &Calibration, v_drop: f64) -> u32 {
    let shifted = cal.nominal_readout as f64 - cfg.sensitivity_taps_per_volt * v_drop;
    let rounded = libm::round(shifted);
    if rounded <= 0.0 {
        0
    } else if rounded >= cfg.taps as f64 {
        cfg.taps as u32
    } else {
        rounded as u32
    }
}

/// Readout under the configured encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Encoded {
    /// thermometer bits, one per tap
    Raw(Vec<u8>),
    Sum(u32),
    ExpSum(u64),
}

/// Encode a tap count: raw thermometer vector, plain sum, or exponential sum
/// over 8 weight bands of the line.
pub fn encode(cfg: &TdcConfig, taps_reached: u32) -> Encoded {
    debug_assert!(taps_reached as usize <= cfg.taps);
    match cfg.readout_mode {
        ReadoutMode::Raw => {
            let mut bits = alloc::vec![0u8; cfg.taps];
            for b in bits.iter_mut().take(taps_reached as usize) {
                *b = 1;
            }
            Encoded::Raw(bits)
        }
        ReadoutMode::Sum => Encoded::Sum(taps_reached),
        ReadoutMode::ExpSum => {
            let band = (cfg.taps / 8).max(1);
            let mut acc = 0u64;
            for j in 0..taps_reached as usize {
                acc += 1u64 << (j / band);
            }
            Encoded::ExpSum(acc)
        }
    }
}

/// Attack/benign class carried by a trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceLabel {
    Benign = 0,
    Adversarial = 1,
    Backdoor = 2,
    Extraction = 3,
}

impl TraceLabel {
    pub const ALL: [TraceLabel; 4] = [
        TraceLabel::Benign,
        TraceLabel::Adversarial,
        TraceLabel::Backdoor,
        TraceLabel::Extraction,
    ];

    pub fn from_id(id: u8) -> Option<TraceLabel> {
        TraceLabel::ALL.into_iter().find(|l| *l as u8 == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            TraceLabel::Benign => "benign",
            TraceLabel::Adversarial => "adversarial",
            TraceLabel::Backdoor => "backdoor",
            TraceLabel::Extraction => "extraction",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceMeta {
    pub victim_id: u32,
    /// attack-method identifier, 0 for benign
    pub attack: u8,
    pub placement: u8,
    pub frequency_factor: u8,
}

/// One inference's readout series at bus rate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub readouts: Vec<u32>,
    pub label: TraceLabel,
    pub meta: TraceMeta,
}

/// Sample a voltage series into a trace, keeping every `factor`-th bus
/// sample (the bus default equals the accelerator rate).
pub fn sample_trace(
    voltage: &[f64],
    cfg: &TdcConfig,
    cal: &Calibration,
    factor: usize,
    label: TraceLabel,
    meta: TraceMeta,
) -> Result<Trace, TdcError> {
    if voltage.is_empty() {
        return Err(TdcError::EmptySeries);
    }
    let factor = factor.max(1);
    let readouts: Vec<u32> = voltage
        .iter()
        .step_by(factor)
        .map(|&v| readout(cfg, cal, v))
        .collect();
    Ok(Trace {
        readouts,
        label,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> TraceMeta {
        TraceMeta {
            victim_id: 0,
            attack: 0,
            placement: 0,
            frequency_factor: 1,
        }
    }

    #[test]
    fn default_calibration_lands_mid_line() {
        let cfg = TdcConfig::default();
        let cal = calibrate(&cfg).unwrap();
        assert!(cal.nominal_readout > 32 && cal.nominal_readout < 96,
            "nominal {}", cal.nominal_readout);
    }

    #[test]
    fn calibration_matches_exhaustive_oracle() {
        // independent exhaustive search over all settings
        let cfg = TdcConfig::default();
        let cal = calibrate(&cfg).unwrap();
        let mut best: Option<(f64, usize, usize, u32)> = None;
        for c in 0..=cfg.coarse_max {
            for f in 0..=cfg.fine_max {
                let initial = c as f64 * cfg.coarse_unit_ps + f as f64 * cfg.fine_unit_ps;
                let remaining = cfg.window_ps() - initial;
                let reached = if remaining <= 0.0 {
                    0u32
                } else {
                    (libm::floor(remaining / cfg.tap_unit_ps) as u64).min(cfg.taps as u64) as u32
                };
                let d = libm::fabs(reached as f64 - 64.0);
                let replace = match best {
                    None => true,
                    Some((bd, bc, bf, _)) => d < bd || (d == bd && (c < bc || (c == bc && f < bf))),
                };
                if replace {
                    best = Some((d, c, f, reached));
                }
            }
        }
        let (_, c, f, n) = best.unwrap();
        assert_eq!((cal.coarse_len, cal.fine_len, cal.nominal_readout), (c, f, n));
    }

    #[test]
    fn absurd_tap_unit_fails_calibration() {
        let cfg = TdcConfig {
            tap_unit_ps: 1e7,
            ..TdcConfig::default()
        };
        assert_eq!(calibrate(&cfg).unwrap_err(), TdcError::CalibrationFailed);
    }

    #[test]
    fn readout_at_zero_drop_is_nominal_and_clamps() {
        let cfg = TdcConfig::default();
        let cal = calibrate(&cfg).unwrap();
        assert_eq!(readout(&cfg, &cal, 0.0), cal.nominal_readout);
        let stall = cal.nominal_readout as f64 / cfg.sensitivity_taps_per_volt;
        assert_eq!(readout(&cfg, &cal, stall), 0);
        assert_eq!(readout(&cfg, &cal, 10.0), 0);
        assert_eq!(readout(&cfg, &cal, -10.0), cfg.taps as u32);
    }

    #[test]
    fn readout_monotone_nonincreasing_in_drop() {
        let cfg = TdcConfig::default();
        let cal = calibrate(&cfg).unwrap();
        let mut rng = crate::rng::Rng::seed_from(7);
        for _ in 0..1000 {
            let a = rng.next_f64() * 0.3;
            let b = rng.next_f64() * 0.3;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(readout(&cfg, &cal, lo) >= readout(&cfg, &cal, hi));
        }
    }

    #[test]
    fn encode_boundaries() {
        let cfg = TdcConfig::default();
        match encode(&cfg, 0) {
            Encoded::Sum(0) => {}
            other => panic!("{other:?}"),
        }
        let raw_cfg = TdcConfig { readout_mode: ReadoutMode::Raw, ..cfg };
        match encode(&raw_cfg, 0) {
            Encoded::Raw(bits) => assert!(bits.iter().all(|&b| b == 0)),
            other => panic!("{other:?}"),
        }
        match encode(&cfg, cfg.taps as u32) {
            Encoded::Sum(s) => assert_eq!(s, cfg.taps as u32),
            other => panic!("{other:?}"),
        }
        let exp_cfg = TdcConfig { readout_mode: ReadoutMode::ExpSum, ..cfg };
        match encode(&exp_cfg, 0) {
            Encoded::ExpSum(0) => {}
            other => panic!("{other:?}"),
        }
        // 16 taps all inside band 0 of a 128-tap line
        match encode(&exp_cfg, 16) {
            Encoded::ExpSum(16) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sample_preserves_length_at_factor_one() {
        let cfg = TdcConfig::default();
        let cal = calibrate(&cfg).unwrap();
        let v = alloc::vec![0.0; 777];
        let t = sample_trace(&v, &cfg, &cal, 1, TraceLabel::Benign, meta()).unwrap();
        assert_eq!(t.readouts.len(), 777);
        assert!(t.readouts.iter().all(|&r| r == cal.nominal_readout));
    }

    #[test]
    fn factor_five_keeps_every_fifth() {
        let cfg = TdcConfig::default();
        let cal = calibrate(&cfg).unwrap();
        let v = alloc::vec![0.0; 1000];
        let t = sample_trace(&v, &cfg, &cal, 5, TraceLabel::Benign, meta()).unwrap();
        assert_eq!(t.readouts.len(), 200);
    }

    #[test]
    fn subsampling_commutes_with_decimation() {
        let cfg = TdcConfig::default();
        let cal = calibrate(&cfg).unwrap();
        let mut rng = crate::rng::Rng::seed_from(3);
        let v: Vec<f64> = (0..503).map(|_| rng.next_f64() * 0.2).collect();
        for k in [2usize, 3, 7] {
            let full = sample_trace(&v, &cfg, &cal, 1, TraceLabel::Benign, meta()).unwrap();
            let dec = sample_trace(&v, &cfg, &cal, k, TraceLabel::Benign, meta()).unwrap();
            let manual: Vec<u32> = full.readouts.iter().step_by(k).copied().collect();
            assert_eq!(dec.readouts, manual, "factor {k}");
        }
    }

    #[test]
    fn empty_series_rejected() {
        let cfg = TdcConfig::default();
        let cal = calibrate(&cfg).unwrap();
        assert_eq!(
            sample_trace(&[], &cfg, &cal, 1, TraceLabel::Benign, meta()).unwrap_err(),
            TdcError::EmptySeries
        );
    }
}
