//! "SCTR" trace file: magic, version u16, readout_mode u8, label u8, meta
//! block (victim id u32, attack u8, placement u8, factor u8), length u32,
//! then u32 little-endian readouts.

use std::path::Path;

use powertrace_core::tdc::{ReadoutMode, Trace, TraceLabel, TraceMeta};

use super::Reader;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"SCTR";
pub const VERSION: u16 = 1;

pub fn encode(trace: &Trace, mode: ReadoutMode) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + 4 * trace.readouts.len());
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.push(mode as u8);
    out.push(trace.label as u8);
    out.extend(trace.meta.victim_id.to_le_bytes());
    out.push(trace.meta.attack);
    out.push(trace.meta.placement);
    out.push(trace.meta.frequency_factor);
    out.extend((trace.readouts.len() as u32).to_le_bytes());
    for &r in &trace.readouts {
        out.extend(r.to_le_bytes());
    }
    out
}

pub fn decode(buf: &[u8]) -> CliResult<(Trace, ReadoutMode)> {
    let mut r = Reader::new(buf, "trace");
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(CliError::data(format!("trace: unsupported version {version}")));
    }
    let mode = ReadoutMode::from_id(r.u8()?)
        .ok_or_else(|| CliError::data("trace: unknown readout mode"))?;
    let label = TraceLabel::from_id(r.u8()?)
        .ok_or_else(|| CliError::data("trace: unknown label"))?;
    let meta = TraceMeta {
        victim_id: r.u32()?,
        attack: r.u8()?,
        placement: r.u8()?,
        frequency_factor: r.u8()?,
    };
    let len = r.u32()? as usize;
    let mut readouts = Vec::with_capacity(len);
    for _ in 0..len {
        readouts.push(r.u32()?);
    }
    r.done()?;
    Ok((
        Trace {
            readouts,
            label,
            meta,
        },
        mode,
    ))
}

pub fn save(trace: &Trace, mode: ReadoutMode, path: &Path) -> CliResult<()> {
    std::fs::write(path, encode(trace, mode))
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn load(path: &Path) -> CliResult<(Trace, ReadoutMode)> {
    let buf = std::fs::read(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let trace = Trace {
            readouts: vec![64, 63, 62, 64, 0, 128],
            label: TraceLabel::Backdoor,
            meta: TraceMeta {
                victim_id: 17,
                attack: 5,
                placement: 2,
                frequency_factor: 3,
            },
        };
        let bytes = encode(&trace, ReadoutMode::Sum);
        let (back, mode) = decode(&bytes).unwrap();
        assert_eq!(back, trace);
        assert_eq!(mode, ReadoutMode::Sum);
    }

    #[test]
    fn trailing_garbage_rejected() {
        let trace = Trace {
            readouts: vec![1],
            label: TraceLabel::Benign,
            meta: TraceMeta {
                victim_id: 0,
                attack: 0,
                placement: 0,
                frequency_factor: 1,
            },
        };
        let mut bytes = encode(&trace, ReadoutMode::Sum);
        bytes.push(0);
        assert!(decode(&bytes).is_err());
    }
}
