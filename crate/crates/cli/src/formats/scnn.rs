//! "SCNN" network checkpoint: little-endian magic, version, input shape,
//! init seed, layer specs, then per-layer f32 parameter blobs.

use std::path::Path;

use powertrace_core::layers::LayerSpec;
use powertrace_core::network::Network;
use powertrace_core::tensor::Tensor;

use super::Reader;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"SCNN";
pub const VERSION: u16 = 1;

fn push_spec(out: &mut Vec<u8>, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Conv2d { out_channels, kernel } => {
            out.push(0);
            out.extend((out_channels as u32).to_le_bytes());
            out.extend((kernel as u32).to_le_bytes());
        }
        LayerSpec::MaxPool2d { kernel } => {
            out.push(1);
            out.extend((kernel as u32).to_le_bytes());
        }
        LayerSpec::Conv1d { out_channels, kernel } => {
            out.push(2);
            out.extend((out_channels as u32).to_le_bytes());
            out.extend((kernel as u32).to_le_bytes());
        }
        LayerSpec::FullyConnected { out: width } => {
            out.push(3);
            out.extend((width as u32).to_le_bytes());
        }
        LayerSpec::Relu => out.push(4),
        LayerSpec::Gelu => out.push(5),
        LayerSpec::Softmax => out.push(6),
        LayerSpec::Bgru { hidden, keep_sequence } => {
            out.push(7);
            out.extend((hidden as u32).to_le_bytes());
            out.push(keep_sequence as u8);
        }
        LayerSpec::Dropout { rate } => {
            out.push(8);
            out.extend(rate.to_le_bytes());
        }
    }
}

fn read_spec(r: &mut Reader<'_>) -> CliResult<LayerSpec> {
    Ok(match r.u8()? {
        0 => LayerSpec::Conv2d {
            out_channels: r.u32()? as usize,
            kernel: r.u32()? as usize,
        },
        1 => LayerSpec::MaxPool2d { kernel: r.u32()? as usize },
        2 => LayerSpec::Conv1d {
            out_channels: r.u32()? as usize,
            kernel: r.u32()? as usize,
        },
        3 => LayerSpec::FullyConnected { out: r.u32()? as usize },
        4 => LayerSpec::Relu,
        5 => LayerSpec::Gelu,
        6 => LayerSpec::Softmax,
        7 => LayerSpec::Bgru {
            hidden: r.u32()? as usize,
            keep_sequence: r.u8()? != 0,
        },
        8 => LayerSpec::Dropout { rate: r.f64()? },
        other => return Err(CliError::data(format!("checkpoint: unknown layer tag {other}"))),
    })
}

pub fn encode(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.push(net.input_shape().len() as u8);
    for &d in net.input_shape() {
        out.extend((d as u32).to_le_bytes());
    }
    out.extend(net.seed().to_le_bytes());
    out.extend((net.specs().len() as u32).to_le_bytes());
    for spec in net.specs() {
        push_spec(&mut out, spec);
    }
    for tensors in net.params() {
        out.extend((tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend((d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode(buf: &[u8]) -> CliResult<Network<f32>> {
    let mut r = Reader::new(buf, "checkpoint");
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(CliError::data(format!("checkpoint: unsupported version {version}")));
    }
    let rank = r.u8()? as usize;
    let mut input_shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        input_shape.push(r.u32()? as usize);
    }
    let seed = r.u64()?;
    let n_layers = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        specs.push(read_spec(&mut r)?);
    }
    let mut net = Network::new(input_shape, specs, seed)
        .map_err(|e| CliError::data(format!("checkpoint: invalid network: {e}")))?;
    for li in 0..n_layers {
        let count = r.u32()? as usize;
        if count != net.params()[li].len() {
            return Err(CliError::data(format!(
                "checkpoint: layer {li} carries {count} tensors, expected {}",
                net.params()[li].len()
            )));
        }
        for ti in 0..count {
            let trank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(trank);
            for _ in 0..trank {
                shape.push(r.u32()? as usize);
            }
            let expected = net.params()[li][ti].shape().to_vec();
            if shape != expected {
                return Err(CliError::data(format!(
                    "checkpoint: layer {li} tensor {ti} shape {shape:?}, expected {expected:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f32()?);
            }
            net.params_mut()[li][ti] = Tensor::new(shape, data).expect("validated shape");
        }
    }
    r.done()?;
    Ok(net)
}

pub fn save(net: &Network<f32>, path: &Path) -> CliResult<()> {
    std::fs::write(path, encode(net))
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn load(path: &Path) -> CliResult<Network<f32>> {
    let buf = std::fs::read(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    decode(&buf)
}
