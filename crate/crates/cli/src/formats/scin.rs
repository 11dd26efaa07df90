//! "SCIN" input-record file: magic, count u32, then 784 f32 little-endian
//! values per record (28x28 grayscale model inputs).

use std::path::Path;

use powertrace_core::tensor::Tensor;

use super::Reader;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"SCIN";
pub const RECORD_LEN: usize = 784;

pub fn encode(records: &[Tensor<f32>]) -> CliResult<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + records.len() * RECORD_LEN * 4);
    out.extend(MAGIC);
    out.extend((records.len() as u32).to_le_bytes());
    for (i, r) in records.iter().enumerate() {
        if r.len() != RECORD_LEN {
            return Err(CliError::data(format!(
                "input record {i} has {} values, expected {RECORD_LEN}",
                r.len()
            )));
        }
        for &v in r.data() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Records come back shaped [1, 28, 28].
pub fn decode(buf: &[u8]) -> CliResult<Vec<Tensor<f32>>> {
    let mut r = Reader::new(buf, "input records");
    r.magic(MAGIC)?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = Vec::with_capacity(RECORD_LEN);
        for _ in 0..RECORD_LEN {
            data.push(r.f32()?);
        }
        records.push(Tensor::new(vec![1, 28, 28], data).expect("784 = 28*28"));
    }
    r.done()?;
    Ok(records)
}

pub fn save(records: &[Tensor<f32>], path: &Path) -> CliResult<()> {
    std::fs::write(path, encode(records)?)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn load(path: &Path) -> CliResult<Vec<Tensor<f32>>> {
    let buf = std::fs::read(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let records: Vec<Tensor<f32>> = (0..3)
            .map(|k| Tensor::from_fn(vec![1, 28, 28], |i| (i + k) as f32 * 0.001))
            .collect();
        let bytes = encode(&records).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in records.iter().zip(back.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn wrong_length_rejected() {
        let bad = [Tensor::zeros(vec![1, 27, 28])];
        assert!(encode(&bad).is_err());
    }
}
