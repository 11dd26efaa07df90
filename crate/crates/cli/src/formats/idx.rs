//! IDX image/label reader (the MNIST/FashionMNIST container): big-endian,
//! magic 0x00000803 for images and 0x00000801 for labels.

use std::path::Path;

use powertrace_core::tensor::Tensor;
use powertrace_core::train::Dataset;

use crate::error::{CliError, CliResult};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(buf: &[u8], at: usize, what: &str) -> CliResult<u32> {
    buf.get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| CliError::data(format!("{what}: truncated header")))
}

/// Images come back shaped [1, rows, cols], scaled to [0, 1].
pub fn read_images(buf: &[u8]) -> CliResult<Vec<Tensor<f32>>> {
    let magic = be_u32(buf, 0, "idx images")?;
    if magic != IMAGE_MAGIC {
        return Err(CliError::data(format!(
            "idx images: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = be_u32(buf, 4, "idx images")? as usize;
    let rows = be_u32(buf, 8, "idx images")? as usize;
    let cols = be_u32(buf, 12, "idx images")? as usize;
    let need = 16 + count * rows * cols;
    if buf.len() != need {
        return Err(CliError::data(format!(
            "idx images: {} bytes, expected {need}",
            buf.len()
        )));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let at = 16 + i * rows * cols;
        let data: Vec<f32> = buf[at..at + rows * cols]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        images.push(Tensor::new(vec![1, rows, cols], data).expect("sized above"));
    }
    Ok(images)
}

pub fn read_labels(buf: &[u8]) -> CliResult<Vec<usize>> {
    let magic = be_u32(buf, 0, "idx labels")?;
    if magic != LABEL_MAGIC {
        return Err(CliError::data(format!(
            "idx labels: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = be_u32(buf, 4, "idx labels")? as usize;
    if buf.len() != 8 + count {
        return Err(CliError::data(format!(
            "idx labels: {} bytes, expected {}",
            buf.len(),
            8 + count
        )));
    }
    Ok(buf[8..].iter().map(|&b| b as usize).collect())
}

/// Load an image/label file pair into a dataset.
pub fn load_dataset(images: &Path, labels: &Path, num_classes: usize) -> CliResult<Dataset> {
    let ibuf = std::fs::read(images)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", images.display())))?;
    let lbuf = std::fs::read(labels)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", labels.display())))?;
    let imgs = read_images(&ibuf)?;
    let lbls = read_labels(&lbuf)?;
    if imgs.len() != lbls.len() {
        return Err(CliError::data(format!(
            "{} images but {} labels",
            imgs.len(),
            lbls.len()
        )));
    }
    let mut data = Dataset::new(num_classes);
    for (img, label) in imgs.into_iter().zip(lbls) {
        if label >= num_classes {
            return Err(CliError::data(format!("label {label} outside {num_classes} classes")));
        }
        data.push(img, label);
    }
    Ok(data)
}

/// Writers, used by the round-trip tests and for exporting synthetic sets.
pub fn write_images(images: &[Tensor<f32>]) -> CliResult<Vec<u8>> {
    let (rows, cols) = match images.first().map(|t| t.shape()) {
        Some([_, r, c]) => (*r, *c),
        _ => (28, 28),
    };
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend(IMAGE_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    for img in images {
        if img.len() != rows * cols {
            return Err(CliError::data("inconsistent image shapes".to_string()));
        }
        for &v in img.data() {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let images: Vec<Tensor<f32>> = (0..4)
            .map(|k| Tensor::from_fn(vec![1, 28, 28], |i| ((i + k) % 256) as f32 / 255.0))
            .collect();
        let labels = vec![0usize, 3, 9, 1];
        let ibuf = write_images(&images).unwrap();
        let lbuf = write_labels(&labels);
        let back_i = read_images(&ibuf).unwrap();
        let back_l = read_labels(&lbuf).unwrap();
        assert_eq!(back_l, labels);
        for (a, b) in images.iter().zip(back_i.iter()) {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut buf = write_labels(&[1, 2]);
        buf[3] = 0x03; // pretend to be an image file
        assert!(read_labels(&buf).is_err());
    }
}
