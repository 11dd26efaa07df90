//! Built-in synthetic datasets so tests and desk-scale runs need no
//! downloads.
//!
//! `digits` is the 10-class 28x28 grayscale victim task: glyph prototypes
//! with per-sample shift, amplitude and noise jitter. The surrogate
//! generators deliberately draw from different distributions (textured
//! garments, natural-image-like color fields) to stand in for the public
//! datasets an extraction adversary would use.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::Dataset;

/// 7x7 glyph prototypes for the ten digit classes.
const GLYPHS: [[u8; 7]; 10] = [
    // each u8 is a row bitmask, bit 6 = leftmost column
    [0b0111110, 0b1000001, 0b1000001, 0b1000001, 0b1000001, 0b1000001, 0b0111110], // 0
    [0b0001000, 0b0011000, 0b0001000, 0b0001000, 0b0001000, 0b0001000, 0b0111110], // 1
    [0b0111110, 0b0000001, 0b0000001, 0b0111110, 0b1000000, 0b1000000, 0b1111111], // 2
    [0b1111110, 0b0000001, 0b0000001, 0b0111110, 0b0000001, 0b0000001, 0b1111110], // 3
    [0b1000010, 0b1000010, 0b1000010, 0b1111111, 0b0000010, 0b0000010, 0b0000010], // 4
    [0b1111111, 0b1000000, 0b1000000, 0b1111110, 0b0000001, 0b0000001, 0b1111110], // 5
    [0b0111110, 0b1000000, 0b1000000, 0b1111110, 0b1000001, 0b1000001, 0b0111110], // 6
    [0b1111111, 0b0000001, 0b0000010, 0b0000100, 0b0001000, 0b0010000, 0b0100000], // 7
    [0b0111110, 0b1000001, 0b1000001, 0b0111110, 0b1000001, 0b1000001, 0b0111110], // 8
    [0b0111110, 0b1000001, 0b1000001, 0b0111111, 0b0000001, 0b0000001, 0b0111110], // 9
];

/// Render one digit sample: glyph upscaled 4x onto 28x28 with jitter.
fn render_digit(class: usize, rng: &mut Rng) -> Tensor<f32> {
    let dx = rng.below(5) as isize - 2;
    let dy = rng.below(5) as isize - 2;
    let amp = rng.range_f64(0.75, 1.0) as f32;
    let noise = 0.12f32;
    let glyph = &GLYPHS[class];
    Tensor::from_fn(vec![1, 28, 28], |i| {
        let y = (i / 28) as isize - dy;
        let x = (i % 28) as isize - dx;
        let mut v = rng.next_f32() * noise;
        if (0..28).contains(&y) && (0..28).contains(&x) {
            let gy = y / 4;
            let gx = x / 4;
            if gy < 7 && gx < 7 && (glyph[gy as usize] >> (6 - gx)) & 1 == 1 {
                v += amp;
            }
        }
        v.min(1.0)
    })
}

/// 10-class digit-like dataset; labels cycle 0..9.
pub fn digits(seed: u64, n: usize) -> Dataset {
    let mut rng = Rng::derive(seed, 0xd161);
    let mut data = Dataset::new(10);
    for i in 0..n {
        let label = i % 10;
        data.push(render_digit(label, &mut rng), label);
    }
    data
}

/// Garment-like textured silhouettes, 28x28 grayscale in [0,1].
pub fn fashion_like(seed: u64, n: usize) -> Vec<Tensor<f32>> {
    let mut rng = Rng::derive(seed, 0xfa51);
    (0..n)
        .map(|i| {
            let kind = i % 10;
            let freq = 2.0 + (kind % 5) as f64;
            let vertical = kind % 2 == 0;
            let (cy, cx) = (rng.range_f64(10.0, 18.0), rng.range_f64(10.0, 18.0));
            let (ry, rx) = (rng.range_f64(6.0, 12.0), rng.range_f64(5.0, 10.0));
            let phase = rng.range_f64(0.0, core::f64::consts::PI);
            let base = rng.range_f64(0.15, 0.35);
            let noise = 0.08f32;
            let mut local = Rng::derive(seed, 0xfa52 ^ i as u64);
            Tensor::from_fn(vec![1, 28, 28], |p| {
                let y = (p / 28) as f64;
                let x = (p % 28) as f64;
                let inside = ((y - cy) / ry) * ((y - cy) / ry) + ((x - cx) / rx) * ((x - cx) / rx)
                    <= 1.0;
                let mut v = base;
                if inside {
                    let t = if vertical { x } else { y };
                    v += 0.45 + 0.25 * libm::sin(t / 28.0 * freq * core::f64::consts::TAU + phase);
                }
                (v as f32 + local.next_f32() * noise).clamp(0.0, 1.0)
            })
        })
        .collect()
}

/// Natural-image-like RGB fields, [3, 32, 32] in [0,1]. `num_classes` only
/// widens the variety of the drawn field parameters (10 for a CIFAR-10-like
/// source, 100 for CIFAR-100-like).
pub fn cifar_like(seed: u64, n: usize, num_classes: usize) -> Vec<Tensor<f32>> {
    let mut rng = Rng::derive(seed, 0xc1fa ^ num_classes as u64);
    (0..n)
        .map(|i| {
            let class = i % num_classes.max(1);
            let mut class_rng = Rng::derive(seed, 0xc1fb ^ class as u64);
            // per-class palette and gradient direction
            let palette: [f64; 3] = [
                class_rng.range_f64(0.2, 0.8),
                class_rng.range_f64(0.2, 0.8),
                class_rng.range_f64(0.2, 0.8),
            ];
            let (gy, gx) = (class_rng.range_f64(-1.0, 1.0), class_rng.range_f64(-1.0, 1.0));
            let blob_y = rng.range_f64(8.0, 24.0);
            let blob_x = rng.range_f64(8.0, 24.0);
            let blob_r = rng.range_f64(4.0, 9.0);
            let mut local = Rng::derive(seed, 0xc1fc ^ i as u64);
            Tensor::from_fn(vec![3, 32, 32], |p| {
                let ch = p / (32 * 32);
                let y = ((p / 32) % 32) as f64;
                let x = (p % 32) as f64;
                let grad = (gy * y + gx * x) / 64.0;
                let d2 = (y - blob_y) * (y - blob_y) + (x - blob_x) * (x - blob_x);
                let blob = if d2 < blob_r * blob_r { 0.25 } else { 0.0 };
                let v = palette[ch] + 0.3 * grad + blob + local.next_f64() * 0.1;
                (v as f32).clamp(0.0, 1.0)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_deterministic_and_in_range() {
        let a = digits(7, 50);
        let b = digits(7, 50);
        assert_eq!(a.len(), 50);
        for (x, y) in a.inputs.iter().zip(b.inputs.iter()) {
            assert_eq!(x.data(), y.data());
        }
        for x in &a.inputs {
            assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(x.shape(), &[1, 28, 28]);
        }
    }

    #[test]
    fn digit_classes_are_visually_distinct() {
        // prototype rendering without jitter should differ across classes
        let a = digits(1, 10);
        for i in 0..10 {
            for j in i + 1..10 {
                let d: f32 = a.inputs[i]
                    .data()
                    .iter()
                    .zip(a.inputs[j].data())
                    .map(|(x, y)| (x - y).abs())
                    .sum();
                assert!(d > 10.0, "classes {i} and {j} too similar ({d})");
            }
        }
    }

    #[test]
    fn surrogates_have_expected_shapes() {
        for img in fashion_like(3, 8) {
            assert_eq!(img.shape(), &[1, 28, 28]);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        for img in cifar_like(3, 8, 100) {
            assert_eq!(img.shape(), &[3, 32, 32]);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
