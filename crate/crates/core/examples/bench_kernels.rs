//! Microbenchmarks for the tensor kernels.

use std::time::Instant;

use powertrace_core::tensor::{dot, saxpy_into, vec_mat};

fn main() {
    // saxpy throughput
    let n = 384;
    let mut out = vec![0.0f32; n];
    let row: Vec<f32> = (0..n).map(|i| i as f32 * 0.001).collect();
    let reps = 2_000_000u64;
    let t0 = Instant::now();
    for r in 0..reps {
        saxpy_into(&mut out, (r & 7) as f32 * 0.1 + 0.1, &row);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "saxpy {n}: {:.2} GFLOP/s  (sink {})",
        reps as f64 * n as f64 * 2.0 / dt / 1e9,
        out[3]
    );

    // dot throughput
    let a: Vec<f32> = (0..n).map(|i| (i as f32).sin()).collect();
    let b: Vec<f32> = (0..n).map(|i| (i as f32).cos()).collect();
    let t0 = Instant::now();
    let mut acc = 0.0f32;
    for _ in 0..reps {
        acc += dot(&a, &b);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "dot {n}: {:.2} GFLOP/s  (sink {acc})",
        reps as f64 * n as f64 * 2.0 / dt / 1e9
    );

    // vec_mat: x[128] * W[128,384]
    let x: Vec<f32> = (0..128).map(|i| i as f32 * 0.01 + 0.01).collect();
    let w: Vec<f32> = (0..128 * 384).map(|i| (i % 17) as f32 * 0.01).collect();
    let mut y = vec![0.0f32; 384];
    let reps2 = 40_000u64;
    let t0 = Instant::now();
    for _ in 0..reps2 {
        for v in y.iter_mut() {
            *v = 0.0;
        }
        vec_mat(&x, &w, &mut y);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "vec_mat 128x384: {:.2} GFLOP/s (sink {})",
        reps2 as f64 * (128.0 * 384.0 * 2.0) / dt / 1e9,
        y[5]
    );
}
