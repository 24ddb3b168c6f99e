//! Deterministic workloads shared by the benchmarks.

use mfp_core::analysis::{correlated_gaussian, Distribution, Sampler};
use mfp_core::Hessian;
use ndarray::Array2;

/// Laplace weight matrix, the shape of one transformer projection slice.
pub fn weights(rows: usize, cols: usize) -> Array2<f32> {
    Sampler::new(Distribution::LaplaceUnitVar, 0xbe_11).sample_matrix(rows, cols)
}

/// Weights with a Hessian from `4 · cols` correlated activations.
pub fn gptq_problem(rows: usize, cols: usize) -> (Array2<f32>, Hessian) {
    let x = correlated_gaussian(4 * cols, cols, 32.min(cols), 0xbe_12);
    (weights(rows, cols), Hessian::from_activations(&x).expect("finite activations"))
}

/// Evenly spaced probe values across the FP4 range and a little beyond.
pub fn fp4_probes(n: usize) -> Vec<f64> {
    (0..n).map(|i| -7.0 + 14.0 * i as f64 / n.max(1) as f64).collect()
}
