//! Shared fixtures for the kernel benchmarks: deterministic random tensors,
//! meshes, and a ready-to-run model setup at a desk-scale size.

use cegnn_core::mesh::grid_to_mesh;
use cegnn_core::model::{init_params, ModelConfig, ModelParams};
use cegnn_core::tensor::Tensor;
use cegnn_core::MeshGraph;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform values in [-1, 1) with a fixed stream per call site seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel = shape.iter().product();
    let values: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, values).expect("bench tensor")
}

/// Round-robin segment ids covering `num_segments`.
pub fn round_robin_segments(rows: usize, num_segments: usize) -> Vec<usize> {
    (0..rows).map(|r| r % num_segments).collect()
}

/// A 32x32 triangulated grid, the workhorse mesh for forward benchmarks.
pub fn bench_mesh() -> MeshGraph {
    grid_to_mesh(&[32, 32], 0.05, false).expect("bench mesh")
}

/// Mid-sized model on two field channels: D = 32, L = 2, 4 windows.
pub fn bench_model() -> (ModelConfig, ModelParams) {
    let cfg = ModelConfig {
        spatial_dim: 2,
        field_channels: 2,
        latent_dim: 32,
        layers: 2,
        mlp_hidden: 32,
        mlp_depth: 2,
        n_windows: 4,
        mask_keep_prob: 0.5,
        fe_enabled: true,
        cell_enabled: true,
        residual_enabled: true,
    };
    let params = init_params(&cfg, 0).expect("bench params");
    (cfg, params)
}
