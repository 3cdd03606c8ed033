#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlc_core::data_io::{MultiLabelDataset, SparseRow};
use mlc_core::model::{LatentInjection, ModelConfig};

/// Labels are deterministic functions of the features: label `l` is on iff
/// feature `l` or feature `l + labels` is present.
pub fn learnable(n: usize, labels: usize, seed: u64) -> MultiLabelDataset {
    let features = 3 * labels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Array2::zeros((n, labels));
    let rows = (0..n)
        .map(|i| {
            let pairs: Vec<(u32, f64)> = (0..features as u32)
                .filter(|_| rng.random_bool(0.3))
                .map(|k| (k, 1.0))
                .collect();
            for &(k, _) in &pairs {
                let k = k as usize;
                if k < 2 * labels {
                    y[[i, k % labels]] = 1;
                }
            }
            SparseRow::from_pairs(pairs).unwrap()
        })
        .collect();
    MultiLabelDataset::new(features, rows, y).unwrap()
}

pub fn config_for(data: &MultiLabelDataset, label_dim: usize) -> ModelConfig {
    ModelConfig {
        num_features: data.num_features,
        num_labels: data.num_labels(),
        label_dim,
        num_layers: 2,
        num_heads: 2,
        encoder_hidden: 16,
        feedforward_hidden: 16,
        latent_injection: LatentInjection::EveryBlock,
    }
}

pub fn random_binary(rng: &mut ChaCha8Rng, n: usize, l: usize, p: f64) -> Array2<u8> {
    Array2::from_shape_simple_fn((n, l), || rng.random_bool(p) as u8)
}
