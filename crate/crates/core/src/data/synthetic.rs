use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// `n` points in `dim` dimensions from `k` unit-variance isotropic Gaussians
/// whose centres are pairwise `separation` apart (centre j sits on axis j).
/// Labels cycle through `0..k`.
pub fn gaussian_blobs(n: usize, dim: usize, k: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k == 0 || k > dim || n < k {
        return Err(Error::Config(format!(
            "blobs need 0 < k <= dim and n >= k (n={n}, dim={dim}, k={k})"
        )));
    }
    let mut rng = seeded(seed);
    let offset = separation / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let j = i % k;
        for d in 0..dim {
            let centre = if d == j { offset } else { 0.0 };
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(centre + noise);
        }
        labels.push(j);
    }
    Dataset::new(
        format!("blobs-{k}x{dim}"),
        Tensor::matrix(n, dim, data)?,
        Some(labels),
        None,
    )
}
