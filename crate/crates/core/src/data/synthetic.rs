//! Seeded Gaussian blob generator.
//!
//! Each class gets a random center drawn once from a standard normal; samples
//! are the center plus isotropic noise of the requested spread. Balanced by
//! construction and cheap enough for CI.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

use super::{Dataset, SplitTag};

pub fn generate_synthetic(
    class_count: usize,
    samples_per_class: usize,
    feature_dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count == 0 || samples_per_class == 0 || feature_dim == 0 {
        return Err(Error::config(
            "class count, samples per class, and feature dim must be positive",
        ));
    }
    if !cluster_spread.is_finite() || cluster_spread < 0.0 {
        return Err(Error::config("cluster spread must be finite and >= 0"));
    }
    let mut stream = rng::stream(seed, rng::tags::DATA, 0, 0);
    let normal = StandardNormal;

    let centers: Vec<Vec<f64>> = (0..class_count)
        .map(|_| {
            (0..feature_dim)
                .map(|_| normal.sample(&mut stream))
                .collect()
        })
        .collect();

    let rows = class_count * samples_per_class;
    let mut features = Matrix::zeros(rows, feature_dim);
    let mut labels = Vec::with_capacity(rows);
    let mut row = 0;
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..samples_per_class {
            let out = features.row_mut(row);
            for (j, &c) in center.iter().enumerate() {
                let noise: f64 = normal.sample(&mut stream);
                out[j] = c + cluster_spread * noise;
            }
            labels.push(class);
            row += 1;
        }
    }
    Dataset::new(features, labels, class_count, SplitTag::Train)
}
