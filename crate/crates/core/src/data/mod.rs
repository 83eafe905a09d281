//! Labeled datasets, synthetic generation and held-out splitting.

mod idx;
mod partition;

pub use idx::{parse_idx_images, parse_idx_labels, read_idx, read_idx_images, read_idx_labels, IdxImages};
pub use idx::{IMAGE_MAGIC, LABEL_MAGIC};
pub use partition::{
    partition, partition_iid, partition_noniid, plan_indices, PartitionMode, PartitionPlan,
};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

/// Labeled examples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
}

/// One client's local data; its length is the sample count `s^i`.
pub type ClientDataset = Dataset;

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("data.input_dim", "must be >= 1"));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::Shape {
                expected: labels.len() * input_dim,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("data.features", "all feature values must be finite"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(
                "data.labels",
                format!("label {bad} out of range for {num_classes} classes"),
            ));
        }
        Ok(Dataset {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, row: usize) -> &[f64] {
        &self.features[row * self.input_dim..(row + 1) * self.input_dim]
    }

    pub fn label(&self, row: usize) -> usize {
        self.labels[row]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    /// First `n` rows.
    pub fn truncate(&self, n: usize) -> Dataset {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&rows)
    }
}

/// Class centres with minimum pairwise distance `separation`.
///
/// With enough dimensions the centres sit on scaled basis vectors (all
/// pairwise distances equal). Otherwise they are placed evenly on a circle
/// in the first two coordinates, or on a line when `input_dim == 1`.
fn class_means(num_classes: usize, input_dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut means = vec![vec![0.0; input_dim]; num_classes];
    if input_dim >= num_classes {
        let scale = separation / std::f64::consts::SQRT_2;
        for (c, mean) in means.iter_mut().enumerate() {
            mean[c] = scale;
        }
    } else if input_dim >= 2 {
        let step = std::f64::consts::TAU / num_classes as f64;
        let radius = separation / (2.0 * (step / 2.0).sin());
        for (c, mean) in means.iter_mut().enumerate() {
            mean[0] = radius * (step * c as f64).cos();
            mean[1] = radius * (step * c as f64).sin();
        }
    } else {
        for (c, mean) in means.iter_mut().enumerate() {
            mean[0] = separation * c as f64;
        }
    }
    means
}

/// Gaussian class clusters with unit covariance, `per_class` rows per label
/// in label order.
pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    input_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 1 || per_class < 1 || input_dim < 1 {
        return Err(Error::config("data", "blob counts must be >= 1"));
    }
    if !separation.is_finite() || separation <= 0.0 {
        return Err(Error::config("data.separation", "must be > 0"));
    }
    let mut rng = seed::derive_rng(seed, &[seed::purpose::DATA]);
    let means = class_means(num_classes, input_dim, separation);
    let mut features = Vec::with_capacity(num_classes * per_class * input_dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(m + noise);
            }
            labels.push(class);
        }
    }
    Dataset::new(features, labels, input_dim, num_classes.max(2))
}

/// Stratified split into `(train, held_out)`; each label contributes
/// `round(count * fraction)` rows to the held-out part.
pub fn stratified_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("data.eval_fraction", "must lie in [0, 1)"));
    }
    let mut rng = seed::derive_rng(seed, &[seed::purpose::SPLIT]);
    let mut by_label = vec![Vec::new(); data.num_classes()];
    for (row, &l) in data.labels().iter().enumerate() {
        by_label[l].push(row);
    }
    let mut train = Vec::with_capacity(data.len());
    let mut held_out = Vec::new();
    for mut rows in by_label {
        rows.shuffle(&mut rng);
        let take = (rows.len() as f64 * fraction).round() as usize;
        held_out.extend_from_slice(&rows[..take]);
        train.extend_from_slice(&rows[take..]);
    }
    train.sort_unstable();
    held_out.sort_unstable();
    Ok((data.subset(&train), data.subset(&held_out)))
}
