use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::dec;
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, seeded_rng, PointCloud};

/// Points with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub features: PointCloud,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledData {
    pub fn new(features: PointCloud, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.n_points() {
            return Err(Error::DimensionMismatch {
                expected: features.n_points(),
                got: labels.len(),
            });
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.as_array().select(ndarray::Axis(0), indices);
        Ok(Self {
            features: PointCloud::new(features)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        })
    }

    /// Deterministic shuffled split into (train, validation).
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let n = self.len();
        let n_val = (validation_fraction * n as f64).round() as usize;
        if n_val < 2 || n - n_val < 2 {
            return Err(Error::TooFewPoints { got: n, min: 4 });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeded_rng(derive_seed(seed, 0x5117)));
        let (val, train) = order.split_at(n_val);
        Ok((self.select(train)?, self.select(val)?))
    }
}

/// Isotropic Gaussian clusters around centers drawn uniformly from
/// `[-center_box, center_box]^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsSpec {
    #[serde(with = "dec")]
    pub classes: usize,
    #[serde(with = "dec")]
    pub dim: usize,
    #[serde(with = "dec")]
    pub per_class: usize,
    #[serde(with = "dec")]
    pub spread: f64,
    #[serde(with = "dec", default = "default_center_box")]
    pub center_box: f64,
    #[serde(with = "dec")]
    pub seed: u64,
}

fn default_center_box() -> f64 {
    2.0
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 16,
            per_class: 1_000,
            spread: 1.0,
            center_box: default_center_box(),
            seed: 0,
        }
    }
}

pub fn make_blobs(spec: &BlobsSpec) -> Result<LabeledData> {
    if spec.classes < 2 || spec.dim < 1 || spec.per_class < 1 {
        return Err(Error::InvalidParameter(format!(
            "blobs need ≥ 2 classes, ≥ 1 dimension and ≥ 1 point per class, got {spec:?}"
        )));
    }
    if !(spec.spread >= 0.0 && spec.center_box >= 0.0) {
        return Err(Error::InvalidParameter(
            "spread and center box must be ≥ 0".into(),
        ));
    }
    let mut rng = seeded_rng(derive_seed(spec.seed, 0xB10B));
    let centers = Array2::from_shape_fn((spec.classes, spec.dim), |_| {
        rng.random_range(-spec.center_box..=spec.center_box)
    });
    let n = spec.classes * spec.per_class;
    let mut features = Array2::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = i / spec.per_class;
        for (x, &c) in row.iter_mut().zip(centers.row(class)) {
            *x = c + spec.spread * rng.sample::<f64, _>(StandardNormal);
        }
        labels.push(class);
    }
    LabeledData::new(PointCloud::new(features)?, labels)
}
