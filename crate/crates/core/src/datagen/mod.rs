//! Synthetic regression data and MNIST classification tasks.

mod idx;
mod mnist;

pub use idx::{parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use mnist::{build_classification_task, build_test_set, load_mnist, MnistCollection};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ModelVector;

/// Samples as rows of `x`, responses or labels in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Data(format!(
                "{} sample rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Data("dataset must contain at least one sample".into()));
        }
        Ok(Self { x, y })
    }

    /// `D_k`.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_binary(&self) -> bool {
        self.y.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Copy with sample `i` replaced, for neighboring-dataset experiments.
    pub fn with_sample_replaced(&self, i: usize, x: &DVector<f64>, y: f64) -> Self {
        let mut out = self.clone();
        out.x.set_row(i, &x.transpose());
        out.y[i] = y;
        out
    }
}

/// Base model `w0*` and the per-cluster models `w_q* = (1 + gamma_q) w0*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGroundTruth {
    pub base_model: Vec<f64>,
    pub gammas: Vec<f64>,
    pub cluster_models: Vec<Vec<f64>>,
}

impl ClusterGroundTruth {
    pub fn model(&self, cluster: usize) -> ModelVector {
        DVector::from_column_slice(&self.cluster_models[cluster])
    }

    pub fn models(&self) -> Vec<ModelVector> {
        (0..self.cluster_models.len()).map(|q| self.model(q)).collect()
    }
}

pub fn gen_cluster_models<R: Rng + ?Sized>(
    dim: usize,
    num_clusters: usize,
    spread: f64,
    rng: &mut R,
) -> Result<ClusterGroundTruth> {
    if dim == 0 || num_clusters == 0 {
        return Err(Error::Config("dimension and cluster count must be at least 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be finite and >= 0, got {spread}")));
    }
    let base: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let gammas: Vec<f64> = (0..num_clusters)
        .map(|_| spread * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let cluster_models = gammas
        .iter()
        .map(|g| base.iter().map(|b| (1.0 + g) * b).collect())
        .collect();
    Ok(ClusterGroundTruth {
        base_model: base,
        gammas,
        cluster_models,
    })
}

/// Standard-normal features and `y = X w + noise`.
pub fn gen_client_dataset<R: Rng + ?Sized>(
    w_star: &ModelVector,
    num_samples: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if num_samples == 0 {
        return Err(Error::Config("D_k must be at least 1".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!("noise_std must be finite and >= 0, got {noise_std}")));
    }
    let d = w_star.len();
    // Row-major draw order so a sample's features come from consecutive draws.
    let mut x = DMatrix::zeros(num_samples, d);
    for i in 0..num_samples {
        for j in 0..d {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let mut y = &x * w_star;
    for v in y.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += noise_std * e;
    }
    Dataset::new(x, y)
}
