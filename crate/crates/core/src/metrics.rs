//! Evaluation: NMSD against cluster ground truth, binary test accuracy and
//! Monte Carlo aggregation of per-iteration curves.

use serde::Serialize;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::solvers::sigmoid;
use crate::topology::Topology;
use crate::ModelVector;

/// One row of a replicate's learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundRecord {
    pub iteration: usize,
    pub replicate: usize,
    /// NMSD for regression, test accuracy for classification.
    pub metric: f64,
    /// Cumulative privacy loss; absent when privacy is off.
    pub epsilon: Option<f64>,
}

/// `(1/|C|) sum_k |w_k - w_q*|^2 / |w_q*|^2` with `q` the cluster of `k`.
pub fn nmsd(client_models: &[&ModelVector], truth: &[ModelVector], topology: &Topology) -> Result<f64> {
    if client_models.len() != topology.num_clients() {
        return Err(Error::Argument(format!(
            "{} models for {} clients",
            client_models.len(),
            topology.num_clients()
        )));
    }
    if truth.len() != topology.num_clusters {
        return Err(Error::Argument(format!(
            "{} ground-truth models for {} clusters",
            truth.len(),
            topology.num_clusters
        )));
    }
    let norms: Vec<f64> = truth.iter().map(|w| w.norm_squared()).collect();
    if let Some(q) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Argument(format!("ground-truth model of cluster {q} has zero norm")));
    }
    let mut total = 0.0;
    for (k, w) in client_models.iter().enumerate() {
        let q = topology.client_cluster[k];
        if w.len() != truth[q].len() {
            return Err(Error::Argument(format!(
                "client {k} model has dimension {}, expected {}",
                w.len(),
                truth[q].len()
            )));
        }
        total += (*w - &truth[q]).norm_squared() / norms[q];
    }
    Ok(total / client_models.len() as f64)
}

/// Fraction of samples where the prediction `sigmoid(w'x) >= 0.5` matches
/// the label; ties go to class 1.
pub fn test_accuracy(model: &ModelVector, test_set: &Dataset) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    if model.len() != test_set.dim() {
        return Err(Error::Argument(format!(
            "model dimension {} does not match test features {}",
            model.len(),
            test_set.dim()
        )));
    }
    let scores = &test_set.x * model;
    let correct = scores
        .iter()
        .zip(test_set.y.iter())
        .filter(|(&t, &y)| (sigmoid(t) >= 0.5) == (y == 1.0))
        .count();
    Ok(correct as f64 / test_set.len() as f64)
}

/// Average test accuracy of every client on its own cluster's test set.
pub fn mean_client_accuracy(
    client_models: &[&ModelVector],
    test_sets: &[Dataset],
    topology: &Topology,
) -> Result<f64> {
    if client_models.is_empty() {
        return Err(Error::Argument("no client models".into()));
    }
    let mut total = 0.0;
    for (k, w) in client_models.iter().enumerate() {
        let q = topology.client_cluster[k];
        let set = test_sets
            .get(q)
            .ok_or_else(|| Error::Argument(format!("no test set for cluster {q}")))?;
        total += test_accuracy(w, set)?;
    }
    Ok(total / client_models.len() as f64)
}

/// Per-iteration summary across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean: f64,
    pub std: f64,
}

impl CurvePoint {
    /// Standard error of the mean for `replicates` samples.
    pub fn stderr(&self, replicates: usize) -> f64 {
        self.std / (replicates as f64).sqrt()
    }
}

/// Mean and sample standard deviation per iteration. `curves[r][i]` is the
/// value of replicate `r` at iteration `i + 1`; reduction runs in replicate
/// order. The standard deviation is 0 for a single replicate.
pub fn monte_carlo(curves: &[Vec<f64>]) -> Result<Vec<CurvePoint>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Argument("monte carlo needs at least one replicate".into()))?;
    let len = first.len();
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::Argument("replicate curves have different lengths".into()));
    }
    let r = curves.len() as f64;
    Ok((0..len)
        .map(|i| {
            let mean = curves.iter().map(|c| c[i]).sum::<f64>() / r;
            let std = if curves.len() > 1 {
                (curves.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                0.0
            };
            CurvePoint {
                iteration: i + 1,
                mean,
                std,
            }
        })
        .collect())
}

pub fn to_db(value: f64) -> f64 {
    10.0 * value.log10()
}

/// Mean of the last `window` points of a curve, the steady-state estimate
/// used when comparing runs.
pub fn steady_state(curve: &[f64], window: usize) -> f64 {
    let window = window.clamp(1, curve.len().max(1));
    let tail = &curve[curve.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}
