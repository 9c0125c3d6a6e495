//! Learning-rate matching for the FedAvg baseline: pick the rate whose
//! early learning curve tracks PGFL's, so that comparisons start from the
//! same initial convergence rate.

use super::config::{Algorithm, ExperimentConfig};
use super::runner::{load_inputs, run_experiment_with};
use crate::error::{Error, Result};
use crate::metrics::to_db;

#[derive(Debug, Clone, PartialEq)]
pub struct LrCalibration {
    pub horizon: usize,
    /// PGFL mean metric at the horizon.
    pub reference: f64,
    /// `(learning rate, FedAvg mean metric at the horizon)` per candidate.
    pub candidates: Vec<(f64, f64)>,
    pub best: f64,
}

/// Runs `reference` as PGFL and as FedAvg for every candidate rate over
/// `horizon` iterations, and returns the rate whose metric at the horizon is
/// closest in dB to PGFL's.
pub fn calibrate_fedavg_lr(reference: &ExperimentConfig, rates: &[f64], horizon: usize) -> Result<LrCalibration> {
    if rates.is_empty() {
        return Err(Error::Argument("no candidate learning rates".into()));
    }
    if horizon == 0 {
        return Err(Error::Argument("calibration horizon must be >= 1".into()));
    }
    let mut base = reference.clone();
    base.iterations = horizon;
    let mnist = load_inputs(&base)?;

    let mut pgfl = base.clone();
    pgfl.algorithm = Algorithm::Pgfl;
    let target = run_experiment_with(&pgfl, mnist.as_ref())?
        .at(horizon)
        .map(|p| p.mean)
        .ok_or_else(|| Error::Argument("empty reference curve".into()))?;

    let mut candidates = Vec::with_capacity(rates.len());
    for &lr in rates {
        let mut fedavg = base.clone();
        fedavg.algorithm = Algorithm::Fedavg;
        fedavg.fedavg.learning_rate = lr;
        let value = run_experiment_with(&fedavg, mnist.as_ref())?
            .at(horizon)
            .map(|p| p.mean)
            .ok_or_else(|| Error::Argument("empty fedavg curve".into()))?;
        candidates.push((lr, value));
    }
    let gap = |v: f64| (to_db(v) - to_db(target)).abs();
    let best = candidates
        .iter()
        .filter(|(_, v)| v.is_finite() && *v > 0.0)
        .min_by(|a, b| gap(a.1).total_cmp(&gap(b.1)))
        .map(|&(lr, _)| lr)
        .ok_or_else(|| Error::Argument("every candidate diverged".into()))?;
    Ok(LrCalibration {
        horizon,
        reference: target,
        candidates,
        best,
    })
}
