//! Gaussian perturbation under dynamic zCDP and the (epsilon, delta)
//! accountant.
//!
//! A client's noise variance follows `delta_sq(n) = zeta * delta_sq(n-1)`
//! from a fixed `delta_sq(0)`; at every step the per-iteration leakage is
//! `phi(n) = sensitivity^2 / (2 * delta_sq(n))`, so `phi(n) = phi(0) / zeta^n`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ModelVector;

/// l2 sensitivity of one client's primal update: `2 C / (rho D)`.
pub fn sensitivity(clip_bound: f64, rho: f64, num_samples: usize) -> Result<f64> {
    if !(clip_bound > 0.0 && rho > 0.0 && num_samples > 0) {
        return Err(Error::Argument(format!(
            "sensitivity needs positive inputs, got C={clip_bound}, rho={rho}, D={num_samples}"
        )));
    }
    Ok(2.0 * clip_bound / (rho * num_samples as f64))
}

/// Gaussian variance achieving `phi`-zCDP at the given sensitivity.
pub fn noise_variance(sensitivity: f64, phi: f64) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::Argument(format!("privacy parameter phi must be > 0, got {phi}")));
    }
    if !(sensitivity >= 0.0) {
        return Err(Error::Argument(format!("sensitivity must be >= 0, got {sensitivity}")));
    }
    Ok(sensitivity * sensitivity / (2.0 * phi))
}

/// Inverse of [`noise_variance`].
pub fn leakage(sensitivity: f64, variance: f64) -> f64 {
    sensitivity * sensitivity / (2.0 * variance)
}

/// How the initial noise level is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPrivacy {
    /// Initial leakage `phi(0)`.
    Phi(f64),
    /// Initial variance `delta_sq(0)`.
    Variance(f64),
}

/// Per-client noise schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyState {
    pub phi0: f64,
    pub zeta: f64,
    pub delta_sq: f64,
    pub sensitivity: f64,
    pub iteration: u32,
}

impl PrivacyState {
    pub fn new(initial: InitialPrivacy, zeta: f64, sensitivity: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::Argument(format!("zeta must lie in (0, 1), got {zeta}")));
        }
        let (phi0, delta_sq) = match initial {
            InitialPrivacy::Phi(phi0) => (phi0, noise_variance(sensitivity, phi0)?),
            InitialPrivacy::Variance(v) => {
                if !(v > 0.0) {
                    return Err(Error::Argument(format!("initial variance must be > 0, got {v}")));
                }
                (leakage(sensitivity, v), v)
            }
        };
        Ok(Self {
            phi0,
            zeta,
            delta_sq,
            sensitivity,
            iteration: 0,
        })
    }

    /// Moves to the next iteration's (smaller) variance.
    pub fn advance(&mut self) {
        self.delta_sq *= self.zeta;
        self.iteration += 1;
    }

    /// Leakage of the current iteration.
    pub fn phi(&self) -> f64 {
        leakage(self.sensitivity, self.delta_sq)
    }

    /// `phi(1)`, the first transmitted iteration's leakage.
    pub fn phi1(&self) -> f64 {
        self.phi0 / self.zeta
    }

    /// Cumulative epsilon after the iterations consumed so far (0 before
    /// the first transmission).
    pub fn epsilon(&self, dp_delta: f64) -> Result<f64> {
        if self.iteration == 0 {
            return Ok(0.0);
        }
        total_privacy_loss(self.phi1(), self.zeta, self.iteration, dp_delta)
    }
}

/// `d` independent draws from `N(0, delta_sq)`.
pub fn sample_noise<R: Rng + ?Sized>(delta_sq: f64, dim: usize, rng: &mut R) -> ModelVector {
    let std = delta_sq.sqrt();
    DVector::from_iterator(dim, (0..dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)))
}

/// Total (epsilon, delta)-DP loss after `n` iterations of the geometric
/// schedule starting at leakage `phi1`:
///
/// ```text
/// rho_tot = phi1 (1 - zeta^n) / (zeta^(n-1) - zeta^n)
/// eps     = rho_tot + 2 sqrt(rho_tot ln(1/delta))
/// ```
pub fn total_privacy_loss(phi1: f64, zeta: f64, n: u32, dp_delta: f64) -> Result<f64> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::Argument(format!("zeta must lie in (0, 1), got {zeta}")));
    }
    if !(dp_delta > 0.0 && dp_delta < 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1), got {dp_delta}")));
    }
    if n == 0 {
        return Err(Error::Argument("iteration count must be at least 1".into()));
    }
    if !(phi1 >= 0.0 && phi1.is_finite()) {
        return Err(Error::Argument(format!("phi1 must be finite and >= 0, got {phi1}")));
    }
    // Divide through by zeta^(n-1): (1 - zeta^n) / (zeta^(n-1) (1 - zeta)).
    // The ratio is formed first so that n = 1 gives exactly phi1.
    let n = n as i32;
    let growth = (1.0 - zeta.powi(n)) / (zeta.powi(n - 1) * (1.0 - zeta));
    let rho_total = phi1 * growth;
    Ok(rho_total + 2.0 * (rho_total * (1.0 / dp_delta).ln()).sqrt())
}

/// Worst case over clients, as reported by the accountant.
pub fn max_privacy_loss<'a>(
    states: impl IntoIterator<Item = &'a PrivacyState>,
    dp_delta: f64,
) -> Result<f64> {
    states
        .into_iter()
        .map(|s| s.epsilon(dp_delta))
        .try_fold(0.0f64, |acc, e| Ok(acc.max(e?)))
}
