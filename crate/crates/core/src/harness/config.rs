//! Experiment configuration as a TOML document. Unknown keys are rejected so
//! that an echoed config always describes exactly what was run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedavg::FedAvgSettings;
use crate::federation::{FederationSettings, PrivacyClock, PrivacySettings, TauSchedule};
use crate::privacy::InitialPrivacy;
use crate::solvers::{LossKind, SolverSettings};
use crate::topology::TopologyParams;

/// Environment variable naming the directory that holds the MNIST IDX files
/// when a config does not set `mnist.dir`.
pub const MNIST_DIR_ENV: &str = "PGFL_MNIST_DIR";
pub const DEFAULT_MNIST_DIR: &str = "data/mnist";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pgfl,
    Fedavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Synthetic ridge regression scored by NMSD.
    Ridge,
    /// MNIST logistic regression scored by test accuracy.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub servers: usize,
    pub clients_per_server: usize,
    pub avg_degree: f64,
    pub clusters: usize,
    /// `false` removes every server-server link (`E` empty).
    #[serde(default = "yes")]
    pub inter_server: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionData {
    pub dim: usize,
    pub samples_min: usize,
    pub samples_max: usize,
    pub noise_std: f64,
    /// Cluster models are `(1 + gamma_q) w0` with `gamma_q ~ U(-spread, spread)`.
    pub spread: f64,
}

/// One cluster's binary task: `positive` digits are labeled 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DigitTask {
    pub positive: Vec<u8>,
    pub negative: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistData {
    /// Directory holding the four IDX files; falls back to `$PGFL_MNIST_DIR`
    /// and then `data/mnist`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub samples_min: usize,
    pub samples_max: usize,
    /// Test images per cluster.
    pub test_cap: usize,
    /// One entry per cluster.
    pub tasks: Vec<DigitTask>,
}

impl MnistData {
    pub fn resolve_dir(&self) -> PathBuf {
        if let Some(dir) = &self.dir {
            return dir.clone();
        }
        match std::env::var_os(MNIST_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => PathBuf::from(DEFAULT_MNIST_DIR),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub rho: f64,
    pub lambda: f64,
    /// Per-sample gradient bound `C_k`.
    pub clip_bound: f64,
    /// Minimize the clipped objective instead of the exact one.
    pub clip_in_solver: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Initial leakage `phi(0)`; give this or `variance0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi0: Option<f64>,
    /// Initial noise variance `delta_sq(0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance0: Option<f64>,
    pub zeta: f64,
    pub dp_delta: f64,
    #[serde(default)]
    pub clock: PrivacyClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedAvgConfig {
    pub learning_rate: f64,
    pub local_steps: usize,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            local_steps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub algorithm: Algorithm,
    pub task: Task,
    pub iterations: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Clients scheduled per server and round; absent means everybody.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quota: Option<usize>,
    pub topology: TopologyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<RegressionData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist: Option<MnistData>,
    pub solver: SolverConfig,
    #[serde(default = "no_mixing")]
    pub tau: TauSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacyConfig>,
    #[serde(default)]
    pub fedavg: FedAvgConfig,
}

fn yes() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iters() -> usize {
    500
}

fn no_mixing() -> TauSchedule {
    TauSchedule::constant(0.0)
}

fn invalid(msg: String) -> Error {
    Error::Config(msg)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg()))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks every field against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<()> {
        check(!self.name.is_empty(), || "name must not be empty".into())?;
        check(self.iterations >= 1, || "iterations must be >= 1".into())?;
        check(self.replicates >= 1, || "replicates must be >= 1".into())?;

        let t = &self.topology;
        check(t.servers >= 1, || "topology.servers must be >= 1".into())?;
        check(t.clients_per_server >= 1, || "topology.clients_per_server must be >= 1".into())?;
        check(t.clusters >= 1, || "topology.clusters must be >= 1".into())?;
        check(
            t.avg_degree >= 0.0 && (t.avg_degree < t.servers as f64 || t.servers == 1),
            || format!("topology.avg_degree must lie in [0, servers), got {}", t.avg_degree),
        )?;
        if let Some(q) = self.quota {
            check(q <= t.clients_per_server, || {
                format!("quota {q} exceeds topology.clients_per_server {}", t.clients_per_server)
            })?;
        }

        let s = &self.solver;
        check(s.rho > 0.0, || format!("solver.rho must be > 0, got {}", s.rho))?;
        check(s.lambda >= 0.0, || format!("solver.lambda must be >= 0, got {}", s.lambda))?;
        check(s.clip_bound > 0.0, || format!("solver.clip_bound must be > 0, got {}", s.clip_bound))?;
        check(s.tol > 0.0, || format!("solver.tol must be > 0, got {}", s.tol))?;
        check(s.max_iters >= 1, || "solver.max_iters must be >= 1".into())?;

        self.tau.validate()?;
        check(self.tau.is_zero() || t.clusters >= 2, || {
            "tau > 0 needs at least two clusters".into()
        })?;
        if self.algorithm == Algorithm::Fedavg {
            check(self.fedavg.learning_rate > 0.0, || {
                format!("fedavg.learning_rate must be > 0, got {}", self.fedavg.learning_rate)
            })?;
            check(self.fedavg.local_steps >= 1, || "fedavg.local_steps must be >= 1".into())?;
        }

        if let Some(p) = &self.privacy {
            check(p.zeta > 0.0 && p.zeta < 1.0, || {
                format!("privacy.zeta must lie in (0, 1), got {}", p.zeta)
            })?;
            check(p.dp_delta > 0.0 && p.dp_delta < 1.0, || {
                format!("privacy.dp_delta must lie in (0, 1), got {}", p.dp_delta)
            })?;
            match (p.phi0, p.variance0) {
                (Some(phi), None) => check(phi > 0.0, || format!("privacy.phi0 must be > 0, got {phi}"))?,
                (None, Some(v)) => check(v > 0.0, || format!("privacy.variance0 must be > 0, got {v}"))?,
                _ => return Err(invalid("privacy needs exactly one of phi0 and variance0".into())),
            }
        }

        match self.task {
            Task::Ridge => {
                let d = self
                    .data
                    .as_ref()
                    .ok_or_else(|| invalid("task \"ridge\" needs a [data] table".into()))?;
                check(self.mnist.is_none(), || "task \"ridge\" does not use [mnist]".into())?;
                check(d.dim >= 1, || "data.dim must be >= 1".into())?;
                check(d.samples_min >= 1 && d.samples_min <= d.samples_max, || {
                    format!(
                        "data.samples_min..=samples_max must be a non-empty range of positive counts, got {}..={}",
                        d.samples_min, d.samples_max
                    )
                })?;
                check(d.noise_std >= 0.0, || format!("data.noise_std must be >= 0, got {}", d.noise_std))?;
                check(d.spread >= 0.0, || format!("data.spread must be >= 0, got {}", d.spread))?;
            }
            Task::Logistic => {
                let m = self
                    .mnist
                    .as_ref()
                    .ok_or_else(|| invalid("task \"logistic\" needs an [mnist] table".into()))?;
                check(self.data.is_none(), || "task \"logistic\" does not use [data]".into())?;
                check(m.samples_min >= 1 && m.samples_min <= m.samples_max, || {
                    format!(
                        "mnist.samples_min..=samples_max must be a non-empty range of positive counts, got {}..={}",
                        m.samples_min, m.samples_max
                    )
                })?;
                check(m.test_cap >= 1, || "mnist.test_cap must be >= 1".into())?;
                check(m.tasks.len() == t.clusters, || {
                    format!("mnist.tasks has {} entries for {} clusters", m.tasks.len(), t.clusters)
                })?;
                for (q, task) in m.tasks.iter().enumerate() {
                    check(!task.positive.is_empty() && !task.negative.is_empty(), || {
                        format!("mnist.tasks[{q}] needs non-empty digit sets")
                    })?;
                    check(task.positive.iter().chain(&task.negative).all(|&d| d <= 9), || {
                        format!("mnist.tasks[{q}] contains a non-digit")
                    })?;
                    check(!task.positive.iter().any(|d| task.negative.contains(d)), || {
                        format!("mnist.tasks[{q}] digit sets overlap")
                    })?;
                }
            }
        }
        Ok(())
    }

    pub fn loss(&self) -> LossKind {
        match self.task {
            Task::Ridge => LossKind::Squared,
            Task::Logistic => LossKind::Logistic,
        }
    }

    pub fn topology_params(&self) -> TopologyParams {
        TopologyParams {
            num_servers: self.topology.servers,
            clients_per_server: self.topology.clients_per_server,
            avg_degree: self.topology.avg_degree,
            num_clusters: self.topology.clusters,
        }
    }

    pub fn privacy_settings(&self) -> Option<PrivacySettings> {
        self.privacy.as_ref().map(|p| PrivacySettings {
            initial: match (p.phi0, p.variance0) {
                (Some(phi), _) => InitialPrivacy::Phi(phi),
                (None, Some(v)) => InitialPrivacy::Variance(v),
                (None, None) => unreachable!("validated config has an initial privacy level"),
            },
            zeta: p.zeta,
            dp_delta: p.dp_delta,
            clock: p.clock,
        })
    }

    pub fn federation_settings(&self) -> FederationSettings {
        FederationSettings {
            rho: self.solver.rho,
            lambda: self.solver.lambda,
            clip_bound: self.solver.clip_bound,
            solver: SolverSettings {
                loss: self.loss(),
                clip_in_solver: self.solver.clip_in_solver,
                tol: self.solver.tol,
                max_iters: self.solver.max_iters,
            },
            tau: self.tau,
            privacy: self.privacy_settings(),
            quota: self.quota,
            inter_server: self.topology.inter_server,
        }
    }

    pub fn fedavg_settings(&self) -> FedAvgSettings {
        FedAvgSettings {
            loss: self.loss(),
            lambda: self.solver.lambda,
            learning_rate: self.fedavg.learning_rate,
            local_steps: self.fedavg.local_steps,
            clip_bound: self.solver.clip_bound,
            clip_gradients: self.solver.clip_in_solver,
            privacy: self.privacy_settings(),
            quota: self.quota,
            inter_server: self.topology.inter_server,
        }
    }
}
