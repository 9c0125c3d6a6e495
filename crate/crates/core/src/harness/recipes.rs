//! Named experiment recipes: the regression and MNIST studies at desk scale.
//!
//! All variants of a recipe share the master seed, so they run on identical
//! topologies, datasets, schedules and noise streams and differ only in the
//! algorithm settings being compared.

use std::fs;
use std::path::Path;

use super::config::{
    Algorithm, DigitTask, ExperimentConfig, FedAvgConfig, MnistData, PrivacyConfig, RegressionData, SolverConfig,
    Task, TopologyConfig,
};
use super::output::write_bundle;
use super::runner::{load_inputs, run_experiment_with, ExperimentResult};
use crate::error::{Error, Result};
use crate::federation::{PrivacyClock, TauSchedule};
use crate::metrics::CurvePoint;

pub const REGRESSION_ITERATIONS: usize = 300;
pub const MNIST_ITERATIONS: usize = 100;
pub const REPLICATES: usize = 20;
/// Iteration at which the regression sweeps are read off.
pub const SWEEP_ITERATION: usize = 200;

pub const SERVERS: usize = 10;
pub const CLIENTS_PER_SERVER: usize = 15;
pub const AVG_DEGREE: f64 = 3.0;
pub const CLUSTERS: usize = 3;
pub const SCHEDULED_PER_SERVER: usize = 3;

pub const DIM: usize = 60;
pub const NOISE_STD: f64 = 1.5;
pub const HIGH_SIMILARITY_SPREAD: f64 = 0.15;
pub const LOW_SIMILARITY_SPREAD: f64 = 0.5;

pub const RHO: f64 = 1.0;
pub const LAMBDA: f64 = 0.01;
pub const CLIP_BOUND: f64 = 1.0;

pub const PHI0: f64 = 0.05;
pub const ZETA: f64 = 0.9;
pub const DP_DELTA: f64 = 0.01;

pub const FEDAVG_LEARNING_RATE: f64 = 0.05;

pub const MNIST_RHO: f64 = 1.0;
pub const MNIST_LAMBDA: f64 = 0.01;
pub const MNIST_CLIP_BOUND: f64 = 1.0;
pub const MNIST_PHI0: f64 = 0.05;
pub const MNIST_TEST_CAP: usize = 500;

pub const TAU_GRID: [f64; 8] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9];
pub const PHI0_GRID: [f64; 4] = [0.005, 0.02, 0.1, 0.5];
pub const MNIST_TAU_GRID: [f64; 8] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9];

/// A parameter swept across the variants of a recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub parameter: &'static str,
    /// One value per variant, in variant order.
    pub values: Vec<f64>,
    /// Iteration at which the metric is read off.
    pub at_iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub name: &'static str,
    pub description: &'static str,
    pub variants: Vec<ExperimentConfig>,
    pub sweep: Option<Sweep>,
}

/// Every recipe name with a one-line description.
pub const RECIPES: [(&str, &str); 9] = [
    (
        "fig-regression-main",
        "PGFL tau in {0, 0.4}, with and without server links, and FedAvg; no scheduling, no privacy",
    ),
    ("fig-regression-scheduling", "as fig-regression-main with 3 of 15 clients scheduled per server"),
    ("fig-regression-privacy", "as fig-regression-scheduling with zCDP perturbation"),
    ("tau-sweep", "NMSD at iteration 200 over fixed tau, scheduling and privacy"),
    ("low-similarity", "spread 0.5: tau 0, tau 0.4 and tau 0.4 * 0.98^n, scheduling and privacy"),
    ("phi-sweep", "NMSD at iteration 200 over the initial privacy leakage phi0"),
    ("mnist-digits", "MNIST single-digit tasks, tau in {0, 0.4}, scheduling and privacy"),
    ("mnist-triplets", "MNIST digit-triplet tasks, tau in {0, 0.4}, scheduling and privacy"),
    ("mnist-tau-sweep", "MNIST triplet accuracy at iteration 100 over fixed tau"),
];

pub fn regression_base(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "pgfl".into(),
        algorithm: Algorithm::Pgfl,
        task: Task::Ridge,
        iterations: REGRESSION_ITERATIONS,
        replicates: REPLICATES,
        seed,
        quota: None,
        topology: TopologyConfig {
            servers: SERVERS,
            clients_per_server: CLIENTS_PER_SERVER,
            avg_degree: AVG_DEGREE,
            clusters: CLUSTERS,
            inter_server: true,
        },
        data: Some(RegressionData {
            dim: DIM,
            samples_min: 2,
            samples_max: 9,
            noise_std: NOISE_STD,
            spread: HIGH_SIMILARITY_SPREAD,
        }),
        mnist: None,
        solver: SolverConfig {
            rho: RHO,
            lambda: LAMBDA,
            clip_bound: CLIP_BOUND,
            clip_in_solver: false,
            tol: 1e-8,
            max_iters: 500,
        },
        tau: TauSchedule::constant(0.0),
        privacy: None,
        fedavg: FedAvgConfig {
            learning_rate: FEDAVG_LEARNING_RATE,
            local_steps: 1,
        },
    }
}

pub fn default_privacy(phi0: f64) -> PrivacyConfig {
    PrivacyConfig {
        phi0: Some(phi0),
        variance0: None,
        zeta: ZETA,
        dp_delta: DP_DELTA,
        clock: PrivacyClock::Transmissions,
    }
}

pub fn digit_tasks() -> Vec<DigitTask> {
    [([1], [8]), ([1], [9]), ([7], [8])]
        .into_iter()
        .map(|(p, n)| DigitTask {
            positive: p.to_vec(),
            negative: n.to_vec(),
        })
        .collect()
}

pub fn triplet_tasks() -> Vec<DigitTask> {
    [([1, 2, 3], [6, 7, 8]), ([1, 2, 3], [7, 8, 9]), ([1, 2, 3], [6, 8, 9])]
        .into_iter()
        .map(|(p, n)| DigitTask {
            positive: p.to_vec(),
            negative: n.to_vec(),
        })
        .collect()
}

pub fn mnist_base(seed: u64, tasks: Vec<DigitTask>, samples: (usize, usize)) -> ExperimentConfig {
    ExperimentConfig {
        name: "pgfl".into(),
        algorithm: Algorithm::Pgfl,
        task: Task::Logistic,
        iterations: MNIST_ITERATIONS,
        replicates: REPLICATES,
        seed,
        quota: Some(SCHEDULED_PER_SERVER),
        topology: TopologyConfig {
            servers: SERVERS,
            clients_per_server: CLIENTS_PER_SERVER,
            avg_degree: AVG_DEGREE,
            clusters: CLUSTERS,
            inter_server: true,
        },
        data: None,
        mnist: Some(MnistData {
            dir: None,
            samples_min: samples.0,
            samples_max: samples.1,
            test_cap: MNIST_TEST_CAP,
            tasks,
        }),
        solver: SolverConfig {
            rho: MNIST_RHO,
            lambda: MNIST_LAMBDA,
            clip_bound: MNIST_CLIP_BOUND,
            clip_in_solver: true,
            tol: 1e-8,
            max_iters: 500,
        },
        tau: TauSchedule::constant(0.0),
        privacy: Some(default_privacy(MNIST_PHI0)),
        fedavg: FedAvgConfig::default(),
    }
}

fn variant(base: &ExperimentConfig, name: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut c = base.clone();
    c.name = name.into();
    edit(&mut c);
    c
}

fn tau_label(tau: f64) -> String {
    format!("pgfl-tau{tau}")
}

/// PGFL with fixed tau in {0, 0.4}, isolated servers, and FedAvg.
fn comparison_variants(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    vec![
        variant(base, "pgfl-tau0", |c| c.tau = TauSchedule::constant(0.0)),
        variant(base, "pgfl-tau0.4", |c| c.tau = TauSchedule::constant(0.4)),
        variant(base, "pgfl-tau0-isolated", |c| c.topology.inter_server = false),
        variant(base, "pgfl-tau0.4-isolated", |c| {
            c.tau = TauSchedule::constant(0.4);
            c.topology.inter_server = false;
        }),
        variant(base, "fedavg", |c| c.algorithm = Algorithm::Fedavg),
    ]
}

fn scheduled_private(seed: u64) -> ExperimentConfig {
    let mut c = regression_base(seed);
    c.quota = Some(SCHEDULED_PER_SERVER);
    c.privacy = Some(default_privacy(PHI0));
    c
}

/// Builds a recipe by name.
pub fn recipe(name: &str, seed: u64) -> Result<Recipe> {
    let description = RECIPES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, d)| *d)
        .ok_or_else(|| {
            let known: Vec<&str> = RECIPES.iter().map(|(n, _)| *n).collect();
            Error::Argument(format!("unknown recipe {name:?}; known recipes: {}", known.join(", ")))
        })?;
    let (name, variants, sweep) = match name {
        "fig-regression-main" => ("fig-regression-main", comparison_variants(&regression_base(seed)), None),
        "fig-regression-scheduling" => {
            let mut base = regression_base(seed);
            base.quota = Some(SCHEDULED_PER_SERVER);
            ("fig-regression-scheduling", comparison_variants(&base), None)
        }
        "fig-regression-privacy" => ("fig-regression-privacy", comparison_variants(&scheduled_private(seed)), None),
        "tau-sweep" => {
            let mut base = scheduled_private(seed);
            base.iterations = SWEEP_ITERATION;
            let variants = TAU_GRID
                .iter()
                .map(|&t| variant(&base, &tau_label(t), |c| c.tau = TauSchedule::constant(t)))
                .collect();
            (
                "tau-sweep",
                variants,
                Some(Sweep {
                    parameter: "tau",
                    values: TAU_GRID.to_vec(),
                    at_iteration: SWEEP_ITERATION,
                }),
            )
        }
        "low-similarity" => {
            let mut base = scheduled_private(seed);
            if let Some(d) = base.data.as_mut() {
                d.spread = LOW_SIMILARITY_SPREAD;
            }
            let variants = vec![
                variant(&base, "pgfl-tau0", |c| c.tau = TauSchedule::constant(0.0)),
                variant(&base, "pgfl-tau0.4", |c| c.tau = TauSchedule::constant(0.4)),
                variant(&base, "pgfl-tau0.4-decay0.98", |c| {
                    c.tau = TauSchedule::Exponential {
                        tau0: 0.4,
                        decay: 0.98,
                    }
                }),
            ];
            ("low-similarity", variants, None)
        }
        "phi-sweep" => {
            let mut base = scheduled_private(seed);
            base.iterations = SWEEP_ITERATION;
            base.tau = TauSchedule::constant(0.4);
            let variants = PHI0_GRID
                .iter()
                .map(|&phi| variant(&base, &format!("pgfl-phi0-{phi}"), |c| c.privacy = Some(default_privacy(phi))))
                .collect();
            (
                "phi-sweep",
                variants,
                Some(Sweep {
                    parameter: "phi0",
                    values: PHI0_GRID.to_vec(),
                    at_iteration: SWEEP_ITERATION,
                }),
            )
        }
        "mnist-digits" | "mnist-triplets" => {
            let base = if name == "mnist-digits" {
                mnist_base(seed, digit_tasks(), (2, 4))
            } else {
                mnist_base(seed, triplet_tasks(), (6, 12))
            };
            let variants = vec![
                variant(&base, "pgfl-tau0", |c| c.tau = TauSchedule::constant(0.0)),
                variant(&base, "pgfl-tau0.4", |c| c.tau = TauSchedule::constant(0.4)),
            ];
            let name = if name == "mnist-digits" { "mnist-digits" } else { "mnist-triplets" };
            (name, variants, None)
        }
        "mnist-tau-sweep" => {
            let base = mnist_base(seed, triplet_tasks(), (6, 12));
            let variants = MNIST_TAU_GRID
                .iter()
                .map(|&t| variant(&base, &tau_label(t), |c| c.tau = TauSchedule::constant(t)))
                .collect();
            (
                "mnist-tau-sweep",
                variants,
                Some(Sweep {
                    parameter: "tau",
                    values: MNIST_TAU_GRID.to_vec(),
                    at_iteration: MNIST_ITERATIONS,
                }),
            )
        }
        _ => unreachable!("name checked against RECIPES"),
    };
    Ok(Recipe {
        name,
        description,
        variants,
        sweep,
    })
}

impl Recipe {
    pub fn with_replicates(mut self, replicates: usize) -> Self {
        for v in &mut self.variants {
            v.replicates = replicates;
        }
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        for v in &mut self.variants {
            v.iterations = iterations;
        }
        if let Some(s) = self.sweep.as_mut() {
            s.at_iteration = s.at_iteration.min(iterations);
        }
        self
    }

    pub fn variant(&self, name: &str) -> Option<&ExperimentConfig> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// Outcome of a recipe: one result per variant, plus the sweep summary.
#[derive(Debug, Clone)]
pub struct RecipeResult {
    pub results: Vec<ExperimentResult>,
    /// `(parameter value, metric mean and std at the sweep iteration)`.
    pub sweep: Option<Vec<(f64, CurvePoint)>>,
}

impl RecipeResult {
    pub fn result(&self, name: &str) -> Option<&ExperimentResult> {
        self.results.iter().find(|r| r.config.name == name)
    }
}

/// Runs every variant of a recipe; when `out` is given, writes one bundle
/// per variant under `out/<recipe>/<variant>/` and the sweep table to
/// `out/<recipe>/sweep.csv`.
pub fn run_recipe(recipe: &Recipe, out: Option<&Path>) -> Result<RecipeResult> {
    let mnist = match recipe.variants.first() {
        Some(first) => load_inputs(first)?,
        None => None,
    };
    let mut results = Vec::with_capacity(recipe.variants.len());
    for config in &recipe.variants {
        let result = run_experiment_with(config, mnist.as_ref())?;
        if let Some(out) = out {
            write_bundle(&result, &out.join(recipe.name).join(&config.name))?;
        }
        results.push(result);
    }
    let sweep = recipe
        .sweep
        .as_ref()
        .map(|s| {
            s.values
                .iter()
                .zip(&results)
                .map(|(&v, r)| {
                    r.at(s.at_iteration)
                        .map(|p| (v, p))
                        .ok_or_else(|| Error::Config(format!("sweep iteration {} not reached", s.at_iteration)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    if let (Some(out), Some(points), Some(s)) = (out, &sweep, &recipe.sweep) {
        let dir = out.join(recipe.name);
        fs::create_dir_all(&dir)?;
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record([s.parameter, "iteration", "mean", "std"])?;
        for (v, p) in points {
            w.write_record([v.to_string(), p.iteration.to_string(), p.mean.to_string(), p.std.to_string()])?;
        }
        w.flush()?;
    }
    Ok(RecipeResult { results, sweep })
}
