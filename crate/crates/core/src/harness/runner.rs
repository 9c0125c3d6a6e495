//! Replicate construction and the Monte Carlo loop.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::config::{Algorithm, ExperimentConfig, MnistData, Task};
use crate::datagen::{
    build_classification_task, build_test_set, gen_client_dataset, gen_cluster_models, load_mnist,
    ClusterGroundTruth, Dataset, MnistCollection,
};
use crate::error::{Entity, Error, Module, Result};
use crate::fedavg::FedAvgFederation;
use crate::federation::Federation;
use crate::metrics::{self, CurvePoint, RoundRecord};
use crate::rng::{Purpose, ReplicateSeeds, SeedTree};
use crate::topology::{self, Topology};
use crate::ModelVector;

/// MNIST training and test splits, loaded once per experiment.
#[derive(Debug, Clone)]
pub struct MnistSplits {
    pub train: MnistCollection,
    pub test: MnistCollection,
}

impl MnistSplits {
    /// Reads `train-*` and `t10k-*` IDX files from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let open = |images: &str, labels: &str| load_mnist(&dir.join(images), &dir.join(labels));
        let missing = |e: Error| match e {
            Error::Io(io) => Error::Data(format!(
                "cannot read MNIST IDX files in {} ({io}); see scripts/mnist_from_npm.py",
                dir.display()
            )),
            other => other,
        };
        Ok(Self {
            train: open("train-images-idx3-ubyte", "train-labels-idx1-ubyte").map_err(missing)?,
            test: open("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte").map_err(missing)?,
        })
    }
}

/// Everything a replicate needs besides the algorithm state.
#[derive(Debug, Clone)]
pub struct ReplicateSetup {
    pub topology: Topology,
    pub datasets: Vec<Dataset>,
    /// Regression ground truth.
    pub truth: Option<ClusterGroundTruth>,
    /// Classification test set per cluster.
    pub test_sets: Vec<Dataset>,
}

fn sample_sizes(seeds: &ReplicateSeeds, clients: usize, min: usize, max: usize) -> Vec<usize> {
    let mut rng = seeds.stream(Purpose::SampleSizes, 0);
    (0..clients).map(|_| rng.random_range(min..=max)).collect()
}

/// Topology, local datasets and evaluation data for one replicate. Every
/// piece is drawn from its own stream, so algorithm variants run with the
/// same seed see identical federations.
pub fn build_setup(config: &ExperimentConfig, seeds: &ReplicateSeeds, mnist: Option<&MnistSplits>) -> Result<ReplicateSetup> {
    let topology = topology::generate(
        &config.topology_params(),
        &mut seeds.stream(Purpose::Topology, 0),
        &mut seeds.stream(Purpose::ClusterLabels, 0),
    )?;
    let clients = topology.num_clients();
    match config.task {
        Task::Ridge => {
            let data = config
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("ridge task without [data]".into()))?;
            let truth = gen_cluster_models(
                data.dim,
                topology.num_clusters,
                data.spread,
                &mut seeds.stream(Purpose::GroundTruth, 0),
            )?;
            let models = truth.models();
            let sizes = sample_sizes(seeds, clients, data.samples_min, data.samples_max);
            let datasets = (0..clients)
                .map(|k| {
                    gen_client_dataset(
                        &models[topology.client_cluster[k]],
                        sizes[k],
                        data.noise_std,
                        &mut seeds.stream(Purpose::ClientData, k as u64),
                    )
                })
                .collect::<Result<_>>()?;
            Ok(ReplicateSetup {
                topology,
                datasets,
                truth: Some(truth),
                test_sets: Vec::new(),
            })
        }
        Task::Logistic => {
            let m: &MnistData = config
                .mnist
                .as_ref()
                .ok_or_else(|| Error::Config("logistic task without [mnist]".into()))?;
            let raw = mnist.ok_or_else(|| Error::Data("logistic task needs MNIST data".into()))?;
            let sizes = sample_sizes(seeds, clients, m.samples_min, m.samples_max);
            let datasets = (0..clients)
                .map(|k| {
                    let task = &m.tasks[topology.client_cluster[k]];
                    build_classification_task(
                        &raw.train,
                        &task.positive,
                        &task.negative,
                        sizes[k],
                        &mut seeds.stream(Purpose::ClientData, k as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let test_sets = m
                .tasks
                .iter()
                .enumerate()
                .map(|(q, task)| {
                    build_test_set(
                        &raw.test,
                        &task.positive,
                        &task.negative,
                        m.test_cap,
                        &mut seeds.stream(Purpose::TestData, q as u64),
                    )
                })
                .collect::<Result<_>>()?;
            Ok(ReplicateSetup {
                topology,
                datasets,
                truth: None,
                test_sets,
            })
        }
    }
}

/// Either algorithm behind one interface.
#[derive(Debug, Clone)]
pub enum Simulation {
    Pgfl(Box<Federation>),
    FedAvg(Box<FedAvgFederation>),
}

impl Simulation {
    pub fn new(config: &ExperimentConfig, setup: &ReplicateSetup, seeds: &ReplicateSeeds) -> Result<Self> {
        Ok(match config.algorithm {
            Algorithm::Pgfl => Self::Pgfl(Box::new(Federation::new(
                config.federation_settings(),
                setup.topology.clone(),
                setup.datasets.clone(),
                seeds,
            )?)),
            Algorithm::Fedavg => Self::FedAvg(Box::new(FedAvgFederation::new(
                config.fedavg_settings(),
                setup.topology.clone(),
                setup.datasets.clone(),
                seeds,
            )?)),
        })
    }

    pub fn step(&mut self) -> Result<()> {
        match self {
            Self::Pgfl(f) => f.run_round().map(|_| ()),
            Self::FedAvg(f) => f.run_round().map(|_| ()),
        }
    }

    pub fn client_models(&self) -> Vec<&ModelVector> {
        match self {
            Self::Pgfl(f) => f.client_models(),
            Self::FedAvg(f) => f.client_models(),
        }
    }

    pub fn epsilon(&self) -> Result<Option<f64>> {
        match self {
            Self::Pgfl(f) => f.epsilon(),
            Self::FedAvg(f) => f.epsilon(),
        }
    }
}

/// NMSD for regression, mean client test accuracy for classification.
pub fn evaluate(setup: &ReplicateSetup, models: &[&ModelVector]) -> Result<f64> {
    match &setup.truth {
        Some(truth) => metrics::nmsd(models, &truth.models(), &setup.topology),
        None => metrics::mean_client_accuracy(models, &setup.test_sets, &setup.topology),
    }
}

/// Runs one replicate and returns its per-iteration records.
pub fn run_replicate(config: &ExperimentConfig, replicate: usize, mnist: Option<&MnistSplits>) -> Result<Vec<RoundRecord>> {
    let seeds = SeedTree::new(config.seed).replicate(replicate as u64);
    let setup = build_setup(config, &seeds, mnist)?;
    let mut sim = Simulation::new(config, &setup, &seeds)?;
    let module = match config.algorithm {
        Algorithm::Pgfl => Module::Engine,
        Algorithm::Fedavg => Module::FedAvg,
    };
    (1..=config.iterations)
        .map(|n| {
            sim.step()?;
            let metric = evaluate(&setup, &sim.client_models())
                .map_err(|e| e.in_run(Module::Metrics, n, Entity::Global))?;
            let epsilon = sim.epsilon().map_err(|e| e.in_run(module, n, Entity::Global))?;
            Ok(RoundRecord {
                iteration: n,
                replicate,
                metric,
                epsilon,
            })
        })
        .collect()
}

/// Loads MNIST when the task needs it.
pub fn load_inputs(config: &ExperimentConfig) -> Result<Option<MnistSplits>> {
    match (&config.task, &config.mnist) {
        (Task::Logistic, Some(m)) => MnistSplits::load(&m.resolve_dir()).map(Some),
        _ => Ok(None),
    }
}

/// Records of all replicates plus the Monte Carlo curve.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Replicate-major, iteration-minor.
    pub records: Vec<RoundRecord>,
    pub curve: Vec<CurvePoint>,
}

impl ExperimentResult {
    /// Metric curve of every replicate.
    pub fn replicate_curves(&self) -> Vec<Vec<f64>> {
        self.records
            .chunks(self.config.iterations)
            .map(|c| c.iter().map(|r| r.metric).collect())
            .collect()
    }

    pub fn mean_curve(&self) -> Vec<f64> {
        self.curve.iter().map(|p| p.mean).collect()
    }

    /// Mean and standard deviation at a given iteration (1-based).
    pub fn at(&self, iteration: usize) -> Option<CurvePoint> {
        self.curve.get(iteration.checked_sub(1)?).copied()
    }

    pub fn final_epsilon(&self) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.iteration == self.config.iterations)
            .filter_map(|r| r.epsilon)
            .reduce(f64::max)
    }
}

/// Runs every replicate of a validated config. Replicates execute in
/// parallel and are merged in replicate order, so the result does not depend
/// on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mnist = load_inputs(config)?;
    run_experiment_with(config, mnist.as_ref())
}

/// As [`run_experiment`] with MNIST already loaded.
pub fn run_experiment_with(config: &ExperimentConfig, mnist: Option<&MnistSplits>) -> Result<ExperimentResult> {
    config.validate()?;
    let per_replicate: Vec<Vec<RoundRecord>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(config, r, mnist).map_err(|e| Error::Replicate {
                replicate: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let curves: Vec<Vec<f64>> = per_replicate
        .iter()
        .map(|recs| recs.iter().map(|r| r.metric).collect())
        .collect();
    let curve = metrics::monte_carlo(&curves)?;
    Ok(ExperimentResult {
        config: config.clone(),
        records: per_replicate.into_iter().flatten().collect(),
        curve,
    })
}
