use std::fmt;

use crate::ModelVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which part of the simulation raised an error inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Module {
    Topology,
    Datagen,
    Solver,
    Privacy,
    Engine,
    FedAvg,
    Metrics,
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Module::Topology => "topology",
            Module::Datagen => "datagen",
            Module::Solver => "solvers",
            Module::Privacy => "privacy",
            Module::Engine => "pgfl_core",
            Module::FedAvg => "baseline_fedavg",
            Module::Metrics => "metrics",
        };
        f.write_str(name)
    }
}

/// Participant that was being processed when a run failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Client(usize),
    Server(usize),
    Global,
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Client(id) => write!(f, "client {id}"),
            Entity::Server(id) => write!(f, "server {id}"),
            Entity::Global => f.write_str("federation"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Box<ModelVector>,
    },

    #[error("{module} failed in round {round} at {entity}: {source}")]
    Run {
        module: Module,
        round: usize,
        entity: Entity,
        #[source]
        source: Box<Error>,
    },

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn in_run(self, module: Module, round: usize, entity: Entity) -> Self {
        Error::Run {
            module,
            round,
            entity,
            source: Box::new(self),
        }
    }
}
