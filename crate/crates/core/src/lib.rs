//! Personalized graph federated learning (PGFL) simulator.
//!
//! Clients grouped into clusters are attached to a connected graph of
//! servers. Every round each scheduled client solves an ADMM proximal
//! subproblem against its server's copy of its cluster model, optionally
//! perturbs the result with Gaussian noise calibrated for zero-concentrated
//! differential privacy, and the servers aggregate per cluster, average over
//! their graph neighborhood and mix a fraction `tau` of the other clusters'
//! models into each cluster model.
//!
//! The crate is organized bottom-up: [`topology`] and [`datagen`] build a
//! federation, [`solvers`] handle the client subproblem, [`privacy`] the
//! noise schedule and accountant, [`federation`] the PGFL round,
//! [`fedavg`] the single-model baseline, [`metrics`] the evaluation and
//! [`harness`] configuration, recipes and result files.

pub mod datagen;
pub mod error;
pub mod fedavg;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod privacy;
pub mod rng;
pub mod solvers;
pub mod topology;

/// Dense model vector exchanged between clients and servers.
pub type ModelVector = nalgebra::DVector<f64>;

pub use error::{Error, Result};
pub use federation::{Federation, FederationSettings, TauSchedule};
pub use topology::Topology;
