//! Configuration, orchestration and persistence of experiments.

pub mod calibrate;
pub mod config;
pub mod output;
pub mod recipes;
pub mod runner;

pub use calibrate::{calibrate_fedavg_lr, LrCalibration};
pub use config::{Algorithm, ExperimentConfig, Task};
pub use output::write_bundle;
pub use recipes::{recipe, run_recipe, Recipe, RecipeResult, RECIPES};
pub use runner::{run_experiment, run_experiment_with, ExperimentResult, MnistSplits};
