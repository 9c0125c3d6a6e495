//! Property checks shared by the proptest suite and the acceptance runner.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgfl::datagen::{parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, Dataset, IdxImages};
use pgfl::federation::inter_cluster_mix;
use pgfl::metrics::nmsd;
use pgfl::privacy::sample_noise;
use pgfl::solvers::{local_gradient, newton_prox_solve, ridge_primal_solve, LossKind, NewtonOptions, ProxProblem};
use pgfl::topology::{self, TopologyParams};
use pgfl::ModelVector;

pub type Check = std::result::Result<(), TestCaseError>;

fn vector(dim: usize) -> impl Strategy<Value = ModelVector> {
    prop::collection::vec(-5.0..5.0f64, dim).prop_map(DVector::from_vec)
}

// ---- affine mixing ----

#[derive(Debug, Clone)]
pub struct MixCase {
    pub aggregates: Vec<ModelVector>,
    pub shift: ModelVector,
    pub cluster: usize,
    pub tau: f64,
}

pub fn mix_case() -> impl Strategy<Value = MixCase> {
    (2usize..6, 1usize..8)
        .prop_flat_map(|(q, d)| {
            (
                prop::collection::vec(vector(d), q),
                vector(d),
                0..q,
                0.0..0.99f64,
            )
        })
        .prop_map(|(aggregates, shift, cluster, tau)| MixCase {
            aggregates,
            shift,
            cluster,
            tau,
        })
}

/// Mixing weights sum to one, so a common shift passes straight through.
pub fn check_affine_mixing(case: &MixCase) -> Check {
    let base = inter_cluster_mix(&case.aggregates, case.cluster, case.tau).map_err(fail)?;
    let shifted: Vec<ModelVector> = case.aggregates.iter().map(|a| a + &case.shift).collect();
    let moved = inter_cluster_mix(&shifted, case.cluster, case.tau).map_err(fail)?;
    let err = (&moved - &base - &case.shift).norm();
    prop_assert!(err <= 1e-9 * (1.0 + case.shift.norm() + base.norm()), "shift error {err}");

    let same = vec![case.shift.clone(); case.aggregates.len()];
    let fixed = inter_cluster_mix(&same, case.cluster, case.tau).map_err(fail)?;
    prop_assert!((&fixed - &case.shift).norm() <= 1e-9 * (1.0 + case.shift.norm()));
    Ok(())
}

// ---- prox stationarity ----

#[derive(Debug, Clone)]
pub struct ProxCase {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub dual: ModelVector,
    pub anchor: ModelVector,
    pub rho: f64,
    pub reg: f64,
    pub clip_bound: f64,
}

impl ProxCase {
    fn dataset(&self, binary: bool) -> Dataset {
        let y = self
            .y
            .iter()
            .map(|&v| if binary { f64::from(u8::from(v > 0.0)) } else { v })
            .collect::<Vec<_>>();
        Dataset::new(self.x.clone(), DVector::from_vec(y)).expect("valid dataset")
    }
}

pub fn prox_case() -> impl Strategy<Value = ProxCase> {
    (1usize..8, 1usize..12)
        .prop_flat_map(|(d, n)| {
            (
                prop::collection::vec(-3.0..3.0f64, n * d),
                prop::collection::vec(-3.0..3.0f64, n),
                vector(d),
                vector(d),
                0.2..10.0f64,
                0.0..1.0f64,
                0.1..3.0f64,
                Just((n, d)),
            )
        })
        .prop_map(|(xs, y, dual, anchor, rho, reg, clip_bound, (n, d))| ProxCase {
            x: DMatrix::from_row_slice(n, d, &xs),
            y,
            dual,
            anchor,
            rho,
            reg,
            clip_bound,
        })
}

/// The solution satisfies `w = anchor + dual / rho - grad f(w) / rho`.
pub fn check_prox_stationarity(case: &ProxCase) -> Check {
    let runs = [(LossKind::Squared, false), (LossKind::Logistic, false), (LossKind::Logistic, true)];
    for (kind, clip) in runs {
        let data = case.dataset(kind == LossKind::Logistic);
        let p = ProxProblem {
            dataset: &data,
            dual: &case.dual,
            anchor: &case.anchor,
            rho: case.rho,
            reg: case.reg,
            clip_bound: case.clip_bound,
        };
        let w = match kind {
            LossKind::Squared => ridge_primal_solve(&p).map_err(fail)?,
            LossKind::Logistic => {
                let opts = NewtonOptions {
                    tol: 1e-12,
                    max_iters: 500,
                    clip,
                };
                newton_prox_solve(&p, kind, &opts, None).map_err(fail)?
            }
        };
        let grad = local_gradient(&data, &w, kind, case.reg, clip.then_some(case.clip_bound));
        let implied = &case.anchor + &case.dual / case.rho - grad / case.rho;
        let err = (&w - &implied).norm();
        prop_assert!(
            err <= 1e-7 * (1.0 + w.norm()),
            "{kind:?} clip={clip}: stationarity residual {err}"
        );
    }
    Ok(())
}

// ---- noise moments ----

pub const NOISE_DRAWS: usize = 20_000;

pub fn noise_case() -> impl Strategy<Value = (f64, u64)> {
    (1e-4..10.0f64, any::<u64>())
}

/// Sample mean and variance within five standard errors of `0` and
/// `delta_sq`.
pub fn check_noise_moments(delta_sq: f64, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = sample_noise(delta_sq, NOISE_DRAWS, &mut rng);
    let n = NOISE_DRAWS as f64;
    let mean = v.mean();
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    prop_assert!(mean.abs() <= 5.0 * (delta_sq / n).sqrt(), "mean {mean}");
    prop_assert!(
        (var - delta_sq).abs() <= 5.0 * delta_sq * (2.0 / (n - 1.0)).sqrt(),
        "variance {var} vs {delta_sq}"
    );
    Ok(())
}

// ---- NMSD of the zero model ----

pub fn nmsd_case() -> impl Strategy<Value = (usize, usize, usize, u64, Vec<Vec<f64>>)> {
    (2usize..6, 2usize..6, 1usize..4, any::<u64>()).prop_flat_map(|(servers, per_server, clusters, seed)| {
        let truth = prop::collection::vec(
            prop::collection::vec(-5.0..5.0f64, 4).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3)),
            clusters,
        );
        (Just(servers), Just(per_server), Just(clusters), Just(seed), truth)
    })
}

pub fn check_nmsd_zero_model(servers: usize, per_server: usize, clusters: usize, seed: u64, truth: &[Vec<f64>]) -> Check {
    let params = TopologyParams {
        num_servers: servers,
        clients_per_server: per_server,
        avg_degree: 1.0,
        num_clusters: clusters,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = ChaCha8Rng::seed_from_u64(seed ^ 0x5555);
    let topo = topology::generate(&params, &mut rng, &mut labels).map_err(fail)?;
    let truth: Vec<ModelVector> = truth.iter().map(|t| DVector::from_vec(t.clone())).collect();
    let zero = DVector::zeros(4);
    let models = vec![&zero; topo.num_clients()];
    let value = nmsd(&models, &truth, &topo).map_err(fail)?;
    prop_assert!((value - 1.0).abs() <= 1e-12, "nmsd of zero model {value}");
    Ok(())
}

// ---- IDX round trip ----

pub fn idx_case() -> impl Strategy<Value = IdxImages> {
    (1usize..9, 1usize..9, 0usize..12).prop_flat_map(|(rows, cols, count)| {
        prop::collection::vec(any::<u8>(), rows * cols * count).prop_map(move |pixels| IdxImages { rows, cols, pixels })
    })
}

pub fn check_idx_round_trip(images: &IdxImages) -> Check {
    let bytes = write_idx_images(images);
    let parsed = parse_idx_images(&bytes).map_err(fail)?;
    prop_assert_eq!(&parsed, images);
    prop_assert_eq!(write_idx_images(&parsed), bytes);

    let labels: Vec<u8> = images.pixels.iter().take(images.count()).map(|p| p % 10).collect();
    let label_bytes = write_idx_labels(&labels);
    let parsed = parse_idx_labels(&label_bytes).map_err(fail)?;
    prop_assert_eq!(&parsed, &labels);
    prop_assert_eq!(write_idx_labels(&parsed), label_bytes);
    Ok(())
}

fn fail(e: pgfl::Error) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}
