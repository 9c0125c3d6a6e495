//! End-to-end acceptance checks. Runs every criterion, prints one line each
//! and exits non-zero when any of them fails. Pass a substring of a
//! criterion name to run a subset.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use pgfl::datagen::Dataset;
use pgfl::federation::centralized_ridge_solution;
use pgfl::harness::config::MNIST_DIR_ENV;
use pgfl::harness::output::steady_state_window;
use pgfl::harness::recipes;
use pgfl::harness::runner::build_setup;
use pgfl::harness::{recipe, run_recipe, ExperimentConfig, ExperimentResult, Recipe, RecipeResult};
use pgfl::metrics::{steady_state, to_db};
use pgfl::privacy::total_privacy_loss;
use pgfl::rng::SeedTree;
use pgfl::solvers::{newton_prox_solve, LossKind, NewtonOptions, ProxProblem};
use pgfl::{Error, Federation, ModelVector, TauSchedule};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> pgfl::Result<Outcome>;

const CRITERIA: [(&str, Check); 11] = [
    ("consensus-optimality", consensus_optimality),
    ("regression-ordering", regression_ordering),
    ("tau-sweep-shape", tau_sweep_shape),
    ("decaying-tau", decaying_tau),
    ("phi-sweep-trend", phi_sweep_trend),
    ("mixing-drift-bound", mixing_drift_bound),
    ("sensitivity-audit", sensitivity_audit),
    ("accountant", accountant),
    ("mnist", mnist),
    ("determinism", determinism),
    ("property-suites", property_suites),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => Outcome::new(false, format!("error: {}", error_chain(&e))),
            Err(p) => Outcome::new(false, format!("panic: {}", panic_message(&p))),
        };
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {name}: {} ({}) [{:.1}s]",
            i + 1,
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn error_chain(e: &Error) -> String {
    let mut s = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(cause) = source {
        s.push_str(": ");
        s.push_str(&cause.to_string());
        source = cause.source();
    }
    s
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> pgfl::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn steady_db(result: &ExperimentResult) -> f64 {
    to_db(steady_state(&result.mean_curve(), steady_state_window(result.config.iterations)))
}

fn variant<'a>(outcome: &'a RecipeResult, name: &str) -> pgfl::Result<&'a ExperimentResult> {
    outcome
        .result(name)
        .ok_or_else(|| Error::Config(format!("recipe has no variant {name}")))
}

fn oracle_solutions(config: &ExperimentConfig, topology: &pgfl::Topology, datasets: &[Dataset]) -> pgfl::Result<Vec<ModelVector>> {
    (0..topology.num_clusters)
        .map(|q| centralized_ridge_solution(topology, datasets, config.solver.lambda, q))
        .collect()
}

fn consensus_optimality() -> pgfl::Result<Outcome> {
    const ITERATIONS: usize = 500;
    let mut config = recipes::regression_base(SEED);
    config.name = "consensus".into();
    config.tau = TauSchedule::constant(0.0);
    config.privacy = None;
    config.quota = None;
    config.replicates = 1;
    config.iterations = ITERATIONS;
    config.validate()?;

    let start = Instant::now();
    let (fed, oracle) = single_thread(|| -> pgfl::Result<_> {
        let seeds = SeedTree::new(config.seed).replicate(0);
        let setup = build_setup(&config, &seeds, None)?;
        let oracle = oracle_solutions(&config, &setup.topology, &setup.datasets)?;
        let mut fed = Federation::new(config.federation_settings(), setup.topology, setup.datasets, &seeds)?;
        for _ in 0..ITERATIONS {
            fed.run_round()?;
        }
        Ok((fed, oracle))
    })??;
    let elapsed = start.elapsed();

    let servers = fed.topology.num_servers;
    let mut optimality = 0.0f64;
    let mut disagreement = 0.0f64;
    for (q, opt) in oracle.iter().enumerate() {
        let scale = opt.norm();
        for s in 0..servers {
            let w = fed.server_model(s, q);
            optimality = optimality.max((w - opt).norm() / scale);
            for t in s + 1..servers {
                disagreement = disagreement.max((w - fed.server_model(t, q)).norm() / scale);
            }
        }
    }
    let pass = optimality <= 1e-4 && disagreement <= 1e-5 && elapsed <= Duration::from_secs(120);
    Ok(Outcome::new(
        pass,
        format!(
            "max relative error to oracle {optimality:.3e} (<= 1e-4), max inter-server disagreement {disagreement:.3e} (<= 1e-5), {:.1}s single-threaded (<= 120s)",
            elapsed.as_secs_f64()
        ),
    ))
}

fn regression_ordering() -> pgfl::Result<Outcome> {
    let r = recipe("fig-regression-main", SEED)?;
    let out = run_recipe(&r, None)?;
    let tau04 = steady_db(variant(&out, "pgfl-tau0.4")?);
    let tau0 = steady_db(variant(&out, "pgfl-tau0")?);
    let fedavg = steady_db(variant(&out, "fedavg")?);
    let isolated = steady_db(variant(&out, "pgfl-tau0-isolated")?)
        .min(steady_db(variant(&out, "pgfl-tau0.4-isolated")?));
    let connected_worst = tau04.max(tau0);
    let pass = tau04 <= tau0 - 2.0 && tau0 <= fedavg - 2.0 && isolated >= connected_worst + 2.0;
    Ok(Outcome::new(
        pass,
        format!(
            "steady-state dB: tau0.4 {tau04:.2}, tau0 {tau0:.2}, fedavg {fedavg:.2}, best isolated {isolated:.2}; need tau0.4 +2 <= tau0, tau0 +2 <= fedavg, isolated >= others +2; R={}",
            r.variants[0].replicates
        ),
    ))
}

fn tau_sweep_shape() -> pgfl::Result<Outcome> {
    let r = recipe("tau-sweep", SEED)?;
    let out = run_recipe(&r, None)?;
    let points = out.sweep.ok_or_else(|| Error::Config("tau-sweep has no sweep".into()))?;
    let (best_tau, best) = points
        .iter()
        .map(|(t, p)| (*t, p.mean))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let at = |tau: f64| points.iter().find(|(t, _)| *t == tau).map(|(_, p)| p.mean);
    let (zero, high) = (at(0.0).expect("tau 0 on grid"), at(0.9).expect("tau 0.9 on grid"));
    let pass = best_tau > 0.1 && best_tau < 0.5 && high > zero;
    let curve: Vec<String> = points.iter().map(|(t, p)| format!("{t}:{:.2}", to_db(p.mean))).collect();
    Ok(Outcome::new(
        pass,
        format!(
            "minimum {:.2} dB at tau {best_tau} (need 0.1 < tau < 0.5); tau0.9 {:.2} dB vs tau0 {:.2} dB; dB by tau [{}]",
            to_db(best),
            to_db(high),
            to_db(zero),
            curve.join(" ")
        ),
    ))
}

fn decaying_tau() -> pgfl::Result<Outcome> {
    let r = recipe("low-similarity", SEED)?;
    let out = run_recipe(&r, None)?;
    let fixed = variant(&out, "pgfl-tau0.4")?.mean_curve();
    let decay = variant(&out, "pgfl-tau0.4-decay0.98")?;
    let early_gap = fixed
        .iter()
        .zip(decay.mean_curve())
        .take(20)
        .map(|(a, b)| (to_db(*a) - to_db(b)).abs())
        .fold(0.0f64, f64::max);
    let steady_gap = (steady_db(decay) - steady_db(variant(&out, "pgfl-tau0")?)).abs();
    let pass = early_gap <= 1.0 && steady_gap <= 0.5;
    Ok(Outcome::new(
        pass,
        format!("max gap to fixed tau0.4 over first 20 iterations {early_gap:.3} dB (<= 1), steady-state gap to tau0 {steady_gap:.3} dB (<= 0.5)"),
    ))
}

fn phi_sweep_trend() -> pgfl::Result<Outcome> {
    let r = recipe("phi-sweep", SEED)?;
    let out = run_recipe(&r, None)?;
    let values = &r.sweep.as_ref().expect("phi sweep").values;
    let mut steady: Vec<(f64, f64)> = values.iter().copied().zip(out.results.iter().map(steady_db)).collect();
    steady.sort_by(|a, b| b.0.total_cmp(&a.0));
    let increasing = steady.windows(2).all(|w| w[1].1 > w[0].1);
    let spans = steady.first().map(|f| f.0).unwrap_or(0.0) / steady.last().map(|l| l.0).unwrap_or(1.0) >= 100.0;
    let listing: Vec<String> = steady.iter().map(|(p, db)| format!("{p}:{db:.2}")).collect();
    Ok(Outcome::new(
        increasing && spans && steady.len() == 4,
        format!("steady-state dB by decreasing phi0 [{}]; strictly increasing: {increasing}", listing.join(" ")),
    ))
}

fn mixing_drift_bound() -> pgfl::Result<Outcome> {
    const REPLICATES: usize = 100;
    const ITERATIONS: usize = 100;
    const TAU: f64 = 0.4;
    let base = recipe("fig-regression-privacy", SEED)?;
    let mut mixed = base.variant("pgfl-tau0.4").expect("variant").clone();
    mixed.solver.rho = 5.0;
    mixed.iterations = ITERATIONS;
    mixed.tau = TauSchedule::constant(TAU);
    let mut plain = mixed.clone();
    plain.tau = TauSchedule::constant(0.0);

    let per_replicate: Vec<pgfl::Result<(bool, f64)>> = (0..REPLICATES)
        .into_par_iter()
        .map(|r| {
            let seeds = SeedTree::new(mixed.seed).replicate(r as u64);
            let setup = build_setup(&mixed, &seeds, None)?;
            let oracle = oracle_solutions(&mixed, &setup.topology, &setup.datasets)?;
            let eta = oracle
                .iter()
                .flat_map(|a| oracle.iter().map(move |b| (a - b).norm_squared()))
                .fold(0.0f64, f64::max);
            let mut with = Federation::new(mixed.federation_settings(), setup.topology.clone(), setup.datasets.clone(), &seeds)?;
            let mut without = Federation::new(plain.federation_settings(), setup.topology.clone(), setup.datasets.clone(), &seeds)?;
            let (servers, clusters) = (setup.topology.num_servers, setup.topology.num_clusters);
            let mut bound = 0.0;
            let mut worst_ratio = 0.0f64;
            for n in 1..=ITERATIONS {
                with.run_round()?;
                without.run_round()?;
                let tau = mixed.tau.at(n);
                bound = (1.0 - tau) * bound + tau * eta;
                let mut drift = 0.0;
                for s in 0..servers {
                    for q in 0..clusters {
                        drift += (with.server_model(s, q) - without.server_model(s, q)).norm_squared();
                    }
                }
                drift /= (servers * clusters) as f64;
                worst_ratio = worst_ratio.max(drift / bound);
            }
            Ok((worst_ratio <= 1.0, worst_ratio))
        })
        .collect();
    let results = per_replicate.into_iter().collect::<pgfl::Result<Vec<_>>>()?;
    let held = results.iter().filter(|(ok, _)| *ok).count();
    let worst = results.iter().map(|(_, r)| *r).fold(0.0f64, f64::max);
    Ok(Outcome::new(
        held * 100 >= 95 * REPLICATES,
        format!("bound held for all n <= {ITERATIONS} in {held}/{REPLICATES} replicates (>= 95%); worst drift/bound ratio {worst:.3}"),
    ))
}

fn sensitivity_audit() -> pgfl::Result<Outcome> {
    const TRIALS: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e11);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut clipped_trials = 0;
    let normal = |rng: &mut ChaCha8Rng, n: usize, scale: f64| -> Vec<f64> {
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    for _ in 0..TRIALS {
        let d = rng.random_range(2..=20);
        let samples = rng.random_range(1..=10);
        let rho = rng.random_range(0.5..5.0);
        let clip = rng.random_range(0.1..2.0);
        let reg = rng.random_range(0.0..0.1);
        let feature_scale = rng.random_range(0.1..3.0);
        let x = nalgebra::DMatrix::from_row_slice(samples, d, &normal(&mut rng, samples * d, feature_scale));
        let y = nalgebra::DVector::from_iterator(samples, (0..samples).map(|_| f64::from(rng.random_range(0..=1u8))));
        let data = Dataset::new(x, y)?;
        let swap = rng.random_range(0..samples);
        let x_new = nalgebra::DVector::from_vec(normal(&mut rng, d, feature_scale));
        let neighbor = data.with_sample_replaced(swap, &x_new, f64::from(rng.random_range(0..=1u8)));
        if data.x.row_iter().chain(neighbor.x.row_iter()).any(|r| r.norm() > clip) {
            clipped_trials += 1;
        }
        let dual = nalgebra::DVector::from_vec(normal(&mut rng, d, 1.0));
        let anchor = nalgebra::DVector::from_vec(normal(&mut rng, d, 1.0));
        let opts = NewtonOptions {
            tol: 1e-12,
            max_iters: 500,
            clip: true,
        };
        let solve = |ds: &Dataset| {
            newton_prox_solve(
                &ProxProblem {
                    dataset: ds,
                    dual: &dual,
                    anchor: &anchor,
                    rho,
                    reg,
                    clip_bound: clip,
                },
                LossKind::Logistic,
                &opts,
                None,
            )
        };
        let change = (solve(&data)? - solve(&neighbor)?).norm();
        let bound = 2.0 * clip / (rho * samples as f64);
        worst_excess = worst_excess.max(change - bound);
    }
    Ok(Outcome::new(
        worst_excess <= 1e-6,
        format!("{TRIALS} trials ({clipped_trials} with clipping active); max change minus 2C/(rho D) = {worst_excess:.3e} (<= 1e-6)"),
    ))
}

fn accountant() -> pgfl::Result<Outcome> {
    let mut notes = Vec::new();
    let mut pass = true;
    for (phi1, zeta, delta) in [(0.01, 0.9, 0.01), (0.5, 0.99, 1e-5), (2.0, 0.5, 0.1)] {
        let closed = phi1 + 2.0 * (phi1 * (1.0f64 / delta).ln()).sqrt();
        let got = total_privacy_loss(phi1, zeta, 1, delta)?;
        if got != closed {
            pass = false;
            notes.push(format!("n=1 phi1={phi1}: {got} != {closed}"));
        }
    }
    let example = total_privacy_loss(0.01, 0.9, 1, 0.01)?;
    if (example - 0.4392).abs() > 1e-4 {
        pass = false;
    }
    let series = (1..=200)
        .map(|n| total_privacy_loss(0.01, 0.9, n, 0.01))
        .collect::<pgfl::Result<Vec<_>>>()?;
    let monotone = series.windows(2).all(|w| w[1] > w[0]);
    pass &= monotone;
    notes.push(format!("worked example {example:.6} (0.4392 +- 1e-4); strictly increasing over n=1..200: {monotone}"));
    Ok(Outcome::new(pass, notes.join("; ")))
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_recipe(name: &str, dir: &Path) -> pgfl::Result<Recipe> {
    let mut r = recipe(name, SEED)?.with_replicates(5).with_iterations(100);
    for v in &mut r.variants {
        let m = v.mnist.as_mut().expect("mnist recipe");
        m.dir = Some(dir.to_path_buf());
        m.test_cap = m.test_cap.min(500);
    }
    Ok(r)
}

fn final_accuracy(result: &ExperimentResult) -> f64 {
    result.curve.last().map(|p| p.mean).unwrap_or(f64::NAN)
}

fn mnist() -> pgfl::Result<Outcome> {
    let dir = mnist_dir();
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;
    for name in ["mnist-digits", "mnist-triplets"] {
        let out = run_recipe(&mnist_recipe(name, &dir)?, None)?;
        let (a0, a4) = (
            final_accuracy(variant(&out, "pgfl-tau0")?),
            final_accuracy(variant(&out, "pgfl-tau0.4")?),
        );
        pass &= a4 >= a0;
        notes.push(format!("{name}: tau0.4 {a4:.4} vs tau0 {a0:.4}"));
    }
    let sweep = run_recipe(&mnist_recipe("mnist-tau-sweep", &dir)?, None)?
        .sweep
        .ok_or_else(|| Error::Config("mnist-tau-sweep has no sweep".into()))?;
    let (peak_idx, peak) = sweep
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.mean.total_cmp(&b.1 .1.mean))
        .map(|(i, (_, p))| (i, p.mean))
        .expect("non-empty grid");
    let last = sweep.last().expect("non-empty grid").1.mean;
    let interior = peak_idx > 0 && peak_idx + 1 < sweep.len();
    pass &= interior && last < peak;
    let listing: Vec<String> = sweep.iter().map(|(t, p)| format!("{t}:{:.4}", p.mean)).collect();
    notes.push(format!("tau sweep peak {peak:.4} at tau {} [{}]", sweep[peak_idx].0, listing.join(" ")));
    let elapsed = start.elapsed();
    pass &= elapsed <= Duration::from_secs(15 * 60);
    notes.push(format!("{:.0}s (<= 900s)", elapsed.as_secs_f64()));
    Ok(Outcome::new(pass, notes.join("; ")))
}

fn collect_files(root: &Path) -> pgfl::Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                files.insert(rel, fs::read(&path)?);
            }
        }
    }
    Ok(files)
}

fn determinism() -> pgfl::Result<Outcome> {
    let recipes = [
        recipe("tau-sweep", SEED)?.with_replicates(4).with_iterations(40),
        recipe("fig-regression-main", SEED)?.with_replicates(4).with_iterations(40),
    ];
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?, tempfile::tempdir()?];
    for r in &recipes {
        run_recipe(r, Some(dirs[0].path()))?;
        run_recipe(r, Some(dirs[1].path()))?;
        single_thread(|| run_recipe(r, Some(dirs[2].path())))??;
    }
    let first = collect_files(dirs[0].path())?;
    let csv_count = first.keys().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    let same = collect_files(dirs[1].path())? == first && collect_files(dirs[2].path())? == first;
    Ok(Outcome::new(
        same && csv_count > 0,
        format!("{} files ({csv_count} CSV) byte-identical across two reruns and a single-threaded run: {same}", first.len()),
    ))
}

fn property_suites() -> pgfl::Result<Outcome> {
    let mut failures = Vec::new();
    let mut record = |name: &str, result: Result<(), String>| {
        if let Err(e) = result {
            failures.push(format!("{name}: {e}"));
        }
    };
    let runner = || TestRunner::new(ProptestConfig::default());
    record(
        "affine mixing",
        runner().run(&common::mix_case(), |c| common::check_affine_mixing(&c)).map_err(|e| e.to_string()),
    );
    record(
        "prox stationarity",
        runner().run(&common::prox_case(), |c| common::check_prox_stationarity(&c)).map_err(|e| e.to_string()),
    );
    record(
        "noise moments",
        TestRunner::new(ProptestConfig::with_cases(32))
            .run(&common::noise_case(), |(v, s)| common::check_noise_moments(v, s))
            .map_err(|e| e.to_string()),
    );
    record(
        "nmsd of zero model",
        runner()
            .run(&common::nmsd_case(), |(s, p, q, seed, t)| common::check_nmsd_zero_model(s, p, q, seed, &t))
            .map_err(|e| e.to_string()),
    );
    record(
        "idx round trip",
        runner().run(&common::idx_case(), |i| common::check_idx_round_trip(&i)).map_err(|e| e.to_string()),
    );
    Ok(Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            "affine mixing, prox stationarity, noise moments, nmsd of zero model, idx round trip".to_string()
        } else {
            failures.join("; ")
        },
    ))
}
