//! Result bundle: per-replicate trace, Monte Carlo curve, config echo and a
//! plain-text summary. Floats are written in Rust's shortest round-trip
//! form, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::runner::ExperimentResult;
use crate::error::Result;
use crate::metrics::{steady_state, to_db, CurvePoint};

pub const TRACE_FILE: &str = "trace.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Environment variable for the default output directory.
pub const OUT_DIR_ENV: &str = "PGFL_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "results";

/// Fraction of the run averaged for the steady-state figure in summaries.
pub const STEADY_STATE_FRACTION: f64 = 0.1;

pub fn steady_state_window(iterations: usize) -> usize {
    ((iterations as f64 * STEADY_STATE_FRACTION).ceil() as usize).max(1)
}

pub fn write_bundle(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut trace = csv::Writer::from_path(dir.join(TRACE_FILE))?;
    trace.write_record(["iteration", "replicate", "metric", "epsilon"])?;
    for r in &result.records {
        trace.write_record([
            r.iteration.to_string(),
            r.replicate.to_string(),
            r.metric.to_string(),
            r.epsilon.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    trace.flush()?;

    write_curve(&result.curve, &dir.join(CURVE_FILE))?;
    fs::write(dir.join(CONFIG_FILE), result.config.to_toml()?)?;
    fs::write(dir.join(SUMMARY_FILE), summary(result))?;
    Ok(())
}

pub fn write_curve(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "mean", "std"])?;
    for p in curve {
        w.write_record([p.iteration.to_string(), p.mean.to_string(), p.std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary(result: &ExperimentResult) -> String {
    let c = &result.config;
    let mean = result.mean_curve();
    let window = steady_state_window(c.iterations);
    let last = result.curve.last().copied().unwrap_or(CurvePoint {
        iteration: 0,
        mean: f64::NAN,
        std: f64::NAN,
    });
    let metric = match c.task {
        super::config::Task::Ridge => "nmsd",
        super::config::Task::Logistic => "accuracy",
    };
    let steady = steady_state(&mean, window);
    let mut s = String::new();
    let _ = writeln!(s, "name: {}", c.name);
    let _ = writeln!(s, "algorithm: {:?}", c.algorithm);
    let _ = writeln!(s, "replicates: {}", c.replicates);
    let _ = writeln!(s, "iterations: {}", c.iterations);
    let _ = writeln!(s, "final {metric}: {} (std {})", last.mean, last.std);
    let _ = writeln!(s, "steady-state {metric} (last {window} iterations): {steady}");
    if metric == "nmsd" {
        let _ = writeln!(s, "steady-state nmsd [dB]: {:.3}", to_db(steady));
    }
    if let Some(eps) = result.final_epsilon() {
        let _ = writeln!(s, "final epsilon (max over clients and replicates): {eps}");
    }
    s
}
