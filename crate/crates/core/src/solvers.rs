//! Client primal subproblem
//!
//! ```text
//! minimize  (1/D) sum_i loss(x_i' w, y_i) + reg * |w|^2
//!           - <dual, w - anchor> + (rho / 2) |w - anchor|^2
//! ```
//!
//! where `reg` is the per-client share `lambda / |C_s|` of the global ridge
//! penalty. Squared loss without clipping has a closed form; every other
//! combination goes through damped Newton.
//!
//! With clipping enabled each per-sample gradient `g_i` is replaced by
//! `g_i * min(1, C / |g_i|)`. Because `g_i = loss'(x_i' w) x_i`, clipping
//! amounts to clamping the scalar derivative to `[-C/|x_i|, C/|x_i|]`, which
//! is still the derivative of a convex (Huber-like) potential. The solver
//! minimizes that potential exactly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::ModelVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `(y - t)^2`
    Squared,
    /// Cross-entropy of `sigmoid(t)` against a label in {0, 1}.
    Logistic,
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl LossKind {
    pub fn value(self, t: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => (y - t) * (y - t),
            LossKind::Logistic => softplus(t) - y * t,
        }
    }

    pub fn derivative(self, t: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => 2.0 * (t - y),
            LossKind::Logistic => sigmoid(t) - y,
        }
    }

    pub fn curvature(self, t: f64, _y: f64) -> f64 {
        match self {
            LossKind::Squared => 2.0,
            LossKind::Logistic => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
        }
    }

    /// Points where the derivative reaches `-c` and `+c`, if it ever does.
    fn breakpoints(self, y: f64, c: f64) -> (Option<f64>, Option<f64>) {
        match self {
            LossKind::Squared => (Some(y - c / 2.0), Some(y + c / 2.0)),
            LossKind::Logistic => {
                let lo = (c < y).then(|| logit(y - c));
                let hi = (c < 1.0 - y).then(|| logit(y + c));
                (lo, hi)
            }
        }
    }
}

/// Per-sample scalar loss, optionally with its derivative clamped to `±c`.
#[derive(Debug, Clone, Copy)]
struct SampleLoss {
    kind: LossKind,
    y: f64,
    lo: Option<f64>,
    hi: Option<f64>,
    c: f64,
}

impl SampleLoss {
    fn new(kind: LossKind, y: f64, x_norm: f64, clip: Option<f64>) -> Self {
        match clip {
            Some(bound) if x_norm > 0.0 => {
                let c = bound / x_norm;
                let (lo, hi) = kind.breakpoints(y, c);
                Self { kind, y, lo, hi, c }
            }
            _ => Self {
                kind,
                y,
                lo: None,
                hi: None,
                c: f64::INFINITY,
            },
        }
    }

    fn value(&self, t: f64) -> f64 {
        match (self.lo, self.hi) {
            (Some(lo), _) if t < lo => self.kind.value(lo, self.y) - self.c * (t - lo),
            (_, Some(hi)) if t > hi => self.kind.value(hi, self.y) + self.c * (t - hi),
            _ => self.kind.value(t, self.y),
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        match (self.lo, self.hi) {
            (Some(lo), _) if t < lo => -self.c,
            (_, Some(hi)) if t > hi => self.c,
            _ => self.kind.derivative(t, self.y).clamp(-self.c, self.c),
        }
    }

    fn curvature(&self, t: f64) -> f64 {
        match (self.lo, self.hi) {
            (Some(lo), _) if t < lo => 0.0,
            (_, Some(hi)) if t > hi => 0.0,
            _ => self.kind.curvature(t, self.y),
        }
    }
}

/// Per-sample loss gradient rescaled by `min(1, C / |g|)`.
pub fn clipped_sample_gradient(
    kind: LossKind,
    x: &DVector<f64>,
    y: f64,
    w: &ModelVector,
    bound: f64,
) -> ModelVector {
    let g = x * kind.derivative(x.dot(w), y);
    let norm = g.norm();
    if norm > bound {
        g * (bound / norm)
    } else {
        g
    }
}

/// Gradient of `(1/D) sum_i loss_i + reg |w|^2`, with per-sample clipping
/// when `clip` is set.
pub fn local_gradient(
    data: &Dataset,
    w: &ModelVector,
    kind: LossKind,
    reg: f64,
    clip: Option<f64>,
) -> ModelVector {
    let t = &data.x * w;
    let d = data.len() as f64;
    let h = DVector::from_iterator(
        data.len(),
        (0..data.len()).map(|i| {
            let x_norm = data.x.row(i).norm();
            SampleLoss::new(kind, data.y[i], x_norm, clip).derivative(t[i]) / d
        }),
    );
    data.x.tr_mul(&h) + w * (2.0 * reg)
}

/// One instance of the client primal subproblem.
#[derive(Debug, Clone, Copy)]
pub struct ProxProblem<'a> {
    pub dataset: &'a Dataset,
    pub dual: &'a ModelVector,
    pub anchor: &'a ModelVector,
    pub rho: f64,
    /// `lambda / |C_s|`
    pub reg: f64,
    /// `C_k`
    pub clip_bound: f64,
}

impl ProxProblem<'_> {
    fn check(&self) -> Result<()> {
        let d = self.dataset.dim();
        if self.dual.len() != d || self.anchor.len() != d {
            return Err(Error::Argument(format!(
                "dimension mismatch: data {d}, dual {}, anchor {}",
                self.dual.len(),
                self.anchor.len()
            )));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Argument(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.reg >= 0.0) {
            return Err(Error::Argument(format!("regularization must be >= 0, got {}", self.reg)));
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::Argument(format!(
                "clip bound must be positive, got {}",
                self.clip_bound
            )));
        }
        Ok(())
    }

    /// Full objective, with the clipped potential when `clip` is set.
    pub fn objective(&self, w: &ModelVector, kind: LossKind, clip: bool) -> f64 {
        let clip = clip.then_some(self.clip_bound);
        let t = &self.dataset.x * w;
        let data_term: f64 = (0..self.dataset.len())
            .map(|i| {
                let x_norm = self.dataset.x.row(i).norm();
                SampleLoss::new(kind, self.dataset.y[i], x_norm, clip).value(t[i])
            })
            .sum::<f64>()
            / self.dataset.len() as f64;
        let diff = w - self.anchor;
        data_term + self.reg * w.norm_squared() - self.dual.dot(&diff)
            + 0.5 * self.rho * diff.norm_squared()
    }

    pub fn gradient(&self, w: &ModelVector, kind: LossKind, clip: bool) -> ModelVector {
        let g = local_gradient(
            self.dataset,
            w,
            kind,
            self.reg,
            clip.then_some(self.clip_bound),
        );
        g - self.dual + (w - self.anchor) * self.rho
    }
}

/// Closed-form minimizer for the squared loss:
/// `((2/D) X'X + (2 reg + rho) I) w = (2/D) X'y + dual + rho * anchor`.
pub fn ridge_primal_solve(p: &ProxProblem<'_>) -> Result<ModelVector> {
    p.check()?;
    Ok(RidgeSolver::new(p.dataset, p.reg, p.rho)?.solve(p.dual, p.anchor))
}

/// Cached factorization for repeated ridge prox solves on fixed data.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    factor: Cholesky<f64, Dyn>,
    data_rhs: DVector<f64>,
    rho: f64,
}

impl RidgeSolver {
    pub fn new(data: &Dataset, reg: f64, rho: f64) -> Result<Self> {
        let scale = 2.0 / data.len() as f64;
        let d = data.dim();
        let mut system = data.x.tr_mul(&data.x) * scale;
        for i in 0..d {
            system[(i, i)] += 2.0 * reg + rho;
        }
        let factor = system
            .cholesky()
            .ok_or_else(|| Error::Argument("ridge system is not positive definite".into()))?;
        let data_rhs = data.x.tr_mul(&data.y) * scale;
        Ok(Self {
            factor,
            data_rhs,
            rho,
        })
    }

    pub fn solve(&self, dual: &ModelVector, anchor: &ModelVector) -> ModelVector {
        let rhs = &self.data_rhs + dual + anchor * self.rho;
        self.factor.solve(&rhs)
    }
}

/// Options for the iterative solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub clip: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
            clip: true,
        }
    }
}

/// Damped Newton on the (possibly clipped) prox objective.
///
/// The Hessian is `(1/D) X' S X + (2 reg + rho) I` with `D` typically far
/// below the dimension, so each step solves a `D x D` system through the
/// Woodbury identity. Steps are backtracked on the objective, or on the
/// gradient norm once objective changes fall below rounding.
pub fn newton_prox_solve(
    p: &ProxProblem<'_>,
    kind: LossKind,
    opts: &NewtonOptions,
    start: Option<&ModelVector>,
) -> Result<ModelVector> {
    p.check()?;
    if !(opts.tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let clip = opts.clip.then_some(p.clip_bound);
    let data = p.dataset;
    let n = data.len();
    let inv_n = 1.0 / n as f64;
    let shift = 2.0 * p.reg + p.rho;
    let losses: Vec<SampleLoss> = (0..n)
        .map(|i| SampleLoss::new(kind, data.y[i], data.x.row(i).norm(), clip))
        .collect();

    let objective = |w: &ModelVector| -> f64 {
        let t = &data.x * w;
        let fit: f64 = losses.iter().zip(t.iter()).map(|(l, &ti)| l.value(ti)).sum();
        let diff = w - p.anchor;
        fit * inv_n + p.reg * w.norm_squared() - p.dual.dot(&diff)
            + 0.5 * p.rho * diff.norm_squared()
    };
    let gradient = |w: &ModelVector, t: &DVector<f64>| -> ModelVector {
        let h = DVector::from_iterator(n, losses.iter().zip(t.iter()).map(|(l, &ti)| l.derivative(ti) * inv_n));
        data.x.tr_mul(&h) + w * (2.0 * p.reg) - p.dual + (w - p.anchor) * p.rho
    };

    let mut w = start.cloned().unwrap_or_else(|| p.anchor.clone());
    let mut t = &data.x * &w;
    let mut g = gradient(&w, &t);
    let mut f = objective(&w);
    // Relative stopping rule: rounding keeps the gradient from reaching a
    // fixed absolute level once the iterate is large.
    let tol = opts.tol * g.norm().max(1.0);
    for _ in 0..opts.max_iters {
        let g_norm = g.norm();
        if g_norm <= tol {
            return Ok(w);
        }
        // Woodbury: (shift I + U'U)^-1 g with U = diag(sqrt(s_i / D)) X.
        let weights: Vec<f64> = losses
            .iter()
            .zip(t.iter())
            .map(|(l, &ti)| (l.curvature(ti) * inv_n).sqrt())
            .collect();
        let mut u = data.x.clone();
        for (i, &wt) in weights.iter().enumerate() {
            u.row_mut(i).scale_mut(wt);
        }
        let ug = &u * &g;
        let mut small = &u * u.transpose();
        for i in 0..n {
            small[(i, i)] += shift;
        }
        let step = match small.cholesky() {
            Some(ch) => (&g - u.tr_mul(&ch.solve(&ug))) / shift,
            None => g.clone() / shift,
        };

        let slope = g.dot(&step);
        // Below this predicted decrease the objective cannot tell steps
        // apart, so candidates are judged by their gradient norm instead.
        let resolution = 64.0 * f64::EPSILON * (1.0 + f.abs());
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..40 {
            let cand = &w - &step * alpha;
            let fc = objective(&cand);
            let ok = if alpha * slope > resolution {
                fc < f - 1e-4 * alpha * slope
            } else {
                let tc = &data.x * &cand;
                gradient(&cand, &tc).norm() < g_norm
            };
            if ok {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let (next, fnext) = match accepted {
            Some(v) => v,
            None => {
                return Err(Error::NoConvergence {
                    iterations: opts.max_iters,
                    grad_norm: g_norm,
                    last_iterate: Box::new(w),
                })
            }
        };
        w = next;
        f = fnext;
        t = &data.x * &w;
        g = gradient(&w, &t);
    }
    let grad_norm = g.norm();
    if grad_norm <= tol {
        return Ok(w);
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        grad_norm,
        last_iterate: Box::new(w),
    })
}

/// Logistic prox solve with clipped per-sample gradients.
pub fn logistic_primal_solve(
    p: &ProxProblem<'_>,
    tol: f64,
    max_iters: usize,
) -> Result<ModelVector> {
    if !p.dataset.is_binary() {
        return Err(Error::Argument("logistic labels must be 0 or 1".into()));
    }
    newton_prox_solve(
        p,
        LossKind::Logistic,
        &NewtonOptions {
            tol,
            max_iters,
            clip: true,
        },
        None,
    )
}

/// Solver selection shared by every client in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub loss: LossKind,
    pub clip_in_solver: bool,
    pub tol: f64,
    pub max_iters: usize,
}

/// Per-client solver with whatever can be cached across rounds.
#[derive(Debug, Clone)]
pub enum ClientSolver {
    Ridge(RidgeSolver),
    Newton(NewtonOptions, LossKind),
}

impl ClientSolver {
    pub fn new(settings: &SolverSettings, data: &Dataset, reg: f64, rho: f64) -> Result<Self> {
        if settings.loss == LossKind::Squared && !settings.clip_in_solver {
            Ok(Self::Ridge(RidgeSolver::new(data, reg, rho)?))
        } else {
            Ok(Self::Newton(
                NewtonOptions {
                    tol: settings.tol,
                    max_iters: settings.max_iters,
                    clip: settings.clip_in_solver,
                },
                settings.loss,
            ))
        }
    }

    pub fn solve(&self, p: &ProxProblem<'_>, warm: Option<&ModelVector>) -> Result<ModelVector> {
        match self {
            Self::Ridge(r) => Ok(r.solve(p.dual, p.anchor)),
            Self::Newton(opts, kind) => newton_prox_solve(p, *kind, opts, warm),
        }
    }
}

/// Dense helper used by tests and oracles: `X' diag(v) X`.
pub fn weighted_gram(x: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (i, &vi) in v.iter().enumerate() {
        scaled.row_mut(i).scale_mut(vi);
    }
    x.tr_mul(&scaled)
}
