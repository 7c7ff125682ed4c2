//! Bi-level training: inner gradient descent on the weights `θ`, and
//! hypergradients of the validation loss with respect to the architecture
//! logits `α`.
//!
//! The Neumann estimator replaces the inverse inner Hessian by a truncated
//! series `κ Σ_n (I − κG)^n` applied through Hessian-vector products.
//! Forward-mode unrolling and truncated back-propagation through the inner
//! loop are kept as reference estimators.

mod toy;
mod train;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{hvp, mixed_vjp};
use crate::error::{invalid, Error, Result};

pub use toy::QuadraticToy;
pub use train::{
    evaluate_model, moving_average, run_outer, train_gnn, EpochRecord, EvalSummary,
    IterationRecord, OuterRun, TrainConfig, TrainLog, TrainOutcome,
};

/// Loss value and gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Eval {
    pub value: f64,
    pub grad_theta: Vec<f64>,
    pub grad_alpha: Vec<f64>,
}

/// A bi-level problem with minibatched inner (training) and outer
/// (validation) losses.
pub trait BilevelProblem: Sync {
    fn train_batches(&self) -> usize;
    fn val_batches(&self) -> usize;
    /// Training loss of minibatch `batch`.
    fn train_eval(&self, theta: &[f64], alpha: &[f64], batch: usize) -> Result<Eval>;
    /// Validation loss of minibatch `batch`.
    fn val_eval(&self, theta: &[f64], alpha: &[f64], batch: usize) -> Result<Eval>;
}

/// Neumann iterates grow by more than this factor before the series is
/// declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Inner-loop optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerOptimizer {
    /// `θ ← θ − κ ∇L`.
    #[default]
    Sgd,
    /// Adam with the usual bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl InnerOptimizer {
    pub fn adam() -> Self {
        InnerOptimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state carried across outer iterations.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: InnerOptimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: InnerOptimizer, len: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            InnerOptimizer::Sgd => axpy(theta, -lr, grad),
            InnerOptimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for j in 0..theta.len() {
                    self.m[j] = beta1 * self.m[j] + (1.0 - beta1) * grad[j];
                    self.v[j] = beta2 * self.v[j] + (1.0 - beta2) * grad[j] * grad[j];
                    theta[j] -= lr * (self.m[j] / c1) / ((self.v[j] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Result of [`inner_train`].
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub theta: Vec<f64>,
    /// Training loss before each step.
    pub losses: Vec<f64>,
    /// Minibatch used by the last step.
    pub last_batch: usize,
}

/// `T` descent steps on consecutive training minibatches starting at
/// `first_batch` (cycling).
pub fn inner_train<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta: &[f64],
    alpha: &[f64],
    steps: usize,
    lr: f64,
    first_batch: usize,
    opt: &mut OptimizerState,
) -> Result<InnerResult> {
    let mut th = theta.to_vec();
    let mut losses = Vec::with_capacity(steps);
    let nb = problem.train_batches().max(1);
    let mut last = first_batch % nb;
    for t in 0..steps {
        last = (first_batch + t) % nb;
        let e = problem.train_eval(&th, alpha, last)?;
        if !e.value.is_finite() || e.grad_theta.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: t,
                reason: format!("inner loss is {} on minibatch {last}", e.value),
            });
        }
        losses.push(e.value);
        opt.step(&mut th, &e.grad_theta, lr);
    }
    Ok(InnerResult {
        theta: th,
        losses,
        last_batch: last,
    })
}

/// Applies the truncated Neumann series: returns `Σ_{n=0}^{N} (I − κG)^n v0`
/// where `apply_g(v) = G v`.
pub fn neumann_series<F>(apply_g: F, v0: &[f64], kappa: f64, terms: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let base = norm(v0);
    let mut v = v0.to_vec();
    let mut s = v0.to_vec();
    for _ in 0..terms {
        let gv = apply_g(&v)?;
        axpy(&mut v, -kappa, &gv);
        let growth = norm(&v) / base.max(f64::MIN_POSITIVE);
        if base > 0.0 && (growth > DIVERGENCE_LIMIT || !growth.is_finite()) {
            return Err(Error::SpectralCondition {
                growth,
                limit: DIVERGENCE_LIMIT,
            });
        }
        axpy(&mut s, 1.0, &v);
    }
    Ok(s)
}

/// Spectral norm of `I − κG`.
pub fn contraction_norm(g: &DMatrix<f64>, kappa: f64) -> f64 {
    let n = g.nrows();
    let m = DMatrix::<f64>::identity(n, n) - g * kappa;
    m.singular_values().max()
}

/// `κ Σ_{n=0}^{N} (I − κG)^n`, an approximation of `G^{-1}`. Fails when
/// `‖I − κG‖ ≥ 1`, where the series does not converge.
pub fn neumann_inverse(g: &DMatrix<f64>, kappa: f64, terms: usize) -> Result<DMatrix<f64>> {
    if g.nrows() != g.ncols() {
        return Err(Error::DimensionMismatch("G must be square".into()));
    }
    let c = contraction_norm(g, kappa);
    if c >= 1.0 {
        return Err(Error::ContractionViolated { norm: c });
    }
    let n = g.nrows();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = neumann_series(
            |v| {
                let x = g * nalgebra::DVector::from_column_slice(v);
                Ok(x.as_slice().to_vec())
            },
            &e,
            kappa,
            terms,
        )?;
        for i in 0..n {
            out[(i, j)] = kappa * col[i];
        }
    }
    Ok(out)
}

/// Hypergradient estimate and diagnostics.
#[derive(Debug, Clone)]
pub struct Hypergradient {
    pub grad: Vec<f64>,
    /// Validation loss at `θ*`.
    pub val_loss: f64,
    /// The direct term `∂L_v/∂α`.
    pub direct: Vec<f64>,
}

/// Second-order settings of the hypergradient estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrder {
    /// Inner learning rate `κ` used in the series.
    pub kappa: f64,
    /// Finite-difference step; `None` uses the default.
    pub eps: Option<f64>,
}

/// Stochastic Neumann hypergradient at `θ*` for training minibatch
/// `train_batch` and validation minibatch `val_batch`.
pub fn neumann_hypergradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta_star: &[f64],
    alpha: &[f64],
    train_batch: usize,
    val_batch: usize,
    terms: usize,
    so: SecondOrder,
) -> Result<Hypergradient> {
    if !(so.kappa > 0.0) {
        return Err(invalid("kappa", "must be positive"));
    }
    let v = problem.val_eval(theta_star, alpha, val_batch)?;
    let grad_theta = |th: &[f64]| Ok(problem.train_eval(th, alpha, train_batch)?.grad_theta);
    let s = neumann_series(
        |x| hvp(grad_theta, theta_star, x, so.eps),
        &v.grad_theta,
        so.kappa,
        terms,
    )?;
    let grad_alpha = |th: &[f64]| Ok(problem.train_eval(th, alpha, train_batch)?.grad_alpha);
    let mixed = mixed_vjp(grad_alpha, theta_star, &s, so.eps)?;
    let mut grad = v.grad_alpha.clone();
    axpy(&mut grad, -so.kappa, &mixed);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            op: "neumann_hypergradient",
            node: 0,
        });
    }
    Ok(Hypergradient {
        grad,
        val_loss: v.value,
        direct: v.grad_alpha,
    })
}

/// Largest `T · |θ|` trajectory the truncated estimator stores, and largest
/// `|θ| · |α|` Jacobian the unrolled estimator carries.
pub const UNROLL_MEMORY_LIMIT: usize = 20_000_000;

/// Back-propagation through the last `tau` of `steps` SGD steps started at
/// `theta0` (minibatches cycle from 0). `tau = steps` is full unrolling.
pub fn truncated_hypergradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta0: &[f64],
    alpha: &[f64],
    steps: usize,
    tau: usize,
    val_batch: usize,
    so: SecondOrder,
) -> Result<Hypergradient> {
    if tau > steps {
        return Err(invalid(
            "tau",
            format!("{tau} exceeds the {steps} inner steps"),
        ));
    }
    if steps.saturating_mul(theta0.len()) > UNROLL_MEMORY_LIMIT {
        return Err(Error::UnrollTooLong(steps));
    }
    let nb = problem.train_batches().max(1);
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(theta0.to_vec());
    for t in 0..steps {
        let e = problem.train_eval(&traj[t], alpha, t % nb)?;
        let mut next = traj[t].clone();
        axpy(&mut next, -so.kappa, &e.grad_theta);
        traj.push(next);
    }
    let v = problem.val_eval(&traj[steps], alpha, val_batch)?;
    let mut g = v.grad_theta.clone();
    let mut grad = v.grad_alpha.clone();
    for t in (steps - tau..steps).rev() {
        let batch = t % nb;
        let th = &traj[t];
        let ga = |x: &[f64]| Ok(problem.train_eval(x, alpha, batch)?.grad_alpha);
        let gt = |x: &[f64]| Ok(problem.train_eval(x, alpha, batch)?.grad_theta);
        let mixed = mixed_vjp(ga, th, &g, so.eps)?;
        axpy(&mut grad, -so.kappa, &mixed);
        let hg = hvp(gt, th, &g, so.eps)?;
        axpy(&mut g, -so.kappa, &hg);
    }
    Ok(Hypergradient {
        grad,
        val_loss: v.value,
        direct: v.grad_alpha,
    })
}

/// Derivative of `θ_T` after `steps` SGD steps, propagated forward in `α`:
/// `J_{t+1} = J_t − κ (∇²_θθ L J_t + ∇²_θα L)` with one joint directional
/// derivative per column of `J`. Shares no code path with the reverse-mode
/// estimators, so the two can check each other.
pub fn unrolled_hypergradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta0: &[f64],
    alpha: &[f64],
    steps: usize,
    val_batch: usize,
    so: SecondOrder,
) -> Result<Hypergradient> {
    let (n, p) = (theta0.len(), alpha.len());
    if n.saturating_mul(p) > UNROLL_MEMORY_LIMIT {
        return Err(Error::UnrollTooLong(steps));
    }
    let nb = problem.train_batches().max(1);
    let mut theta = theta0.to_vec();
    // Column j holds dθ_t/dα_j.
    let mut jac = vec![vec![0.0; n]; p];
    let mut joint = theta.clone();
    joint.extend_from_slice(alpha);
    for t in 0..steps {
        let batch = t % nb;
        let e = problem.train_eval(&theta, alpha, batch)?;
        joint[..n].copy_from_slice(&theta);
        let gt = |z: &[f64]| Ok(problem.train_eval(&z[..n], &z[n..], batch)?.grad_theta);
        for (j, col) in jac.iter_mut().enumerate() {
            let mut dir = col.clone();
            dir.resize(n + p, 0.0);
            dir[n + j] = 1.0;
            let d = hvp(gt, &joint, &dir, so.eps)?;
            axpy(col, -so.kappa, &d);
        }
        axpy(&mut theta, -so.kappa, &e.grad_theta);
    }
    let v = problem.val_eval(&theta, alpha, val_batch)?;
    let mut grad = v.grad_alpha.clone();
    for (g, col) in grad.iter_mut().zip(&jac) {
        *g += col
            .iter()
            .zip(&v.grad_theta)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            op: "unrolled_hypergradient",
            node: 0,
        });
    }
    Ok(Hypergradient {
        grad,
        val_loss: v.value,
        direct: v.grad_alpha,
    })
}
