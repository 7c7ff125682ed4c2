//! Outer training loops: a generic one for any [`BilevelProblem`] and the
//! GNN loop with Gumbel noise, dataset renewal and logging.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{
    inner_train, neumann_hypergradient, norm, BilevelProblem, Eval, InnerOptimizer, OptimizerState,
    SecondOrder,
};
use crate::autodiff::ParamVector;
use crate::channel::{sample_rng, ChannelSet, Dataset};
use crate::error::{invalid, Error, Result};
use crate::gnn::{ForwardOptions, Gnn, GumbelNoise, Mode, Sampling};
use crate::rates::{sum_rate, training_loss, LossConfig};

/// Settings of the bi-level training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Inner descent steps `T` per outer iteration.
    pub inner_steps: usize,
    /// Inner learning rate `κ`.
    pub inner_lr: f64,
    /// Initial outer learning rate.
    pub outer_lr: f64,
    /// Outer step at iteration `u` is `outer_lr / (1 + outer_decay · u)`.
    pub outer_decay: f64,
    /// Neumann terms `N_G`.
    pub neumann_terms: usize,
    /// Finite-difference step for Hessian products; `None` picks one.
    pub fd_eps: Option<f64>,
    /// Neumann step `κ`; `None` uses the inner learning rate.
    pub neumann_kappa: Option<f64>,
    pub optimizer: InnerOptimizer,
    pub loss: LossConfig,
    /// Temperature reached at the last epoch (linear schedule from the
    /// model temperature); `None` keeps it constant.
    pub s_temp_final: Option<f64>,
    /// Redraw the training and validation sets at the start of every epoch
    /// after the first.
    pub renew_each_epoch: bool,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            inner_steps: 5,
            inner_lr: 1e-3,
            outer_lr: 3e-3,
            outer_decay: 0.01,
            neumann_terms: 20,
            fd_eps: None,
            neumann_kappa: None,
            optimizer: InnerOptimizer::Sgd,
            loss: LossConfig::default(),
            s_temp_final: None,
            renew_each_epoch: true,
            mode: Mode::Auto,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(invalid("inner_steps", "must be at least 1"));
        }
        if !(self.inner_lr >= 0.0) || !(self.outer_lr >= 0.0) || !(self.outer_decay >= 0.0) {
            return Err(invalid(
                "inner_lr",
                "learning rates and decay must be non-negative",
            ));
        }
        if let Some(k) = self.neumann_kappa {
            if !(k > 0.0) {
                return Err(invalid("neumann_kappa", "must be positive"));
            }
        }
        if let Some(s) = self.s_temp_final {
            if !(s > 0.0) {
                return Err(invalid("s_temp_final", "temperature must be positive"));
            }
        }
        Ok(())
    }

    pub fn outer_step(&self, iteration: usize) -> f64 {
        self.outer_lr / (1.0 + self.outer_decay * iteration as f64)
    }

    fn second_order(&self) -> SecondOrder {
        SecondOrder {
            kappa: self.neumann_kappa.unwrap_or(self.inner_lr),
            eps: self.fd_eps,
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    /// Mean inner loss over the `T` steps.
    pub train_loss: f64,
    /// Validation minibatch loss at the inner iterate.
    pub val_loss: f64,
    pub hypergrad_norm: f64,
    pub outer_lr: f64,
    /// Deterministic architecture implied by `α` (logit > 0).
    pub active_layers: usize,
    pub active_neurons: usize,
    pub bits: u64,
}

/// End-of-epoch evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Deterministic loss on the monitor set.
    pub val_loss: f64,
    pub val_sum_rate: f64,
    pub bits: u64,
    pub active_layers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,iteration,train_loss,val_loss,hypergrad_norm,outer_lr,active_layers,active_neurons,bits\n",
        );
        for r in &self.iterations {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.iteration,
                r.train_loss,
                r.val_loss,
                r.hypergrad_norm,
                r.outer_lr,
                r.active_layers,
                r.active_neurons,
                r.bits
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Epoch validation losses averaged over a trailing window.
    pub fn smoothed_val_loss(&self, window: usize) -> Vec<f64> {
        let v: Vec<f64> = self.epochs.iter().map(|e| e.val_loss).collect();
        moving_average(&v, window)
    }
}

/// Trailing moving average; the first `window − 1` entries average what is
/// available.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..v.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            v[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Result of a generic outer loop.
#[derive(Debug, Clone)]
pub struct OuterRun {
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub hypergrad_norms: Vec<f64>,
}

/// Alternates `T` warm-started inner steps with a Neumann hypergradient
/// step on `α`, for `iterations` outer iterations.
pub fn run_outer<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta0: &[f64],
    alpha0: &[f64],
    iterations: usize,
    cfg: &TrainConfig,
) -> Result<OuterRun> {
    cfg.validate()?;
    let mut theta = theta0.to_vec();
    let mut alpha = alpha0.to_vec();
    let mut opt = OptimizerState::new(cfg.optimizer, theta.len());
    let nv = problem.val_batches().max(1);
    let mut run = OuterRun {
        theta: Vec::new(),
        alpha: Vec::new(),
        val_losses: Vec::with_capacity(iterations),
        hypergrad_norms: Vec::with_capacity(iterations),
    };
    for u in 0..iterations {
        let inner = inner_train(
            problem,
            &theta,
            &alpha,
            cfg.inner_steps,
            cfg.inner_lr,
            u * cfg.inner_steps,
            &mut opt,
        )?;
        theta = inner.theta;
        let hg = neumann_hypergradient(
            problem,
            &theta,
            &alpha,
            inner.last_batch,
            u % nv,
            cfg.neumann_terms,
            cfg.second_order(),
        )?;
        let step = cfg.outer_step(u);
        alpha
            .iter_mut()
            .zip(&hg.grad)
            .for_each(|(a, g)| *a -= step * g);
        run.val_losses.push(hg.val_loss);
        run.hypergrad_norms.push(norm(&hg.grad));
    }
    run.theta = theta;
    run.alpha = alpha;
    Ok(run)
}

/// The GNN training problem for one outer iteration: Gumbel noise is fixed
/// per (iteration, minibatch) so that repeated evaluations inside one
/// hypergradient see the same sample.
struct GnnProblem<'a> {
    model: &'a Gnn,
    train: &'a Dataset,
    val: &'a Dataset,
    loss: LossConfig,
    opts: ForwardOptions,
    noise_seed: u64,
}

impl GnnProblem<'_> {
    fn noise(&self, stream: u64, samples: usize) -> GumbelNoise {
        self.model
            .sample_noise(&mut sample_rng(self.noise_seed, stream), samples)
    }

    fn eval(&self, set: &[ChannelSet], stream: u64, theta: &[f64], alpha: &[f64]) -> Result<Eval> {
        let th = ParamVector::from_flat(self.model.theta_layout().clone(), theta.to_vec())?;
        let al = ParamVector::from_flat(self.model.alpha_layout().clone(), alpha.to_vec())?;
        let batch: Vec<&ChannelSet> = set.iter().collect();
        let noise = self.noise(stream, batch.len());
        let e =
            self.model
                .loss_and_grads(&th, &al, &batch, &self.opts, Some(&noise), &self.loss)?;
        Ok(Eval {
            value: e.loss,
            grad_theta: e.grad_theta,
            grad_alpha: e.grad_alpha,
        })
    }
}

impl BilevelProblem for GnnProblem<'_> {
    fn train_batches(&self) -> usize {
        self.train.num_batches()
    }

    fn val_batches(&self) -> usize {
        self.val.num_batches()
    }

    fn train_eval(&self, theta: &[f64], alpha: &[f64], batch: usize) -> Result<Eval> {
        self.eval(&self.train.batches[batch], 2 * batch as u64, theta, alpha)
    }

    fn val_eval(&self, theta: &[f64], alpha: &[f64], batch: usize) -> Result<Eval> {
        self.eval(&self.val.batches[batch], 2 * batch as u64 + 1, theta, alpha)
    }
}

/// Deterministic evaluation: hard decisions with zero noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub loss: f64,
    pub sum_rate: f64,
    /// Fraction of samples meeting every constraint.
    pub feasible_fraction: f64,
    pub bits: u64,
    pub active_layers: usize,
    pub active_neurons: usize,
}

/// Mean loss and sum rate of a model over `data` with hard, noise-free
/// decisions.
pub fn evaluate_model(
    model: &Gnn,
    theta: &ParamVector,
    alpha: &ParamVector,
    mode: Mode,
    data: &Dataset,
    loss: &LossConfig,
) -> Result<EvalSummary> {
    let opts = ForwardOptions::new(mode, Sampling::Hard, model.cfg.s_temp);
    let (mut tot_loss, mut tot_rate, mut feasible, mut n) = (0.0, 0.0, 0usize, 0usize);
    let mut summary = EvalSummary {
        loss: 0.0,
        sum_rate: 0.0,
        feasible_fraction: 0.0,
        bits: 0,
        active_layers: 0,
        active_neurons: 0,
    };
    for batch in &data.batches {
        let refs: Vec<&ChannelSet> = batch.iter().collect();
        let (decisions, trace) = model.forward(theta, alpha, &refs, &opts, None)?;
        summary.bits = trace.bits;
        summary.active_layers = trace.active_layers;
        summary.active_neurons = active_neurons(&trace.outer_mask, &trace.inner_masks);
        for (d, ch) in decisions.iter().zip(batch) {
            let report = sum_rate(d, ch, &model.net)?;
            tot_loss += training_loss(&report, loss);
            tot_rate += report.sum_rate;
            feasible += report.feasibility.all_ok() as usize;
            n += 1;
        }
    }
    if n == 0 {
        return Err(invalid("data", "evaluation set is empty"));
    }
    summary.loss = tot_loss / n as f64;
    summary.sum_rate = tot_rate / n as f64;
    summary.feasible_fraction = feasible as f64 / n as f64;
    Ok(summary)
}

fn active_neurons(outer: &[f64], inner: &[Vec<f64>]) -> usize {
    outer
        .iter()
        .zip(inner)
        .filter(|(o, _)| **o > 0.5)
        .map(|(_, m)| m.iter().filter(|&&x| x > 0.5).count())
        .sum()
}

/// Output of [`train_gnn`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: ParamVector,
    pub alpha: ParamVector,
    pub log: TrainLog,
    /// Set when training stopped on a non-finite value; `theta` and `alpha`
    /// are then the last finite iterate.
    pub diverged: Option<String>,
}

/// Bi-level training of a GNN. In fixed mode the hypergradient is skipped
/// and only `θ` is trained. `monitor` (the validation set when `None`) is
/// evaluated after every epoch.
pub fn train_gnn(
    model: &Gnn,
    theta0: &ParamVector,
    alpha0: &ParamVector,
    train: &Dataset,
    val: &Dataset,
    monitor: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.num_batches() == 0 || val.num_batches() == 0 || train.batch_size() == 0 {
        return Err(invalid(
            "datasets",
            "training and validation sets must be nonempty",
        ));
    }
    let mut theta = theta0.clone();
    let mut alpha = alpha0.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, theta.len());
    let mut renew_rng = sample_rng(cfg.seed, u64::MAX);
    let (mut train_set, mut val_set) = (train.clone(), val.clone());
    let mut log = TrainLog::default();
    let per_epoch = train.num_batches().div_ceil(cfg.inner_steps);
    let mut u = 0usize;
    let s0 = model.cfg.s_temp;
    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.renew_each_epoch {
            train_set = train_set.renew(&mut renew_rng)?;
            val_set = val_set.renew(&mut renew_rng)?;
        }
        let s_temp = match (cfg.s_temp_final, cfg.epochs) {
            (Some(sf), e) if e > 1 => s0 + (sf - s0) * epoch as f64 / (e - 1) as f64,
            _ => s0,
        };
        let problem = |noise_seed: u64| GnnProblem {
            model,
            train: &train_set,
            val: &val_set,
            loss: cfg.loss,
            opts: ForwardOptions::new(cfg.mode, Sampling::Soft, s_temp),
            noise_seed,
        };
        let mut epoch_loss = 0.0;
        for step in 0..per_epoch {
            let p = problem(sample_rng(cfg.seed, u as u64).next_u64());
            let outcome = outer_iteration(&p, &mut theta, &mut alpha, &mut opt, step, u, cfg);
            let rec = match outcome {
                Ok(r) => r,
                Err(e @ (Error::Diverged { .. } | Error::NonFinite { .. })) => {
                    warn!("training stopped at epoch {epoch}, iteration {u}: {e}");
                    return Ok(TrainOutcome {
                        theta,
                        alpha,
                        log,
                        diverged: Some(e.to_string()),
                    });
                }
                Err(e) => return Err(e),
            };
            epoch_loss += rec.0;
            let arch = arch_summary(model, &theta, &alpha, cfg.mode, &train_set)?;
            log.iterations.push(IterationRecord {
                epoch,
                iteration: u,
                train_loss: rec.0,
                val_loss: rec.1,
                hypergrad_norm: rec.2,
                outer_lr: cfg.outer_step(u),
                active_layers: arch.0,
                active_neurons: arch.1,
                bits: arch.2,
            });
            u += 1;
        }
        let ev = evaluate_model(
            model,
            &theta,
            &alpha,
            cfg.mode,
            monitor.unwrap_or(&val_set),
            &cfg.loss,
        )?;
        info!(
            "epoch {epoch}: val loss {:.4}, sum rate {:.4}, bits {}",
            ev.loss, ev.sum_rate, ev.bits
        );
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / per_epoch as f64,
            val_loss: ev.loss,
            val_sum_rate: ev.sum_rate,
            bits: ev.bits,
            active_layers: ev.active_layers,
        });
    }
    Ok(TrainOutcome {
        theta,
        alpha,
        log,
        diverged: None,
    })
}

/// One outer iteration; returns (mean inner loss, validation loss,
/// hypergradient norm). Parameters are only overwritten on success.
fn outer_iteration(
    p: &GnnProblem<'_>,
    theta: &mut ParamVector,
    alpha: &mut ParamVector,
    opt: &mut OptimizerState,
    step: usize,
    u: usize,
    cfg: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    let mut trial_opt = opt.clone();
    let inner = inner_train(
        p,
        theta.flat(),
        alpha.flat(),
        cfg.inner_steps,
        cfg.inner_lr,
        step * cfg.inner_steps,
        &mut trial_opt,
    )?;
    let mean_loss = inner.losses.iter().sum::<f64>() / inner.losses.len() as f64;
    let (val_loss, hg_norm, new_alpha) = match cfg.mode {
        Mode::Fixed => {
            let v = p.val_eval(&inner.theta, alpha.flat(), u % p.val_batches())?;
            (v.value, 0.0, None)
        }
        Mode::Auto => match neumann_hypergradient(
            p,
            &inner.theta,
            alpha.flat(),
            inner.last_batch,
            u % p.val_batches(),
            cfg.neumann_terms,
            cfg.second_order(),
        ) {
            Ok(hg) => {
                let lr = cfg.outer_step(u);
                let a: Vec<f64> = alpha
                    .flat()
                    .iter()
                    .zip(&hg.grad)
                    .map(|(a, g)| a - lr * g)
                    .collect();
                (hg.val_loss, norm(&hg.grad), Some(a))
            }
            Err(e @ Error::SpectralCondition { .. }) => {
                warn!("iteration {u}: architecture step skipped: {e}");
                let v = p.val_eval(&inner.theta, alpha.flat(), u % p.val_batches())?;
                (v.value, 0.0, None)
            }
            Err(e) => return Err(e),
        },
    };
    if !val_loss.is_finite() {
        return Err(Error::Diverged {
            iteration: u,
            reason: format!("validation loss is {val_loss}"),
        });
    }
    theta.flat_mut().copy_from_slice(&inner.theta);
    if let Some(a) = new_alpha {
        alpha.flat_mut().copy_from_slice(&a);
    }
    *opt = trial_opt;
    Ok((mean_loss, val_loss, hg_norm))
}

/// (active layers, active neurons, bits) of the deterministic architecture.
fn arch_summary(
    model: &Gnn,
    theta: &ParamVector,
    alpha: &ParamVector,
    mode: Mode,
    data: &Dataset,
) -> Result<(usize, usize, u64)> {
    let opts = ForwardOptions::new(mode, Sampling::Hard, model.cfg.s_temp);
    let first = [&data.batches[0][0]];
    let (_, trace) = model.forward(theta, alpha, &first, &opts, None)?;
    Ok((
        trace.active_layers,
        active_neurons(&trace.outer_mask, &trace.inner_masks),
        trace.bits,
    ))
}
