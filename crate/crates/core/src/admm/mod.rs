//! Optimization benchmarks: distributed consensus ADMM over ICI bounds and
//! centralized ADMM, both on the MMSE reformulation with convexified
//! interference.
//!
//! Every iteration refreshes the MMSE auxiliaries `(a, c)`, then solves two
//! blocks per BS: `{β}` (a weighted projection onto a polytope) and
//! `{Γ, W, β̃, ξ}` (projected gradient ascent, with `Γ_k` eliminated as a
//! soft minimum of `f_ik / β_ik`, which keeps `β_ik Γ_k ≤ f_ik` satisfied).

mod blocks;
mod model;
mod oracle;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{debug, warn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::channel::{sample_rng, ChannelSet, NetworkConfig};
use crate::error::{invalid, Result};
use crate::rates::{sum_rate, Feasibility, SchedulingDecision};
use blocks::{maximize, weighted_projection, Halfspace};
use model::{beam, dot, exact_ici, ici_out, Block2, IciSource};

pub use model::{convex_coef, convex_intf, mmse_bound, mmse_update};
pub use oracle::{brute_force, cluster_patterns, joint_patterns, optimize_beamformers, BruteForce};

/// Bits of one real number exchanged between BSs.
pub const BITS_PER_REAL: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    /// Penalty parameter `ρ` (the augmented terms are weighted by `1/(2ρ)`).
    pub rho: f64,
    /// Residual balancing: shrink `ρ` when primal residuals dominate.
    pub adaptive_rho: bool,
    /// Per-iteration factor on `ρ` (below 1 tightens every penalty over
    /// time), floored at `rho_min`.
    pub rho_decay: f64,
    pub rho_min: f64,
    /// Start the distributed ICI bounds at zero instead of the leakage of
    /// the matched filters, so the initial beamforming pass avoids ICI.
    pub zero_ici_init: bool,
    /// Independent runs from different starting SIC patterns; the best
    /// rounded decision is kept.
    pub restarts: usize,
    /// Seed of the random starting patterns.
    pub seed: u64,
    pub max_iters: usize,
    pub min_iters: usize,
    pub tol_consensus: f64,
    pub tol_binary: f64,
    /// Relative change of `ΣΓ` below which the run may stop.
    pub tol_objective: f64,
    /// Projected-gradient steps per block solve.
    pub inner_steps: usize,
    pub inner_tol: f64,
    /// Temperature of the soft minimum that eliminates `Γ`.
    pub temperature: f64,
    /// Quadratic penalty weight on `max(0, R^min − Γ)`.
    pub rate_penalty: f64,
    /// Zero-SIC MMSE rounds used to initialize `W` and `Γ`.
    pub init_rounds: usize,
    /// MMSE rounds re-optimizing `W` for the rounded `β` (0 keeps the ADMM
    /// beamformers).
    pub polish_rounds: usize,
    /// MMSE rounds of the fixed-pattern beamforming solver.
    pub beamforming_rounds: usize,
    /// `β_ik` at or below this value do not constrain `Γ_k`.
    pub beta_floor: f64,
    pub dykstra_cycles: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            adaptive_rho: false,
            rho_decay: 0.97,
            rho_min: 1e-3,
            zero_ici_init: true,
            restarts: 8,
            seed: 0,
            max_iters: 200,
            min_iters: 2,
            tol_consensus: 1e-3,
            tol_binary: 1e-2,
            tol_objective: 1e-4,
            inner_steps: 2000,
            inner_tol: 1e-10,
            temperature: 0.01,
            rate_penalty: 10.0,
            init_rounds: 20,
            polish_rounds: 0,
            beamforming_rounds: 30,
            beta_floor: 1e-6,
            dykstra_cycles: 2000,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(invalid("rho", "must be positive"));
        }
        if !(self.rho_decay > 0.0 && self.rho_decay <= 1.0) {
            return Err(invalid("rho_decay", "must be in (0, 1]"));
        }
        if !(self.rho_min > 0.0) {
            return Err(invalid("rho_min", "must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid("temperature", "must be positive"));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Trajectories and outcome of one ADMM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmReport {
    /// Iterations of the kept restart.
    pub iterations: usize,
    /// Iterations summed over every restart; `bits` is this times the
    /// per-iteration volume in the distributed variant.
    pub total_iterations: usize,
    pub converged: bool,
    /// `‖ξ − ξ̂‖` over all local copies.
    pub consensus_residual: Vec<f64>,
    /// `‖β + β̃ − 1‖`.
    pub binary_sum_residual: Vec<f64>,
    /// `‖β ⊙ β̃‖`.
    pub binary_product_residual: Vec<f64>,
    /// `ΣΓ` after each iteration.
    pub objective: Vec<f64>,
    pub rho: Vec<f64>,
    /// Mutual-SIC conflicts resolved while rounding.
    pub rounding_repairs: usize,
    /// Sum rate of the rounded decision.
    pub sum_rate: f64,
    pub feasibility: Feasibility,
    pub bits: u64,
    pub runtime_s: f64,
}

impl AdmmReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,consensus,binary_sum,binary_product,objective,rho\n");
        for t in 0..self.iterations {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                t + 1,
                self.consensus_residual[t],
                self.binary_sum_residual[t],
                self.binary_product_residual[t],
                self.objective[t],
                self.rho[t]
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
}

/// Bits exchanged per distributed iteration: every ordered BS pair carries
/// `2K` reals.
pub fn distributed_bits_per_iteration(num_bs: usize, users: usize) -> u64 {
    (num_bs * num_bs.saturating_sub(1) * 2 * users) as u64 * BITS_PER_REAL
}

/// CSI uplink `M · (M K N_T) · 64` plus decision downlink
/// `M · (N_T K · 64 + 2 K² · 32)`.
pub fn centralized_bits(num_bs: usize, users: usize, antennas: usize) -> u64 {
    let (m, k, nt) = (num_bs as u64, users as u64, antennas as u64);
    m * (m * k * nt) * 64 + m * (nt * k * 64 + 2 * k * k * 32)
}

/// `ξ̂_mn = ½ [ξ^m_mn + ξ^n_mn + ρ (ν^m_mn + ν^n_mn)]`.
pub fn update_global(xi_m: &[f64], xi_n: &[f64], nu_m: &[f64], nu_n: &[f64], rho: f64) -> Vec<f64> {
    (0..xi_m.len())
        .map(|k| 0.5 * (xi_m[k] + xi_n[k] + rho * (nu_m[k] + nu_n[k])))
        .collect()
}

/// Dual ascent: `λ += (β + β̃ − 1)/ρ`, `λ̃ += β̃ ⊙ β / ρ`, `ν += (ξ − ξ̂)/ρ`.
/// Diagonal entries are left alone.
#[allow(clippy::too_many_arguments)]
pub fn update_duals(
    users: usize,
    beta: &[f64],
    bt: &[f64],
    xi: &[f64],
    xi_hat: &[f64],
    rho: f64,
    lambda: &mut [f64],
    lambda_t: &mut [f64],
    nu: &mut [f64],
) {
    for i in 0..users {
        for k in (0..users).filter(|&k| k != i) {
            let j = i * users + k;
            lambda[j] += (beta[j] + bt[j] - 1.0) / rho;
            lambda_t[j] += bt[j] * beta[j] / rho;
        }
    }
    for (n, (x, xh)) in nu.iter_mut().zip(xi.iter().zip(xi_hat)) {
        *n += (x - xh) / rho;
    }
}

/// Rounds `β` at 0.5 and, where both `β_ik` and `β_ki` round to 1, keeps
/// the larger one (the lower index on ties). Returns the number of repairs.
pub fn round_beta(beta: &[f64], users: usize) -> (Vec<f64>, usize) {
    let mut out = vec![0.0; users * users];
    let mut repairs = 0;
    for i in 0..users {
        for k in (i + 1)..users {
            let (a, b) = (beta[i * users + k], beta[k * users + i]);
            match (a > 0.5, b > 0.5) {
                (true, true) => {
                    repairs += 1;
                    if a >= b {
                        out[i * users + k] = 1.0;
                    } else {
                        out[k * users + i] = 1.0;
                    }
                }
                (true, false) => out[i * users + k] = 1.0,
                (false, true) => out[k * users + i] = 1.0,
                _ => {}
            }
        }
    }
    (out, repairs)
}

/// Scaled matched filters splitting `P^max` equally among users.
pub fn matched_filters(ch: &ChannelSet, p_max: f64) -> Vec<Vec<Complex64>> {
    let (mm, kk, nt) = (ch.num_bs(), ch.users(), ch.antennas());
    let amp = (p_max / kk as f64).sqrt();
    (0..mm)
        .map(|m| {
            let mut w = Vec::with_capacity(kk * nt);
            for k in 0..kk {
                let h = ch.h(m, m, k);
                let n = h.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                w.extend(h.iter().map(|x| {
                    if n > 0.0 {
                        x.conj() * (amp / n)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                }));
            }
            w
        })
        .collect()
}

fn others(m: usize, num_bs: usize) -> impl Iterator<Item = usize> {
    (0..num_bs).filter(move |&n| n != m)
}

/// Position of BS `m` in the neighbour list of BS `n`.
fn slot(n: usize, m: usize) -> usize {
    if m < n {
        m
    } else {
        m - 1
    }
}

fn complement(beta: &[f64], users: usize) -> Vec<f64> {
    (0..users * users)
        .map(|j| {
            if j / users == j % users {
                1.0
            } else {
                1.0 - beta[j]
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Topology {
    Distributed,
    Centralized,
}

/// Full ADMM state.
struct State {
    w: Vec<Vec<Complex64>>,
    gamma: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    bt: Vec<Vec<f64>>,
    /// ICI caused by BS `m`, indexed `(slot, k)`.
    xi_out: Vec<Vec<f64>>,
    /// ICI received by BS `m`, indexed `(slot, i)`.
    xi_in: Vec<Vec<f64>>,
    /// Global copies `ξ̂[m][slot(m, n)·K + k]` for the ICI of `m` at cell `n`.
    xi_hat: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    lambda_t: Vec<Vec<f64>>,
    nu_out: Vec<Vec<f64>>,
    nu_in: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    c: Vec<Vec<Complex64>>,
    rho: f64,
}

struct Runner<'a> {
    ch: &'a ChannelSet,
    cfg: &'a NetworkConfig,
    acfg: &'a AdmmConfig,
    topo: Topology,
}

impl<'a> Runner<'a> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.ch.num_bs(), self.ch.users(), self.ch.antennas())
    }

    /// Inter-cell interference assumed at every user.
    fn ici_view(&self, st: &State) -> Vec<Vec<f64>> {
        let (mm, kk, _) = self.dims();
        (0..mm)
            .map(|m| {
                (0..kk)
                    .map(|i| match self.topo {
                        Topology::Distributed => (0..mm - 1).map(|s| st.xi_in[m][s * kk + i]).sum(),
                        Topology::Centralized => exact_ici(self.ch, &st.w, m, i),
                    })
                    .collect()
            })
            .collect()
    }

    fn refresh_mmse(&self, st: &mut State) {
        let ici = self.ici_view(st);
        for m in 0..self.ch.num_bs() {
            let (a, c) = mmse_update(self.ch, &st.w[m], &st.bt[m], &ici[m], self.cfg.sigma2, m);
            st.a[m] = a;
            st.c[m] = c;
        }
    }

    fn block2<'s>(
        &'s self,
        st: &'s State,
        targets_in: &'s [Vec<f64>],
        targets_out: &'s [Vec<f64>],
        bss: Vec<usize>,
        free_bt: bool,
    ) -> Block2<'s> {
        Block2 {
            ch: self.ch,
            sigma2: self.cfg.sigma2,
            min_rate: self.cfg.min_rate,
            p_max: self.cfg.p_max(),
            bss,
            a: &st.a,
            c: &st.c,
            beta: &st.beta,
            lambda: &st.lambda,
            lambda_t: &st.lambda_t,
            rho: st.rho,
            ici: match self.topo {
                Topology::Distributed => IciSource::Copies {
                    targets_in,
                    targets_out,
                },
                Topology::Centralized => IciSource::Exact,
            },
            free_bt,
            temperature: self.acfg.temperature,
            rate_penalty: self.acfg.rate_penalty,
            beta_floor: self.acfg.beta_floor,
        }
    }

    /// Runs the `{Γ, W, β̃, ξ}` block on every BS (jointly when centralized).
    fn solve_block2(&self, st: &mut State, free_bt: bool) {
        let (mm, kk, _) = self.dims();
        let shifted = |x: &[f64], nu: &[f64]| -> Vec<f64> {
            x.iter().zip(nu).map(|(x, v)| x - st.rho * v).collect()
        };
        let targets_out: Vec<Vec<f64>> = (0..mm)
            .map(|m| shifted(&st.xi_hat[m], &st.nu_out[m]))
            .collect();
        let targets_in: Vec<Vec<f64>> = (0..mm)
            .map(|m| shifted(&self.xi_hat_in(st, m), &st.nu_in[m]))
            .collect();
        let groups: Vec<Vec<usize>> = match self.topo {
            Topology::Distributed => (0..mm).map(|m| vec![m]).collect(),
            Topology::Centralized => vec![(0..mm).collect()],
        };
        for bss in groups {
            let mut w = st.w.clone();
            let mut real: Vec<Vec<f64>> = st
                .bt
                .iter()
                .zip(&st.xi_in)
                .map(|(b, x)| b.iter().chain(x).copied().collect())
                .collect();
            let (gamma, ok) = {
                let b = self.block2(st, &targets_in, &targets_out, bss.clone(), free_bt);
                let r = maximize(
                    &b,
                    &mut w,
                    &mut real,
                    self.acfg.inner_steps,
                    self.acfg.inner_tol,
                );
                debug!(
                    "block 2 on {bss:?}: {:.6e} -> {:.6e} in {} steps",
                    r.start_value, r.eval.value, r.steps
                );
                (r.eval.gamma, r.steps < self.acfg.inner_steps)
            };
            if !ok {
                debug!("block solver hit its step limit; keeping the best iterate");
            }
            for &m in &bss {
                st.w[m] = std::mem::take(&mut w[m]);
                st.bt[m].copy_from_slice(&real[m][..kk * kk]);
                st.xi_in[m].copy_from_slice(&real[m][kk * kk..]);
                st.gamma[m] = gamma[m].clone();
                if self.topo == Topology::Distributed {
                    for (s, n) in others(m, mm).enumerate() {
                        for k in 0..kk {
                            let j = s * kk + k;
                            st.xi_out[m][j] =
                                ici_out(self.ch, &st.w[m], m, n, k).max(targets_out[m][j]);
                        }
                    }
                }
            }
        }
    }

    /// MMSE rounds with `β` held fixed at its current value and `β̃ = 1 − β`.
    fn beamforming_rounds(&self, st: &mut State, rounds: usize) {
        let (mm, kk, _) = self.dims();
        for m in 0..mm {
            st.bt[m] = complement(&st.beta[m], kk);
        }
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..rounds {
            self.refresh_mmse(st);
            self.solve_block2(st, false);
            let obj: f64 = st.gamma.iter().flatten().sum();
            if (obj - prev).abs() <= 1e-6 * (1.0 + obj.abs()) {
                break;
            }
            prev = obj;
        }
    }

    /// The `{β}` block of BS `m`: a weighted projection onto the box, the
    /// pair sums and the SIC bounds `β_ik Γ_k ≤ f_ik` linearized at the
    /// current MMSE auxiliaries.
    fn solve_block1(&self, st: &mut State, m: usize, ici: &[f64]) {
        let (kk, nt) = (self.ch.users(), self.ch.antennas());
        let rho = st.rho;
        let pairs: Vec<(usize, usize)> = (0..kk)
            .flat_map(|i| (0..kk).filter(move |&k| k != i).map(move |k| (i, k)))
            .collect();
        let var = |i: usize, k: usize| pairs.iter().position(|&p| p == (i, k)).expect("pair");
        let mut target = Vec::with_capacity(pairs.len());
        let mut weight = Vec::with_capacity(pairs.len());
        let mut hs = Vec::new();
        for (v, &(i, k)) in pairs.iter().enumerate() {
            let j = i * kk + k;
            let t = st.bt[m][j];
            target.push(
                (1.0 - t - rho * st.lambda[m][j] - t * rho * st.lambda_t[m][j]) / (1.0 + t * t),
            );
            weight.push((1.0 + t * t) / rho);
            hs.push(Halfspace {
                coef: vec![(v, 1.0)],
                rhs: 1.0,
            });
            hs.push(Halfspace {
                coef: vec![(v, -1.0)],
                rhs: 0.0,
            });
            if i < k {
                hs.push(Halfspace {
                    coef: vec![(v, 1.0), (var(k, i), 1.0)],
                    rhs: 1.0,
                });
            }
            let (a, c) = (st.a[m][j], st.c[m][j]);
            let z = dot(self.ch.h(m, m, i), beam(&st.w[m], k, nt));
            let intf = convex_intf(self.ch, &st.w[m], &st.bt[m], m, i, k, ici[i]);
            hs.push(Halfspace {
                coef: vec![(v, st.gamma[m][k])],
                rhs: mmse_bound(a, c, z, intf, self.cfg.sigma2),
            });
        }
        let x = weighted_projection(&target, &weight, &hs, self.acfg.dykstra_cycles, 1e-12);
        for (v, &(i, k)) in x.iter().zip(&pairs) {
            st.beta[m][i * kk + k] = v.clamp(0.0, 1.0);
        }
    }

    fn update_global(&self, st: &mut State) {
        let (mm, kk, _) = self.dims();
        for m in 0..mm {
            for n in others(m, mm) {
                let (s, r) = (slot(m, n), slot(n, m));
                let upd = update_global(
                    &st.xi_out[m][s * kk..(s + 1) * kk],
                    &st.xi_in[n][r * kk..(r + 1) * kk],
                    &st.nu_out[m][s * kk..(s + 1) * kk],
                    &st.nu_in[n][r * kk..(r + 1) * kk],
                    st.rho,
                );
                st.xi_hat[m][s * kk..(s + 1) * kk].copy_from_slice(&upd);
            }
        }
    }

    /// Global copy seen by the incoming slots of BS `m`.
    fn xi_hat_in(&self, st: &State, m: usize) -> Vec<f64> {
        let (mm, kk, _) = self.dims();
        if self.topo == Topology::Centralized {
            return Vec::new();
        }
        let mut v = vec![0.0; (mm - 1) * kk];
        for n in others(m, mm) {
            let (s, r) = (slot(m, n), slot(n, m));
            v[s * kk..(s + 1) * kk].copy_from_slice(&st.xi_hat[n][r * kk..(r + 1) * kk]);
        }
        v
    }

    fn update_duals(&self, st: &mut State) {
        let (mm, kk, _) = self.dims();
        for m in 0..mm {
            let hat_in = self.xi_hat_in(st, m);
            let mut xi = st.xi_out[m].clone();
            xi.extend_from_slice(&st.xi_in[m]);
            let mut hat = st.xi_hat[m].clone();
            hat.extend_from_slice(&hat_in);
            let mut nu = st.nu_out[m].clone();
            nu.extend_from_slice(&st.nu_in[m]);
            update_duals(
                kk,
                &st.beta[m],
                &st.bt[m],
                &xi,
                &hat,
                st.rho,
                &mut st.lambda[m],
                &mut st.lambda_t[m],
                &mut nu,
            );
            let split = st.nu_out[m].len();
            st.nu_out[m].copy_from_slice(&nu[..split]);
            st.nu_in[m].copy_from_slice(&nu[split..]);
        }
    }

    fn residuals(&self, st: &State) -> (f64, f64, f64) {
        let (mm, kk, _) = self.dims();
        let mut cons = 0.0;
        let (mut rs, mut rp) = (0.0, 0.0);
        for m in 0..mm {
            let hat_in = self.xi_hat_in(st, m);
            cons += st.xi_out[m]
                .iter()
                .zip(&st.xi_hat[m])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            cons += st.xi_in[m]
                .iter()
                .zip(&hat_in)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            for i in 0..kk {
                for k in (0..kk).filter(|&k| k != i) {
                    let j = i * kk + k;
                    rs += (st.beta[m][j] + st.bt[m][j] - 1.0).powi(2);
                    rp += (st.beta[m][j] * st.bt[m][j]).powi(2);
                }
            }
        }
        (cons.sqrt(), rs.sqrt(), rp.sqrt())
    }

    /// Starting SIC pattern of restart `r`: none, channel-gain order
    /// (stronger users decode weaker ones), then random patterns without
    /// mutual SIC.
    fn start_pattern(&self, r: usize) -> Vec<Vec<f64>> {
        let (mm, kk, _) = self.dims();
        let mut rng = sample_rng(self.acfg.seed, r as u64);
        (0..mm)
            .map(|m| {
                let mut b = vec![0.0; kk * kk];
                for i in 0..kk {
                    for k in (i + 1)..kk {
                        let choice = match r {
                            0 => 0,
                            1 if self.ch.data_gain(m, i) >= self.ch.data_gain(m, k) => 1,
                            1 => 2,
                            _ => rng.random_range(0..3),
                        };
                        match choice {
                            1 => b[i * kk + k] = 1.0,
                            2 => b[k * kk + i] = 1.0,
                            _ => {}
                        }
                    }
                }
                b
            })
            .collect()
    }

    fn init(&self, beta: Vec<Vec<f64>>) -> State {
        let (mm, kk, _) = self.dims();
        let w = matched_filters(self.ch, self.cfg.p_max());
        let nx = if self.topo == Topology::Distributed {
            (mm - 1) * kk
        } else {
            0
        };
        let mut st = State {
            gamma: vec![vec![0.0; kk]; mm],
            bt: beta.iter().map(|b| complement(b, kk)).collect(),
            beta,
            xi_out: vec![vec![0.0; nx]; mm],
            xi_in: vec![vec![0.0; nx]; mm],
            xi_hat: vec![vec![0.0; nx]; mm],
            lambda: vec![vec![0.0; kk * kk]; mm],
            lambda_t: vec![vec![0.0; kk * kk]; mm],
            nu_out: vec![vec![0.0; nx]; mm],
            nu_in: vec![vec![0.0; nx]; mm],
            a: vec![vec![1.0; kk * kk]; mm],
            c: vec![vec![Complex64::new(0.0, 0.0); kk * kk]; mm],
            rho: self.acfg.rho,
            w,
        };
        if !self.acfg.zero_ici_init {
            self.sync_xi(&mut st);
        }
        self.beamforming_rounds(&mut st, self.acfg.init_rounds);
        self.sync_xi(&mut st);
        st
    }

    /// Sets every ICI copy and global value to the true ICI.
    fn sync_xi(&self, st: &mut State) {
        if self.topo == Topology::Centralized {
            return;
        }
        let (mm, kk, _) = self.dims();
        for m in 0..mm {
            for n in others(m, mm) {
                let (s, r) = (slot(m, n), slot(n, m));
                for k in 0..kk {
                    let v = ici_out(self.ch, &st.w[m], m, n, k);
                    st.xi_out[m][s * kk + k] = v;
                    st.xi_hat[m][s * kk + k] = v;
                    st.xi_in[n][r * kk + k] = v;
                }
            }
        }
    }

    /// Runs every restart and keeps the best rounded decision. Bits and
    /// runtime cover all restarts.
    fn run(&self) -> Result<(SchedulingDecision, AdmmReport)> {
        self.acfg.validate()?;
        self.cfg.validate()?;
        let start = Instant::now();
        let mut best: Option<(SchedulingDecision, AdmmReport)> = None;
        let (mut bits, mut total) = (0, 0);
        for r in 0..self.acfg.restarts {
            let (d, rep) = self.run_from(self.start_pattern(r))?;
            bits += rep.bits;
            total += rep.iterations;
            if best.as_ref().is_none_or(|b| rep.sum_rate > b.1.sum_rate) {
                best = Some((d, rep));
            }
        }
        let (d, mut rep) = best.expect("at least one restart");
        rep.total_iterations = total;
        if self.topo == Topology::Distributed {
            rep.bits = bits;
        }
        rep.runtime_s = start.elapsed().as_secs_f64();
        Ok((d, rep))
    }

    fn run_from(&self, beta0: Vec<Vec<f64>>) -> Result<(SchedulingDecision, AdmmReport)> {
        let start = Instant::now();
        let (mm, kk, nt) = self.dims();
        let mut st = self.init(beta0);
        let mut rep = AdmmReport {
            iterations: 0,
            total_iterations: 0,
            converged: false,
            consensus_residual: Vec::new(),
            binary_sum_residual: Vec::new(),
            binary_product_residual: Vec::new(),
            objective: Vec::new(),
            rho: Vec::new(),
            rounding_repairs: 0,
            sum_rate: 0.0,
            feasibility: Feasibility::default(),
            bits: 0,
            runtime_s: 0.0,
        };
        let mut prev_obj: f64 = st.gamma.iter().flatten().sum();
        for t in 0..self.acfg.max_iters {
            let hat_prev = st.xi_hat.clone();
            if self.topo == Topology::Distributed {
                self.update_global(&mut st);
            }
            self.refresh_mmse(&mut st);
            let ici = self.ici_view(&st);
            for m in 0..mm {
                self.solve_block1(&mut st, m, &ici[m]);
            }
            self.solve_block2(&mut st, true);
            self.update_duals(&mut st);
            let (cons, rs, rp) = self.residuals(&st);
            let obj: f64 = st.gamma.iter().flatten().sum();
            rep.iterations = t + 1;
            rep.consensus_residual.push(cons);
            rep.binary_sum_residual.push(rs);
            rep.binary_product_residual.push(rp);
            rep.objective.push(obj);
            rep.rho.push(st.rho);
            let settled = (obj - prev_obj).abs() <= self.acfg.tol_objective * (1.0 + obj.abs());
            prev_obj = obj;
            if t + 1 >= self.acfg.min_iters
                && cons <= self.acfg.tol_consensus
                && rs <= self.acfg.tol_binary
                && rp <= self.acfg.tol_binary
                && settled
            {
                rep.converged = true;
                break;
            }
            st.rho = (st.rho * self.acfg.rho_decay).max(self.acfg.rho_min.min(st.rho));
            if self.acfg.adaptive_rho {
                let dual: f64 = st
                    .xi_hat
                    .iter()
                    .flatten()
                    .zip(hat_prev.iter().flatten())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / st.rho;
                let primal = cons + rs + rp;
                if primal > 10.0 * dual {
                    st.rho = (st.rho / 2.0).max(1e-4);
                } else if dual > 10.0 * primal {
                    st.rho = (st.rho * 2.0).min(1e4);
                }
            }
        }
        for m in 0..mm {
            let (b, r) = round_beta(&st.beta[m], kk);
            st.beta[m] = b;
            rep.rounding_repairs += r;
        }
        if self.acfg.polish_rounds > 0 {
            self.beamforming_rounds(&mut st, self.acfg.polish_rounds);
        }
        let mut d = SchedulingDecision::zeros(mm, kk, nt);
        for m in 0..mm {
            for k in 0..kk {
                d.w_mut(m, k).copy_from_slice(beam(&st.w[m], k, nt));
                for i in (0..kk).filter(|&i| i != k) {
                    d.set_beta(m, i, k, st.beta[m][i * kk + k]);
                }
            }
            d.project_power(m, self.cfg.p_max());
        }
        let report = sum_rate(&d, self.ch, self.cfg)?;
        rep.sum_rate = report.sum_rate;
        rep.feasibility = report.feasibility;
        if !rep.feasibility.structural_ok() {
            warn!("rounded ADMM decision violates a structural constraint");
        }
        rep.bits = match self.topo {
            Topology::Distributed => rep.iterations as u64 * distributed_bits_per_iteration(mm, kk),
            Topology::Centralized => centralized_bits(mm, kk, nt),
        };
        rep.runtime_s = start.elapsed().as_secs_f64();
        Ok((d, rep))
    }
}

/// Distributed consensus ADMM: BSs share only ICI bounds.
pub fn run_distributed(
    ch: &ChannelSet,
    cfg: &NetworkConfig,
    acfg: &AdmmConfig,
) -> Result<(SchedulingDecision, AdmmReport)> {
    Runner {
        ch,
        cfg,
        acfg,
        topo: Topology::Distributed,
    }
    .run()
}

/// Centralized ADMM with exact inter-cell interference.
pub fn run_centralized(
    ch: &ChannelSet,
    cfg: &NetworkConfig,
    acfg: &AdmmConfig,
) -> Result<(SchedulingDecision, AdmmReport)> {
    Runner {
        ch,
        cfg,
        acfg,
        topo: Topology::Centralized,
    }
    .run()
}

#[cfg(test)]
mod tests;
