//! Cluster-free SIC interference, decoding rates and derived metrics.
//!
//! Conventions: `beta(m, i, k) = 1` means user `i` of cell `m` decodes and
//! cancels user `k`'s signal. The diagonal is always zero. Users are indexed
//! in ascending order of data-channel gain, so `u < k` means "weaker".

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::channel::{ChannelSet, NetworkConfig};
use crate::error::{Error, Result};

/// Beamformers, SIC indicators and slack variables for every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingDecision {
    num_bs: usize,
    users: usize,
    antennas: usize,
    w: Vec<Complex64>,
    beta: Vec<f64>,
    zeta: Vec<f64>,
}

impl SchedulingDecision {
    pub fn zeros(num_bs: usize, users: usize, antennas: usize) -> Self {
        Self {
            num_bs,
            users,
            antennas,
            w: vec![Complex64::new(0.0, 0.0); num_bs * users * antennas],
            beta: vec![0.0; num_bs * users * users],
            zeta: vec![0.0; num_bs * users * users],
        }
    }

    pub fn for_config(cfg: &NetworkConfig) -> Self {
        Self::zeros(cfg.num_bs, cfg.users_per_bs, cfg.antennas)
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// Beamformer of user `k` at BS `m`.
    pub fn w(&self, m: usize, k: usize) -> &[Complex64] {
        let o = (m * self.users + k) * self.antennas;
        &self.w[o..o + self.antennas]
    }

    pub fn w_mut(&mut self, m: usize, k: usize) -> &mut [Complex64] {
        let o = (m * self.users + k) * self.antennas;
        &mut self.w[o..o + self.antennas]
    }

    fn bidx(&self, m: usize, i: usize, k: usize) -> usize {
        (m * self.users + i) * self.users + k
    }

    pub fn beta(&self, m: usize, i: usize, k: usize) -> f64 {
        self.beta[self.bidx(m, i, k)]
    }

    /// Sets `β_ik` of cell `m`. Diagonal writes are ignored.
    pub fn set_beta(&mut self, m: usize, i: usize, k: usize, v: f64) {
        if i != k {
            let j = self.bidx(m, i, k);
            self.beta[j] = v;
        }
    }

    pub fn zeta(&self, m: usize, i: usize, k: usize) -> f64 {
        self.zeta[self.bidx(m, i, k)]
    }

    pub fn set_zeta(&mut self, m: usize, i: usize, k: usize, v: f64) {
        let j = self.bidx(m, i, k);
        self.zeta[j] = v;
    }

    /// Row-major `K × K` SIC matrix of cell `m`.
    pub fn beta_matrix(&self, m: usize) -> &[f64] {
        let k2 = self.users * self.users;
        &self.beta[m * k2..(m + 1) * k2]
    }

    pub fn clear_beta(&mut self) {
        self.beta.iter_mut().for_each(|b| *b = 0.0);
    }

    /// Transmit power `Σ_k ‖w_k^m‖²` of BS `m`.
    pub fn power(&self, m: usize) -> f64 {
        (0..self.users)
            .flat_map(|k| self.w(m, k))
            .map(|z| z.norm_sqr())
            .sum()
    }

    /// Scales BS `m`'s beamformers onto the power ball of radius `p_max`.
    pub fn project_power(&mut self, m: usize, p_max: f64) {
        let p = self.power(m);
        if p > p_max {
            let s = (p_max / p).sqrt();
            for k in 0..self.users {
                self.w_mut(m, k).iter_mut().for_each(|z| *z *= s);
            }
        }
    }

    /// Relabels base stations the same way as [`ChannelSet::permute_bs`].
    pub fn permute_bs(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.num_bs, self.users, self.antennas);
        for m in 0..self.num_bs {
            for k in 0..self.users {
                out.w_mut(perm[m], k).copy_from_slice(self.w(m, k));
                for i in 0..self.users {
                    out.set_beta(perm[m], i, k, self.beta(m, i, k));
                    out.set_zeta(perm[m], i, k, self.zeta(m, i, k));
                }
            }
        }
        out
    }

    fn check(&self, ch: &ChannelSet) -> Result<()> {
        if (ch.num_bs(), ch.users(), ch.antennas()) != (self.num_bs, self.users, self.antennas) {
            return Err(Error::DimensionMismatch(format!(
                "decision is (M={}, K={}, N_T={}) but channels are (M={}, K={}, N_T={})",
                self.num_bs,
                self.users,
                self.antennas,
                ch.num_bs(),
                ch.users(),
                ch.antennas()
            )));
        }
        Ok(())
    }
}

/// `|h · w|²` for a row channel and column beamformer (no conjugation).
pub fn received_power(h: &[Complex64], w: &[Complex64]) -> f64 {
    h.iter()
        .zip(w)
        .map(|(a, b)| a * b)
        .sum::<Complex64>()
        .norm_sqr()
}

/// `|h_{mi}^n w_u^n|²` for every `(m, i, n, u)`, flattened in that order.
#[derive(Debug, Clone)]
pub struct GainTable {
    num_bs: usize,
    users: usize,
    g: Vec<f64>,
}

impl GainTable {
    pub fn new(d: &SchedulingDecision, ch: &ChannelSet) -> Self {
        let (mm, kk) = (d.num_bs, d.users);
        let mut g = Vec::with_capacity(mm * kk * mm * kk);
        for m in 0..mm {
            for i in 0..kk {
                for n in 0..mm {
                    for u in 0..kk {
                        g.push(received_power(ch.h(m, n, i), d.w(n, u)));
                    }
                }
            }
        }
        Self {
            num_bs: mm,
            users: kk,
            g,
        }
    }

    /// Power received by user `i` of cell `m` from beam `u` of BS `n`.
    pub fn get(&self, m: usize, i: usize, n: usize, u: usize) -> f64 {
        self.g[((m * self.users + i) * self.num_bs + n) * self.users + u]
    }

    pub fn ici(&self, m: usize, i: usize) -> f64 {
        (0..self.num_bs)
            .filter(|&n| n != m)
            .map(|n| (0..self.users).map(|u| self.get(m, i, n, u)).sum::<f64>())
            .sum()
    }

    /// Interference seen by user `i` when decoding user `k` (`i ≠ k`), or by
    /// user `k` decoding its own signal (`i = k`).
    pub fn intf(&self, d: &SchedulingDecision, m: usize, i: usize, k: usize) -> f64 {
        let mut s = 0.0;
        for u in 0..self.users {
            if u == k {
                continue;
            }
            let coef = if i == k {
                1.0 - d.beta(m, k, u)
            } else if u < k {
                1.0 - d.beta(m, i, u) + d.beta(m, i, u) * d.beta(m, u, k)
            } else {
                1.0 - d.beta(m, i, u) * d.beta(m, k, u)
            };
            s += coef * self.get(m, i, m, u);
        }
        s + self.ici(m, i)
    }

    /// Decoding rate `r_ik` in bps/Hz.
    pub fn rate(&self, d: &SchedulingDecision, m: usize, i: usize, k: usize, sigma2: f64) -> f64 {
        let signal = self.get(m, i, m, k);
        (1.0 + signal / (self.intf(d, m, i, k) + sigma2)).log2()
    }
}

/// Inter-cell interference at user `i` of cell `m`.
pub fn ici(d: &SchedulingDecision, ch: &ChannelSet, m: usize, i: usize) -> Result<f64> {
    d.check(ch)?;
    let mut s = 0.0;
    for n in (0..d.num_bs).filter(|&n| n != m) {
        for u in 0..d.users {
            s += received_power(ch.h(m, n, i), d.w(n, u));
        }
    }
    Ok(s)
}

/// Interference when user `i` decodes user `k` (`i ≠ k`). `i = k` is
/// forwarded to [`intf_self`].
pub fn intf_decode(
    d: &SchedulingDecision,
    ch: &ChannelSet,
    m: usize,
    i: usize,
    k: usize,
) -> Result<f64> {
    if i == k {
        return intf_self(d, ch, m, k);
    }
    d.check(ch)?;
    let mut s = 0.0;
    for u in (0..d.users).filter(|&u| u != k) {
        let p = received_power(ch.h(m, m, i), d.w(m, u));
        let coef = if u < k {
            1.0 - d.beta(m, i, u) + d.beta(m, i, u) * d.beta(m, u, k)
        } else {
            1.0 - d.beta(m, i, u) * d.beta(m, k, u)
        };
        s += coef * p;
    }
    Ok(s + ici(d, ch, m, i)?)
}

/// Interference when user `k` decodes its own signal after SIC.
pub fn intf_self(d: &SchedulingDecision, ch: &ChannelSet, m: usize, k: usize) -> Result<f64> {
    d.check(ch)?;
    let s: f64 = (0..d.users)
        .filter(|&u| u != k)
        .map(|u| (1.0 - d.beta(m, k, u)) * received_power(ch.h(m, m, k), d.w(m, u)))
        .sum();
    Ok(s + ici(d, ch, m, k)?)
}

pub fn decode_rate(
    d: &SchedulingDecision,
    ch: &ChannelSet,
    m: usize,
    i: usize,
    k: usize,
    sigma2: f64,
) -> Result<f64> {
    let signal = received_power(ch.h(m, m, i), d.w(m, k));
    let intf = intf_decode(d, ch, m, i, k)?;
    Ok((1.0 + signal / (intf + sigma2)).log2())
}

/// How the minimum over decoders in the effective rate is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MinMode {
    /// Exact minimum (subgradient through the smallest-index argmin).
    #[default]
    Exact,
    /// `-t · ln Σ exp(-x / t)`.
    Soft { temperature: f64 },
}

/// Smallest index attaining the minimum.
pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = j;
        }
    }
    best
}

pub fn soft_min(xs: &[f64], temperature: f64) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = xs.iter().map(|&x| (-(x - lo) / temperature).exp()).sum();
    lo - temperature * s.ln()
}

/// Candidate terms `β_ik r_ik + (1 − β_ik) r_kk` for every decoder `i`
/// (the `i = k` term is `r_kk`). `r` is the cell's row-major `K × K` matrix.
pub fn effective_rate_terms(beta_m: &[f64], r: &[f64], users: usize, k: usize) -> Vec<f64> {
    let rkk = r[k * users + k];
    (0..users)
        .map(|i| {
            let b = if i == k { 0.0 } else { beta_m[i * users + k] };
            b * r[i * users + k] + (1.0 - b) * rkk
        })
        .collect()
}

/// Effective rate `R_k` of user `k` in one cell.
pub fn effective_rate(beta_m: &[f64], r: &[f64], users: usize, k: usize, mode: MinMode) -> f64 {
    let terms = effective_rate_terms(beta_m, r, users, k);
    match mode {
        MinMode::Exact => terms[argmin(&terms)],
        MinMode::Soft { temperature } => soft_min(&terms, temperature),
    }
}

/// Decoder-form effective rate for binary `β`: the minimum of `r_ik` over
/// decoders with `β_ik = 1`, capped by `r_kk`.
pub fn effective_rate_decoder_form(beta_m: &[f64], r: &[f64], users: usize, k: usize) -> f64 {
    (0..users)
        .filter(|&i| i != k && beta_m[i * users + k] == 1.0)
        .map(|i| r[i * users + k])
        .fold(r[k * users + k], f64::min)
}

/// Constraint violations of a decision.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    /// `max(0, P_m − P^max)` per BS.
    pub power_excess: Vec<f64>,
    /// `max(0, R^min − R_k^m)` per cell and user.
    pub rate_shortfall: Vec<Vec<f64>>,
    /// `max(0, β_ik + β_ki − 1)` summed over pairs.
    pub mutual_sic_excess: f64,
    /// Largest distance of any `β` entry from `{0, 1}`.
    pub binary_gap: f64,
    pub power_ok: bool,
    pub min_rate_ok: bool,
    pub mutual_sic_ok: bool,
    pub binary_ok: bool,
}

impl Feasibility {
    /// Power, mutual-SIC and binary constraints (the structural ones).
    pub fn structural_ok(&self) -> bool {
        self.power_ok && self.mutual_sic_ok && self.binary_ok
    }

    pub fn all_ok(&self) -> bool {
        self.structural_ok() && self.min_rate_ok
    }
}

/// Relative tolerance on the power budget.
pub const POWER_TOL: f64 = 1e-9;

/// Full rate evaluation of one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// `r[m]`: row-major `K × K` decoding rates of cell `m`.
    pub r: Vec<Vec<f64>>,
    /// `rates[m][k]`: effective rate of user `k` in cell `m`.
    pub rates: Vec<Vec<f64>>,
    pub sum_rate: f64,
    /// Number of active SIC operations `Σ_m Σ_{i≠k} β_ik`.
    pub sic_complexity: f64,
    pub feasibility: Feasibility,
}

/// Row-major decoding-rate matrices of every cell.
pub fn rate_matrices(
    d: &SchedulingDecision,
    ch: &ChannelSet,
    sigma2: f64,
) -> Result<Vec<Vec<f64>>> {
    d.check(ch)?;
    let table = GainTable::new(d, ch);
    let kk = d.users;
    Ok((0..d.num_bs)
        .map(|m| {
            let mut r = vec![0.0; kk * kk];
            for i in 0..kk {
                for k in 0..kk {
                    r[i * kk + k] = table.rate(d, m, i, k, sigma2);
                }
            }
            r
        })
        .collect())
}

pub fn sic_complexity(d: &SchedulingDecision) -> f64 {
    let kk = d.users;
    (0..d.num_bs)
        .map(|m| {
            let b = d.beta_matrix(m);
            (0..kk * kk)
                .filter(|j| j / kk != j % kk)
                .map(|j| b[j])
                .sum::<f64>()
        })
        .sum()
}

/// Evaluates rates, sum rate, SIC complexity and feasibility.
pub fn sum_rate(
    d: &SchedulingDecision,
    ch: &ChannelSet,
    cfg: &NetworkConfig,
) -> Result<RateReport> {
    sum_rate_with(d, ch, cfg, MinMode::Exact)
}

pub fn sum_rate_with(
    d: &SchedulingDecision,
    ch: &ChannelSet,
    cfg: &NetworkConfig,
    mode: MinMode,
) -> Result<RateReport> {
    let r = rate_matrices(d, ch, cfg.sigma2)?;
    let kk = d.users;
    let rates: Vec<Vec<f64>> = (0..d.num_bs)
        .map(|m| {
            (0..kk)
                .map(|k| effective_rate(d.beta_matrix(m), &r[m], kk, k, mode))
                .collect()
        })
        .collect();
    let sum_rate = rates.iter().flatten().sum();
    let feasibility = check_feasibility_with_rates(d, &rates, cfg);
    Ok(RateReport {
        r,
        rates,
        sum_rate,
        sic_complexity: sic_complexity(d),
        feasibility,
    })
}

/// Checks power, minimum-rate, mutual-SIC and binary constraints.
pub fn check_feasibility(
    d: &SchedulingDecision,
    ch: &ChannelSet,
    cfg: &NetworkConfig,
) -> Result<Feasibility> {
    Ok(sum_rate(d, ch, cfg)?.feasibility)
}

fn check_feasibility_with_rates(
    d: &SchedulingDecision,
    rates: &[Vec<f64>],
    cfg: &NetworkConfig,
) -> Feasibility {
    let p_max = cfg.p_max();
    let power_excess: Vec<f64> = (0..d.num_bs)
        .map(|m| (d.power(m) - p_max).max(0.0))
        .collect();
    let rate_shortfall: Vec<Vec<f64>> = rates
        .iter()
        .map(|row| row.iter().map(|&r| (cfg.min_rate - r).max(0.0)).collect())
        .collect();
    let mut mutual = 0.0;
    let mut gap: f64 = 0.0;
    for m in 0..d.num_bs {
        for i in 0..d.users {
            for k in 0..d.users {
                if i == k {
                    continue;
                }
                let b = d.beta(m, i, k);
                gap = gap.max(b.min(1.0 - b).max(b - 1.0).max(-b));
                if i < k {
                    mutual += (b + d.beta(m, k, i) - 1.0).max(0.0);
                }
            }
        }
    }
    Feasibility {
        power_ok: power_excess.iter().all(|&e| e <= p_max * POWER_TOL),
        min_rate_ok: rate_shortfall.iter().flatten().all(|&s| s <= 1e-9),
        mutual_sic_ok: mutual <= 1e-12,
        binary_ok: gap <= 1e-12,
        power_excess,
        rate_shortfall,
        mutual_sic_excess: mutual,
        binary_gap: gap,
    }
}

/// Weight and threshold of the minimum-rate penalty in the learning loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Penalty weight `λ_rate`; zero gives the plain negative sum rate.
    pub lambda_rate: f64,
    pub min_rate: f64,
    pub min_mode: MinMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_rate: 10.0,
            min_rate: 0.3,
            min_mode: MinMode::Exact,
        }
    }
}

/// `−sum_rate + λ Σ max(0, R^min − R)²` on plain numbers.
pub fn training_loss(report: &RateReport, loss: &LossConfig) -> f64 {
    let penalty: f64 = report
        .rates
        .iter()
        .flatten()
        .map(|&r| (loss.min_rate - r).max(0.0).powi(2))
        .sum();
    -report.sum_rate + loss.lambda_rate * penalty
}

/// Every binary `K × K` SIC matrix (zero diagonal) without mutual SIC,
/// in lexicographic order of the off-diagonal pairs.
pub fn valid_binary_patterns(users: usize) -> Vec<Vec<f64>> {
    let pairs: Vec<(usize, usize)> = (0..users)
        .flat_map(|i| ((i + 1)..users).map(move |k| (i, k)))
        .collect();
    let count = 3usize.pow(pairs.len() as u32);
    (0..count)
        .map(|mut code| {
            let mut b = vec![0.0; users * users];
            for &(i, k) in &pairs {
                match code % 3 {
                    1 => b[i * users + k] = 1.0,
                    2 => b[k * users + i] = 1.0,
                    _ => {}
                }
                code /= 3;
            }
            b
        })
        .collect()
}

// -------------------------------------------------------------------------
// Traced evaluation over a batch of samples

/// Tape handles for a batch of decisions. Every handle holds one row per
/// sample.
#[derive(Debug, Clone)]
pub struct TracedDecision {
    pub num_bs: usize,
    pub users: usize,
    /// `w[n * K + u]`: beamformer of user `u` at BS `n`, shape `(B, 2 N_T)`
    /// with interleaved `(re, im)` columns.
    pub w: Vec<Var>,
    /// `beta[(m * K + i) * K + k]`: shape `(B, 1)`; `None` on the diagonal.
    pub beta: Vec<Option<Var>>,
}

/// Tape handles for the rates of a batch.
#[derive(Debug, Clone)]
pub struct TracedRates {
    /// `user_rates[m * K + k]`, shape `(B, 1)`.
    pub user_rates: Vec<Var>,
    /// Per-sample sum rate, shape `(B, 1)`.
    pub sum_rate: Var,
}

/// Interleaved rows `h_{mi}^n` of every sample, shape `(B, 2 N_T)`.
fn channel_rows(batch: &[&ChannelSet], m: usize, n: usize, i: usize) -> Tensor {
    let nt = batch[0].antennas();
    let mut t = Tensor::zeros(batch.len(), 2 * nt);
    for (b, ch) in batch.iter().enumerate() {
        for (j, z) in ch.h(m, n, i).iter().enumerate() {
            t.set(b, 2 * j, z.re);
            t.set(b, 2 * j + 1, z.im);
        }
    }
    t
}

fn sum_vars(tape: &mut Tape, vars: &[Var], zero: Var) -> Var {
    vars.iter().fold(zero, |acc, &v| tape.add(acc, v))
}

/// Effective user rates on the tape; agrees with [`sum_rate_with`].
pub fn traced_rates(
    tape: &mut Tape,
    batch: &[&ChannelSet],
    d: &TracedDecision,
    sigma2: f64,
    mode: MinMode,
) -> TracedRates {
    let (mm, kk) = (d.num_bs, d.users);
    let zero = tape.scalar(0.0);
    let one = tape.scalar(1.0);
    let beta = |m: usize, i: usize, k: usize| d.beta[(m * kk + i) * kk + k].unwrap_or(zero);
    let mut user_rates = Vec::with_capacity(mm * kk);
    for m in 0..mm {
        // gains[i][n][u] = |h_{mi}^n w_u^n|²
        let mut gains = vec![vec![vec![zero; kk]; mm]; kk];
        let mut ici = vec![zero; kk];
        for (i, gi) in gains.iter_mut().enumerate() {
            for (n, gin) in gi.iter_mut().enumerate() {
                let h = tape.constant(channel_rows(batch, m, n, i));
                for (u, g) in gin.iter_mut().enumerate() {
                    *g = tape.complex_abs2(h, d.w[n * kk + u]);
                }
                if n != m {
                    let s = sum_vars(tape, gin, zero);
                    ici[i] = tape.add(ici[i], s);
                }
            }
        }
        let mut r = vec![zero; kk * kk];
        for i in 0..kk {
            for k in 0..kk {
                let mut terms = Vec::with_capacity(kk);
                for u in (0..kk).filter(|&u| u != k) {
                    let coef = if i == k {
                        tape.sub(one, beta(m, k, u))
                    } else if u < k {
                        let p = tape.mul(beta(m, i, u), beta(m, u, k));
                        let c = tape.sub(one, beta(m, i, u));
                        tape.add(c, p)
                    } else {
                        let p = tape.mul(beta(m, i, u), beta(m, k, u));
                        tape.sub(one, p)
                    };
                    terms.push(tape.mul(coef, gains[i][m][u]));
                }
                let intra = sum_vars(tape, &terms, zero);
                let intf = tape.add(intra, ici[i]);
                let denom = tape.offset(intf, sigma2);
                let sinr = tape.div(gains[i][m][k], denom);
                let arg = tape.offset(sinr, 1.0);
                r[i * kk + k] = tape.log2(arg);
            }
        }
        for k in 0..kk {
            let rkk = r[k * kk + k];
            let cands: Vec<Var> = (0..kk)
                .map(|i| {
                    if i == k {
                        rkk
                    } else {
                        let diff = tape.sub(r[i * kk + k], rkk);
                        let t = tape.mul(beta(m, i, k), diff);
                        tape.add(rkk, t)
                    }
                })
                .collect();
            let all = tape.concat_cols(&cands);
            let lo = tape.row_min(all);
            let rate = match mode {
                MinMode::Exact => lo,
                MinMode::Soft { temperature } => {
                    let shifted = tape.sub(all, lo);
                    let e = tape.scale(shifted, -1.0 / temperature);
                    let e = tape.exp(e);
                    let s = tape.sum_rows(e);
                    let l = tape.ln(s);
                    let l = tape.scale(l, -temperature);
                    tape.add(lo, l)
                }
            };
            user_rates.push(rate);
        }
    }
    let sum_rate = sum_vars(tape, &user_rates, zero);
    TracedRates {
        user_rates,
        sum_rate,
    }
}

/// Batch mean of `−sum_rate + λ Σ max(0, R^min − R)²`.
pub fn traced_loss(tape: &mut Tape, rates: &TracedRates, loss: &LossConfig) -> Var {
    let mut total = tape.neg(rates.sum_rate);
    if loss.lambda_rate != 0.0 {
        for &r in &rates.user_rates {
            let gap = tape.neg(r);
            let gap = tape.offset(gap, loss.min_rate);
            let gap = tape.relu(gap);
            let sq = tape.square(gap);
            let pen = tape.scale(sq, loss.lambda_rate);
            total = tape.add(total, pen);
        }
    }
    tape.mean(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channels, sample_rng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_instance(
        m: usize,
        k: usize,
        nt: usize,
        seed: u64,
    ) -> (NetworkConfig, ChannelSet, SchedulingDecision) {
        use rand::Rng;
        let cfg = NetworkConfig::new(m, k, nt);
        let mut rng = sample_rng(seed, 0);
        let ch = sample_channels(&cfg, &mut rng).unwrap();
        let mut d = SchedulingDecision::for_config(&cfg);
        for n in 0..m {
            for u in 0..k {
                for z in d.w_mut(n, u) {
                    *z = c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                }
            }
        }
        (cfg, ch, d)
    }

    #[test]
    fn ici_single_cell_is_zero() {
        let (_, ch, d) = random_instance(1, 3, 2, 1);
        assert_eq!(ici(&d, &ch, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn ici_hand_value() {
        let mut ch = ChannelSet::zeros(2, 1, 1);
        ch.h_mut(0, 1, 0)[0] = c(1.0, 0.0);
        let mut d = SchedulingDecision::zeros(2, 1, 1);
        d.w_mut(1, 0)[0] = c(2.0, 0.0);
        assert_eq!(ici(&d, &ch, 0, 0).unwrap(), 4.0);
        let zero = SchedulingDecision::zeros(2, 1, 1);
        assert_eq!(ici(&zero, &ch, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ch = ChannelSet::zeros(2, 2, 1);
        let d = SchedulingDecision::zeros(2, 3, 1);
        assert!(matches!(
            ici(&d, &ch, 0, 0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_beta_gives_full_interference() {
        let (_, ch, d) = random_instance(2, 3, 2, 2);
        for i in 0..3 {
            for k in 0..3 {
                let full: f64 = (0..3)
                    .filter(|&u| u != k)
                    .map(|u| received_power(ch.h(0, 0, i), d.w(0, u)))
                    .sum();
                let expect = full + ici(&d, &ch, 0, i).unwrap();
                let got = intf_decode(&d, &ch, 0, i, k).unwrap();
                assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
            }
        }
    }

    #[test]
    fn cancelled_weaker_user_vanishes() {
        let (_, ch, mut d) = random_instance(1, 3, 2, 3);
        // user 2 decodes user 0 (weaker) but user 0 does not decode user 1.
        d.set_beta(0, 2, 0, 1.0);
        let with = intf_decode(&d, &ch, 0, 2, 1).unwrap();
        let expect = received_power(ch.h(0, 0, 2), d.w(0, 2));
        assert!((with - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn full_sic_leaves_only_ici() {
        let (_, ch, mut d) = random_instance(2, 3, 2, 4);
        for u in 0..3 {
            d.set_beta(0, 1, u, 1.0);
        }
        let v = intf_self(&d, &ch, 0, 1).unwrap();
        assert!((v - ici(&d, &ch, 0, 1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn unit_sinr_gives_one_bit() {
        let mut ch = ChannelSet::zeros(1, 1, 1);
        ch.h_mut(0, 0, 0)[0] = c(1.0, 0.0);
        let mut d = SchedulingDecision::zeros(1, 1, 1);
        d.w_mut(0, 0)[0] = c(1.0, 0.0);
        assert_eq!(decode_rate(&d, &ch, 0, 0, 0, 1.0).unwrap(), 1.0);
        d.w_mut(0, 0)[0] = c(0.0, 0.0);
        assert_eq!(decode_rate(&d, &ch, 0, 0, 0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn effective_rate_cases() {
        let r = [2.0, 1.0, 0.5, 3.0];
        let zero = [0.0; 4];
        assert_eq!(effective_rate(&zero, &r, 2, 0, MinMode::Exact), 2.0);
        // user 1 decodes user 0 with r_10 = 0.5 < r_00.
        let b = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(effective_rate(&b, &r, 2, 0, MinMode::Exact), 0.5);
        assert_eq!(effective_rate_decoder_form(&b, &r, 2, 0), 0.5);
        let soft = effective_rate(&b, &r, 2, 0, MinMode::Soft { temperature: 1e-3 });
        assert!((soft - 0.5).abs() < 1e-6);
    }

    #[test]
    fn single_user_full_power() {
        let mut cfg = NetworkConfig::new(1, 1, 1);
        cfg.snr_db = 10.0;
        let mut ch = ChannelSet::zeros(1, 1, 1);
        ch.h_mut(0, 0, 0)[0] = c(0.6, 0.8);
        let mut d = SchedulingDecision::for_config(&cfg);
        d.w_mut(0, 0)[0] = c(cfg.p_max().sqrt(), 0.0);
        let rep = sum_rate(&d, &ch, &cfg).unwrap();
        assert!((rep.sum_rate - (1.0 + cfg.p_max()).log2()).abs() < 1e-12);
        let zero = SchedulingDecision::for_config(&cfg);
        assert_eq!(sum_rate(&zero, &ch, &cfg).unwrap().sum_rate, 0.0);
    }

    #[test]
    fn loss_values() {
        let (cfg, ch, d) = random_instance(2, 2, 2, 5);
        let mut rep = sum_rate(&d, &ch, &cfg).unwrap();
        let plain = LossConfig {
            lambda_rate: 0.0,
            ..LossConfig::default()
        };
        assert_eq!(training_loss(&rep, &plain), -rep.sum_rate);
        rep.rates = vec![vec![1.0, 0.2], vec![1.0, 1.0]];
        rep.sum_rate = 3.2;
        let penalty = training_loss(&rep, &LossConfig::default()) + 3.2;
        assert!((penalty - 0.1).abs() < 1e-12);
    }

    #[test]
    fn feasibility_flags() {
        let cfg = NetworkConfig::new(1, 2, 1);
        let ch = ChannelSet::zeros(1, 2, 1);
        let mut d = SchedulingDecision::for_config(&cfg);
        d.w_mut(0, 0)[0] = c((1.01 * cfg.p_max()).sqrt(), 0.0);
        d.set_beta(0, 0, 1, 1.0);
        d.set_beta(0, 1, 0, 1.0);
        let f = check_feasibility(&d, &ch, &cfg).unwrap();
        assert!(!f.power_ok);
        assert!((f.power_excess[0] - 0.01 * cfg.p_max()).abs() < 1e-9);
        assert!(!f.mutual_sic_ok);
        assert!(f.binary_ok);
        assert!(!f.min_rate_ok);
        d.set_beta(0, 1, 0, 0.4);
        assert!(!check_feasibility(&d, &ch, &cfg).unwrap().binary_ok);
    }

    #[test]
    fn pattern_counts() {
        assert_eq!(valid_binary_patterns(1).len(), 1);
        assert_eq!(valid_binary_patterns(2).len(), 3);
        assert_eq!(valid_binary_patterns(3).len(), 27);
        for b in valid_binary_patterns(3) {
            for i in 0..3 {
                assert_eq!(b[i * 3 + i], 0.0);
                for k in 0..3 {
                    assert!(b[i * 3 + k] + b[k * 3 + i] <= 1.0);
                }
            }
        }
    }
    #[test]
    fn traced_rates_match_plain_evaluation() {
        use rand::Rng;
        let mut rng = sample_rng(77, 0);
        let (m, k, nt) = (2, 3, 2);
        let samples: Vec<_> = (0..4).map(|s| random_instance(m, k, nt, 100 + s)).collect();
        let cfg = samples[0].0.clone();
        let mut decisions = Vec::new();
        for (_, _, d) in &samples {
            let mut d = d.clone();
            for c in 0..m {
                for i in 0..k {
                    for j in 0..k {
                        d.set_beta(c, i, j, rng.random_range(0.0..1.0));
                    }
                }
            }
            decisions.push(d);
        }
        let batch: Vec<&ChannelSet> = samples.iter().map(|s| &s.1).collect();
        for mode in [MinMode::Exact, MinMode::Soft { temperature: 0.3 }] {
            let mut tape = Tape::new();
            let w = (0..m * k)
                .map(|j| {
                    let rows: Vec<Vec<f64>> = decisions
                        .iter()
                        .map(|d| {
                            d.w(j / k, j % k)
                                .iter()
                                .flat_map(|z| [z.re, z.im])
                                .collect()
                        })
                        .collect();
                    tape.param(Tensor::from_rows(&rows))
                })
                .collect();
            let beta = (0..m * k * k)
                .map(|j| {
                    let (c, i, l) = (j / (k * k), (j / k) % k, j % k);
                    (i != l).then(|| {
                        tape.param(Tensor::column(
                            decisions.iter().map(|d| d.beta(c, i, l)).collect(),
                        ))
                    })
                })
                .collect();
            let td = TracedDecision {
                num_bs: m,
                users: k,
                w,
                beta,
            };
            let tr = traced_rates(&mut tape, &batch, &td, cfg.sigma2, mode);
            for (b, d) in decisions.iter().enumerate() {
                let plain = sum_rate_with(d, batch[b], &cfg, mode).unwrap();
                let got = tape.value(tr.sum_rate).get(b, 0);
                assert!(
                    (got - plain.sum_rate).abs() <= 1e-12,
                    "{mode:?}: {got} vs {}",
                    plain.sum_rate
                );
            }
        }
    }
}
