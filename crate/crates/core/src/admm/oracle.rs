//! Fixed-pattern beamforming and exhaustive searches over SIC patterns.

use super::{complement, matched_filters, AdmmConfig, Runner, State, Topology};
use crate::channel::{ChannelSet, NetworkConfig};
use crate::error::{invalid, Result};
use crate::rates::{sum_rate, valid_binary_patterns, RateReport, SchedulingDecision};

use num_complex::Complex64;

/// Optimizes the beamformers for a frozen binary SIC pattern (`betas[m]`
/// is `K × K`) with centralized MMSE rounds, starting from matched filters.
pub fn optimize_beamformers(
    ch: &ChannelSet,
    cfg: &NetworkConfig,
    acfg: &AdmmConfig,
    betas: &[Vec<f64>],
) -> Result<(SchedulingDecision, RateReport)> {
    let (mm, kk, nt) = (ch.num_bs(), ch.users(), ch.antennas());
    if betas.len() != mm || betas.iter().any(|b| b.len() != kk * kk) {
        return Err(invalid("betas", "expected one K × K pattern per BS"));
    }
    let runner = Runner {
        ch,
        cfg,
        acfg,
        topo: Topology::Centralized,
    };
    let mut st = State {
        w: matched_filters(ch, cfg.p_max()),
        gamma: vec![vec![0.0; kk]; mm],
        beta: betas.to_vec(),
        bt: betas.iter().map(|b| complement(b, kk)).collect(),
        xi_out: vec![Vec::new(); mm],
        xi_in: vec![Vec::new(); mm],
        xi_hat: vec![Vec::new(); mm],
        lambda: vec![vec![0.0; kk * kk]; mm],
        lambda_t: vec![vec![0.0; kk * kk]; mm],
        nu_out: vec![Vec::new(); mm],
        nu_in: vec![Vec::new(); mm],
        a: vec![vec![1.0; kk * kk]; mm],
        c: vec![vec![Complex64::new(0.0, 0.0); kk * kk]; mm],
        rho: acfg.rho,
    };
    runner.beamforming_rounds(&mut st, acfg.beamforming_rounds);
    let mut d = SchedulingDecision::zeros(mm, kk, nt);
    for m in 0..mm {
        for k in 0..kk {
            d.w_mut(m, k)
                .copy_from_slice(&st.w[m][k * nt..(k + 1) * nt]);
            for i in (0..kk).filter(|&i| i != k) {
                d.set_beta(m, i, k, betas[m][i * kk + k]);
            }
        }
        d.project_power(m, cfg.p_max());
    }
    let report = sum_rate(&d, ch, cfg)?;
    Ok((d, report))
}

/// Every combination of one per-BS pattern from `per_bs` across `num_bs`
/// BSs, in lexicographic order.
pub fn joint_patterns(per_bs: &[Vec<f64>], num_bs: usize) -> Vec<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
    for _ in 0..num_bs {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                per_bs.iter().map(move |p| {
                    let mut v = prefix.clone();
                    v.push(p.clone());
                    v
                })
            })
            .collect();
    }
    out
}

/// SIC patterns of cluster-based NOMA: users are partitioned into
/// clusters and, inside a cluster, every user decodes the weaker users
/// (lower index). One pattern per set partition.
pub fn cluster_patterns(users: usize) -> Vec<Vec<f64>> {
    fn partitions(n: usize) -> Vec<Vec<usize>> {
        // Restricted growth strings: label[i] ≤ 1 + max(label[..i]).
        let mut out = Vec::new();
        let mut cur = vec![0usize; n];
        fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == cur.len() {
                out.push(cur.clone());
                return;
            }
            for l in 0..=max + 1 {
                cur[i] = l;
                rec(i + 1, max.max(l), cur, out);
            }
        }
        if n == 0 {
            return vec![Vec::new()];
        }
        rec(1, 0, &mut cur, &mut out);
        out
    }
    partitions(users)
        .into_iter()
        .map(|label| {
            let mut b = vec![0.0; users * users];
            for i in 0..users {
                for k in 0..i {
                    if label[i] == label[k] {
                        b[i * users + k] = 1.0;
                    }
                }
            }
            b
        })
        .collect()
}

/// Best fixed-pattern beamforming result over a pattern set.
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub best: SchedulingDecision,
    pub best_sum_rate: f64,
    pub best_pattern: Vec<Vec<f64>>,
    /// Sum rate of every pattern in enumeration order.
    pub sum_rates: Vec<f64>,
}

/// Runs [`optimize_beamformers`] on every joint pattern and keeps the best.
/// `per_bs = None` enumerates all patterns without mutual SIC.
pub fn brute_force(
    ch: &ChannelSet,
    cfg: &NetworkConfig,
    acfg: &AdmmConfig,
    per_bs: Option<&[Vec<f64>]>,
) -> Result<BruteForce> {
    let all;
    let per_bs = match per_bs {
        Some(p) => p,
        None => {
            all = valid_binary_patterns(ch.users());
            &all
        }
    };
    let mut best: Option<(SchedulingDecision, f64, Vec<Vec<f64>>)> = None;
    let mut sum_rates = Vec::new();
    for pattern in joint_patterns(per_bs, ch.num_bs()) {
        let (d, r) = optimize_beamformers(ch, cfg, acfg, &pattern)?;
        sum_rates.push(r.sum_rate);
        if best.as_ref().is_none_or(|b| r.sum_rate > b.1) {
            best = Some((d, r.sum_rate, pattern));
        }
    }
    let (best, best_sum_rate, best_pattern) =
        best.ok_or_else(|| invalid("per_bs", "no patterns to search"))?;
    Ok(BruteForce {
        best,
        best_sum_rate,
        best_pattern,
        sum_rates,
    })
}
