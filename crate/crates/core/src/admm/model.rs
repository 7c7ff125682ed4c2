//! Rate surrogates used by the ADMM benchmarks: convexified interference,
//! MMSE auxiliaries and the block-2 objective with its gradient.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::channel::ChannelSet;

pub(crate) fn dot(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Beamformer of user `u` inside one BS block `w` (`K · N_T` entries).
pub(crate) fn beam(w: &[Complex64], u: usize, nt: usize) -> &[Complex64] {
    &w[u * nt..(u + 1) * nt]
}

/// Weight of `|h_i w_u|²` in the convexified interference seen by user `i`
/// decoding user `k`, given `β̃ = 1 − β` (diagonal of `β̃` is 1).
pub fn convex_coef(bt: &[f64], users: usize, i: usize, k: usize, u: usize) -> f64 {
    if i == k {
        bt[k * users + u]
    } else if u < k {
        bt[i * users + u].max(1.0 - bt[u * users + k])
    } else {
        bt[i * users + u].max(bt[k * users + u])
    }
}

/// `∂coef/∂β̃` as (index, slope) pairs, picking the first argument on ties.
fn coef_grad(bt: &[f64], users: usize, i: usize, k: usize, u: usize) -> (usize, f64) {
    if i == k {
        (k * users + u, 1.0)
    } else if u < k {
        if bt[i * users + u] >= 1.0 - bt[u * users + k] {
            (i * users + u, 1.0)
        } else {
            (u * users + k, -1.0)
        }
    } else if bt[i * users + u] >= bt[k * users + u] {
        (i * users + u, 1.0)
    } else {
        (k * users + u, 1.0)
    }
}

/// Convexified interference at user `i` of cell `m` when decoding user `k`,
/// with the inter-cell part given by `ici`.
pub fn convex_intf(
    ch: &ChannelSet,
    w_m: &[Complex64],
    bt: &[f64],
    m: usize,
    i: usize,
    k: usize,
    ici: f64,
) -> f64 {
    let (kk, nt) = (ch.users(), ch.antennas());
    let h = ch.h(m, m, i);
    (0..kk)
        .filter(|&u| u != k)
        .map(|u| convex_coef(bt, kk, i, k, u) * dot(h, beam(w_m, u, nt)).norm_sqr())
        .sum::<f64>()
        + ici
}

/// Exact inter-cell interference at user `i` of cell `m`.
pub(crate) fn exact_ici(ch: &ChannelSet, w: &[Vec<Complex64>], m: usize, i: usize) -> f64 {
    let nt = ch.antennas();
    let mut s = 0.0;
    for (n, wn) in w.iter().enumerate() {
        if n == m {
            continue;
        }
        for u in 0..ch.users() {
            s += dot(ch.h(m, n, i), beam(wn, u, nt)).norm_sqr();
        }
    }
    s
}

/// ICI caused by BS `m` at user `k` of cell `n`.
pub(crate) fn ici_out(ch: &ChannelSet, w_m: &[Complex64], m: usize, n: usize, k: usize) -> f64 {
    let nt = ch.antennas();
    (0..ch.users())
        .map(|u| dot(ch.h(n, m, k), beam(w_m, u, nt)).norm_sqr())
        .sum()
}

/// MMSE receiver and weight for every `(i, k)` of BS `m`:
/// `c = (h w_k)ᴴ / T`, `a = T / (Intf + σ²)` with `T = |h w_k|² + Intf + σ²`.
/// `ici[i]` is the inter-cell interference assumed at user `i`.
pub fn mmse_update(
    ch: &ChannelSet,
    w_m: &[Complex64],
    bt: &[f64],
    ici: &[f64],
    sigma2: f64,
    m: usize,
) -> (Vec<f64>, Vec<Complex64>) {
    let (kk, nt) = (ch.users(), ch.antennas());
    let mut a = vec![1.0; kk * kk];
    let mut c = vec![Complex64::new(0.0, 0.0); kk * kk];
    for i in 0..kk {
        for k in 0..kk {
            let z = dot(ch.h(m, m, i), beam(w_m, k, nt));
            let intf = convex_intf(ch, w_m, bt, m, i, k, ici[i]);
            let t = z.norm_sqr() + intf + sigma2;
            c[i * kk + k] = z.conj() / t;
            a[i * kk + k] = t / (intf + sigma2);
        }
    }
    (a, c)
}

/// The MMSE lower bound `log2 a − a ε / ln 2 + 1 / ln 2` on a decoding rate.
pub fn mmse_bound(a: f64, c: Complex64, z: Complex64, intf: f64, sigma2: f64) -> f64 {
    let eps = mse(c, z, intf, sigma2);
    a.log2() - a * eps / LN_2 + 1.0 / LN_2
}

fn mse(c: Complex64, z: Complex64, intf: f64, sigma2: f64) -> f64 {
    1.0 - 2.0 * (c * z).re + c.norm_sqr() * (z.norm_sqr() + intf + sigma2)
}

/// Soft minimum `−t ln Σ exp(−x/t)` and its weights.
pub(crate) fn soft_min_weights(x: &[f64], t: f64) -> (f64, Vec<f64>) {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = x.iter().map(|v| (-(v - lo) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    (lo - t * s.ln(), e.into_iter().map(|v| v / s).collect())
}

/// Where the inter-cell interference in the rate surrogate comes from.
#[derive(Debug, Clone, Copy)]
pub(crate) enum IciSource<'a> {
    /// Distributed: the incoming copies `ξ_in` are block variables stored
    /// after `β̃` in each BS's real vector, indexed `(n, i)` over `n ≠ m`.
    /// Copies are pulled towards `targets_in` and the ICI a BS causes
    /// towards `targets_out`, both `ξ̂ − ρν`; ICI above its outgoing target
    /// costs `excess² / (2ρ)`, which is the consensus term with the
    /// outgoing copy eliminated.
    Copies {
        targets_in: &'a [Vec<f64>],
        targets_out: &'a [Vec<f64>],
    },
    /// Computed from every BS's beamformers (centralized).
    Exact,
}

/// Data of the `{Γ, W, β̃}` block for a set of BSs.
pub(crate) struct Block2<'a> {
    pub ch: &'a ChannelSet,
    pub sigma2: f64,
    pub min_rate: f64,
    pub p_max: f64,
    pub bss: Vec<usize>,
    pub a: &'a [Vec<f64>],
    pub c: &'a [Vec<Complex64>],
    pub beta: &'a [Vec<f64>],
    pub lambda: &'a [Vec<f64>],
    pub lambda_t: &'a [Vec<f64>],
    pub rho: f64,
    pub ici: IciSource<'a>,
    pub free_bt: bool,
    pub temperature: f64,
    pub rate_penalty: f64,
    pub beta_floor: f64,
}

/// Value, effective-rate slacks `Γ` and gradients of the block objective.
pub(crate) struct Block2Eval {
    pub value: f64,
    pub gamma: Vec<Vec<f64>>,
    pub gw: Vec<Vec<Complex64>>,
    pub gbt: Vec<Vec<f64>>,
}

impl Block2<'_> {
    fn ici_at(&self, w: &[Vec<Complex64>], r: &[Vec<f64>], m: usize, i: usize) -> f64 {
        let kk = self.ch.users();
        match self.ici {
            IciSource::Copies { .. } => r[m][kk * kk..].iter().skip(i).step_by(kk).sum(),
            IciSource::Exact => exact_ici(self.ch, w, m, i),
        }
    }

    /// Decoders that bound the rate of user `k`: itself (weight 1) and every
    /// `i` with `β_ik` above the floor.
    fn decoders(&self, m: usize, k: usize) -> Vec<(usize, f64)> {
        let kk = self.ch.users();
        let mut out = vec![(k, 1.0)];
        for i in (0..kk).filter(|&i| i != k) {
            let b = self.beta[m][i * kk + k];
            if b > self.beta_floor {
                out.push((i, b));
            }
        }
        out
    }

    pub fn eval(&self, w: &[Vec<Complex64>], bt: &[Vec<f64>], grad: bool) -> Block2Eval {
        // `bt[m]` holds `β̃` followed, when distributed, by the incoming copies.
        let ch = self.ch;
        let (mm, kk, nt) = (ch.num_bs(), ch.users(), ch.antennas());
        let zero = Complex64::new(0.0, 0.0);
        let mut out = Block2Eval {
            value: 0.0,
            gamma: vec![vec![0.0; kk]; mm],
            gw: vec![vec![zero; kk * nt]; mm],
            gbt: bt.iter().map(|v| vec![0.0; v.len()]).collect(),
        };
        for &m in &self.bss {
            let ici: Vec<f64> = (0..kk).map(|i| self.ici_at(w, bt, m, i)).collect();
            let z: Vec<Complex64> = (0..kk * kk)
                .map(|iu| dot(ch.h(m, m, iu / kk), beam(&w[m], iu % kk, nt)))
                .collect();
            for k in 0..kk {
                let dec = self.decoders(m, k);
                let mut x = Vec::with_capacity(dec.len());
                let mut eps_parts = Vec::with_capacity(dec.len());
                for &(i, b) in &dec {
                    let intf: f64 = (0..kk)
                        .filter(|&u| u != k)
                        .map(|u| convex_coef(&bt[m], kk, i, k, u) * z[i * kk + u].norm_sqr())
                        .sum::<f64>()
                        + ici[i];
                    let (a, c) = (self.a[m][i * kk + k], self.c[m][i * kk + k]);
                    let f = mmse_bound(a, c, z[i * kk + k], intf, self.sigma2);
                    x.push(f / b);
                    eps_parts.push((a, c));
                }
                let (gamma, p) = soft_min_weights(&x, self.temperature);
                let short = (self.min_rate - gamma).max(0.0);
                out.value += gamma - 0.5 * self.rate_penalty * short * short;
                out.gamma[m][k] = gamma;
                if !grad {
                    continue;
                }
                let dgamma = 1.0 + self.rate_penalty * short;
                for (j, &(i, b)) in dec.iter().enumerate() {
                    let (a, c) = eps_parts[j];
                    // dJ/dε for this decoder.
                    let e = dgamma * p[j] / b * (-a / LN_2);
                    if e == 0.0 {
                        continue;
                    }
                    let c2 = c.norm_sqr();
                    let h = ch.h(m, m, i);
                    let zik = z[i * kk + k];
                    let sk = (-2.0 * c.conj() + 2.0 * c2 * zik) * e;
                    for (g, hv) in out.gw[m][k * nt..(k + 1) * nt].iter_mut().zip(h) {
                        *g += sk * hv.conj();
                    }
                    for u in (0..kk).filter(|&u| u != k) {
                        let ziu = z[i * kk + u];
                        let coef = convex_coef(&bt[m], kk, i, k, u);
                        let su = ziu * (2.0 * c2 * coef * e);
                        for (g, hv) in out.gw[m][u * nt..(u + 1) * nt].iter_mut().zip(h) {
                            *g += su * hv.conj();
                        }
                        if self.free_bt {
                            let (idx, slope) = coef_grad(&bt[m], kk, i, k, u);
                            out.gbt[m][idx] += e * c2 * ziu.norm_sqr() * slope;
                        }
                    }
                    if let IciSource::Copies { .. } = self.ici {
                        for s in 0..mm - 1 {
                            out.gbt[m][kk * kk + s * kk + i] += e * c2;
                        }
                    }
                    if let IciSource::Exact = self.ici {
                        for n in (0..mm).filter(|&n| n != m) {
                            let hn = ch.h(m, n, i);
                            for u in 0..kk {
                                let s = dot(hn, beam(&w[n], u, nt)) * (2.0 * c2 * e);
                                for (g, hv) in out.gw[n][u * nt..(u + 1) * nt].iter_mut().zip(hn) {
                                    *g += s * hv.conj();
                                }
                            }
                        }
                    }
                }
            }
            if let IciSource::Copies {
                targets_in,
                targets_out,
            } = self.ici
            {
                for (j, t) in targets_in[m].iter().enumerate() {
                    let d = bt[m][kk * kk + j] - t;
                    out.value -= d * d / (2.0 * self.rho);
                    if grad {
                        out.gbt[m][kk * kk + j] -= d / self.rho;
                    }
                }
                for (s, n) in (0..mm).filter(|&n| n != m).enumerate() {
                    for k in 0..kk {
                        let g = ch.h(n, m, k);
                        let excess = ici_out(ch, &w[m], m, n, k) - targets_out[m][s * kk + k];
                        if excess <= 0.0 {
                            continue;
                        }
                        out.value -= excess * excess / (2.0 * self.rho);
                        if !grad {
                            continue;
                        }
                        for u in 0..kk {
                            let sc = dot(g, beam(&w[m], u, nt)) * (-2.0 * excess / self.rho);
                            for (gv, hv) in out.gw[m][u * nt..(u + 1) * nt].iter_mut().zip(g) {
                                *gv += sc * hv.conj();
                            }
                        }
                    }
                }
            }
            if self.free_bt {
                for i in 0..kk {
                    for k in (0..kk).filter(|&k| k != i) {
                        let j = i * kk + k;
                        let (b, t) = (self.beta[m][j], bt[m][j]);
                        let r1 = b + t - 1.0 + self.rho * self.lambda[m][j];
                        let r2 = b * t + self.rho * self.lambda_t[m][j];
                        out.value -= (r1 * r1 + r2 * r2) / (2.0 * self.rho);
                        if grad {
                            out.gbt[m][j] -= (r1 + r2 * b) / self.rho;
                        }
                    }
                }
            }
        }
        out
    }

    /// Projects the free variables onto the block's feasible set.
    pub fn project(&self, w: &mut [Vec<Complex64>], bt: &mut [Vec<f64>]) {
        let kk = self.ch.users();
        for &m in &self.bss {
            project_ball(&mut w[m], self.p_max);
            if self.free_bt {
                for i in 0..kk {
                    for k in 0..kk {
                        let v = &mut bt[m][i * kk + k];
                        *v = if i == k { 1.0 } else { v.clamp(0.0, 1.0) };
                    }
                }
            }
            for v in bt[m][kk * kk..].iter_mut() {
                *v = v.max(0.0);
            }
        }
    }
}

pub(crate) fn project_ball(w: &mut [Complex64], p_max: f64) {
    let p: f64 = w.iter().map(|x| x.norm_sqr()).sum();
    if p > p_max {
        let s = (p_max / p).sqrt();
        w.iter_mut().for_each(|x| *x *= s);
    }
}
