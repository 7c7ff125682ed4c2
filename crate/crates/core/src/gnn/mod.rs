//! Distributed message-passing GNN with learned layer skipping and message
//! pruning.
//!
//! Every base station is a graph node. Node `m` holds its data channels
//! `H_mm` as node feature; the directed edge `m → n` carries `H_nm`, the
//! channels from BS `m` to the users of cell `n`. At each layer, BS `m`
//! encodes its hidden state and edge feature into a message for every
//! neighbour, neighbours average what they receive, and a combiner produces
//! the next hidden state. All BSs share weights and architecture logits.

pub mod checkpoint;
pub mod sampling;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gradient, ParamLayout, ParamVector, Tape, Tensor, Var};
use crate::channel::{ChannelSet, NetworkConfig};
use crate::error::{invalid, Error, Result};
use crate::rates::{traced_loss, traced_rates, LossConfig, SchedulingDecision, TracedDecision};

pub use sampling::{GumbelNoise, Sampling};

/// Bits used to transmit one real number.
pub const BITS_PER_REAL: u64 = 32;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    /// Number of message-passing layers `L`.
    pub layers: usize,
    /// Message and hidden-state width `D^E`.
    pub embed_dim: usize,
    /// Width of the two hidden layers of every encoder and combiner MLP.
    pub hidden: usize,
    /// Initial value of every architecture logit.
    pub arch_init: f64,
    /// Gumbel-softmax temperature.
    pub s_temp: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            embed_dim: 48,
            hidden: 64,
            arch_init: 2.0,
            s_temp: 1.0,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(invalid("layers", "must be at least 1"));
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(invalid("embed_dim", "widths must be positive"));
        }
        if !(self.s_temp > 0.0) {
            return Err(invalid("s_temp", "temperature must be positive"));
        }
        Ok(())
    }
}

/// Whether the architecture logits are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every layer runs and every neuron is transmitted.
    Fixed,
    /// Layer-skip and neuron masks are sampled from the architecture logits.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub sampling: Sampling,
    pub s_temp: f64,
}

impl ForwardOptions {
    pub fn new(mode: Mode, sampling: Sampling, s_temp: f64) -> Self {
        Self {
            mode,
            sampling,
            s_temp,
        }
    }
}

/// What one forward pass did.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `hidden[l]`: `X^(l)` with one row per `sample * M + bs`; `hidden[0]`
    /// is the projected node feature.
    pub hidden: Vec<Tensor>,
    /// Sampled layer-skip values, one per layer.
    pub outer_mask: Vec<f64>,
    /// Sampled neuron masks per layer (all ones for layer 1).
    pub inner_masks: Vec<Vec<f64>>,
    /// Bits exchanged among BSs for one scheduling decision.
    pub bits: u64,
    /// Layers whose messages were exchanged.
    pub active_layers: usize,
}

/// Message bits of a fixed GNN: `M (M − 1) · L · D^E · 32`.
pub fn fixed_gnn_bits(num_bs: usize, layers: usize, embed_dim: usize) -> u64 {
    (num_bs * num_bs.saturating_sub(1) * layers * embed_dim) as u64 * BITS_PER_REAL
}

/// Bits for one layer: every directed edge carries the active neurons.
pub fn layer_bits(num_bs: usize, active_neurons: usize) -> u64 {
    (num_bs * num_bs.saturating_sub(1) * active_neurons) as u64 * BITS_PER_REAL
}

type Linear = (usize, usize);

#[derive(Debug, Clone)]
struct Slots {
    input: Linear,
    encoders: Vec<Vec<Linear>>,
    combiners: Vec<Vec<Linear>>,
    head: Linear,
}

/// The GNN model description: layouts of the weights `θ` and the
/// architecture logits `α`.
#[derive(Debug, Clone)]
pub struct Gnn {
    pub net: NetworkConfig,
    pub cfg: GnnConfig,
    theta_layout: Arc<ParamLayout>,
    alpha_layout: Arc<ParamLayout>,
    slots: Slots,
}

fn push_mlp(layout: &mut ParamLayout, name: &str, dims: &[usize]) -> Vec<Linear> {
    dims.windows(2)
        .enumerate()
        .map(|(j, d)| {
            let w = layout.push(format!("{name}.w{j}"), d[0], d[1]);
            let b = layout.push(format!("{name}.b{j}"), 1, d[1]);
            (w, b)
        })
        .collect()
}

impl Gnn {
    pub fn new(net: NetworkConfig, cfg: GnnConfig) -> Result<Self> {
        net.validate()?;
        cfg.validate()?;
        let f = net.feature_dim();
        let (d, h) = (cfg.embed_dim, cfg.hidden);
        let mut t = ParamLayout::new();
        let input = push_mlp(&mut t, "input", &[f, d])[0];
        let mut encoders = Vec::new();
        let mut combiners = Vec::new();
        for l in 1..=cfg.layers {
            let src = if l == 1 { f } else { d };
            encoders.push(push_mlp(&mut t, &format!("enc{l}"), &[src + f, h, h, d]));
            combiners.push(push_mlp(&mut t, &format!("comb{l}"), &[2 * d, h, h, d]));
        }
        let k = net.users_per_bs;
        let head = push_mlp(&mut t, "head", &[f + d, f + 2 * k * k])[0];
        let mut a = ParamLayout::new();
        a.push("alpha.outer", 1, cfg.layers);
        a.push("alpha.inner", cfg.layers - 1, d);
        Ok(Self {
            net,
            cfg,
            theta_layout: Arc::new(t),
            alpha_layout: Arc::new(a),
            slots: Slots {
                input,
                encoders,
                combiners,
                head,
            },
        })
    }

    pub fn theta_layout(&self) -> &Arc<ParamLayout> {
        &self.theta_layout
    }

    pub fn alpha_layout(&self) -> &Arc<ParamLayout> {
        &self.alpha_layout
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init_theta(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamVector::zeros(self.theta_layout.clone());
        for slot in 0..self.theta_layout.len() {
            if !self.theta_layout.name(slot).contains(".w") {
                continue;
            }
            let (r, c) = self.theta_layout.shape(slot);
            let a = (6.0 / (r + c) as f64).sqrt();
            p.slice_mut(slot)
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-a..a));
        }
        p
    }

    /// Every architecture logit set to `cfg.arch_init`.
    pub fn init_alpha(&self) -> ParamVector {
        let n = self.alpha_layout.size();
        ParamVector::from_flat(self.alpha_layout.clone(), vec![self.cfg.arch_init; n])
            .expect("layout size")
    }

    pub fn pairs(&self) -> usize {
        let k = self.net.users_per_bs;
        k * k.saturating_sub(1) / 2
    }

    /// Fresh noise for a batch of `samples`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R, samples: usize) -> GumbelNoise {
        GumbelNoise::sample(
            rng,
            self.cfg.layers,
            self.cfg.embed_dim,
            samples,
            self.net.num_bs,
            self.net.users_per_bs,
        )
    }

    fn check_batch(&self, batch: &[&ChannelSet]) -> Result<()> {
        if batch.is_empty() {
            return Err(invalid("batch", "empty batch"));
        }
        for ch in batch {
            if (ch.num_bs(), ch.users(), ch.antennas())
                != (self.net.num_bs, self.net.users_per_bs, self.net.antennas)
            {
                return Err(Error::ConfigMismatch(format!(
                    "model expects (M={}, K={}, N_T={}), channels are (M={}, K={}, N_T={})",
                    self.net.num_bs,
                    self.net.users_per_bs,
                    self.net.antennas,
                    ch.num_bs(),
                    ch.users(),
                    ch.antennas()
                )));
            }
        }
        Ok(())
    }

    /// Builds the full forward pass on `tape`. `theta` and `alpha` are the
    /// handles returned by attaching the parameter vectors; `alpha` is only
    /// read in [`Mode::Auto`]. `noise = None` disables all Gumbel noise.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        alpha: &[Var],
        batch: &[&ChannelSet],
        opts: &ForwardOptions,
        noise: Option<&GumbelNoise>,
    ) -> Result<TapeForward> {
        self.check_batch(batch)?;
        let (mm, kk) = (self.net.num_bs, self.net.users_per_bs);
        let nt = self.net.antennas;
        let (bsz, d) = (batch.len(), self.cfg.embed_dim);
        let f = self.net.feature_dim();
        let pp = self.pairs();
        let auto = opts.mode == Mode::Auto;
        let hard = opts.sampling == Sampling::Hard;

        // Graph features and connectivity.
        let mut node = Tensor::zeros(bsz * mm, f);
        let mut edge = Tensor::zeros(bsz * mm * mm.saturating_sub(1), f);
        let mut src = Vec::with_capacity(edge.rows());
        let mut groups = vec![Vec::new(); bsz * mm];
        for (b, ch) in batch.iter().enumerate() {
            for m in 0..mm {
                node.row_mut(b * mm + m)
                    .copy_from_slice(&ch.block_features(m, m));
                for n in (0..mm).filter(|&n| n != m) {
                    let e = src.len();
                    edge.row_mut(e).copy_from_slice(&ch.block_features(n, m));
                    src.push(b * mm + m);
                    groups[b * mm + n].push(e);
                }
            }
        }
        let node = tape.constant(node);
        let edge = tape.constant(edge);

        // Architecture samples.
        let arch_noise = |layer: usize, j: Option<usize>| -> f64 {
            noise.map_or(0.0, |n| match j {
                None => n.outer[layer],
                Some(j) => n.inner[layer][j],
            })
        };
        let (outer_var, outer_vals) = if auto {
            let logits = tape.value(alpha[0]).data().to_vec();
            let nz: Vec<f64> = (0..self.cfg.layers).map(|l| arch_noise(l, None)).collect();
            self.sample_mask(tape, alpha[0], &logits, &nz, opts)
        } else {
            (None, vec![1.0; self.cfg.layers])
        };
        let mut inner_masks = vec![vec![1.0; d]];
        let mut inner_vars = vec![None];
        for l in 1..self.cfg.layers {
            if auto {
                let row = tape.cols(alpha[1], 0, d);
                let row = tape.gather_rows(row, vec![l - 1]);
                let logits = tape.value(row).data().to_vec();
                let nz: Vec<f64> = (0..d).map(|j| arch_noise(l, Some(j))).collect();
                let (v, vals) = self.sample_mask(tape, row, &logits, &nz, opts);
                inner_vars.push(v);
                inner_masks.push(vals);
            } else {
                inner_vars.push(None);
                inner_masks.push(vec![1.0; d]);
            }
        }

        // Message passing.
        let mut x = self.linear(tape, theta, self.slots.input, node);
        let mut hidden = vec![tape.value(x).clone()];
        let mut bits = 0;
        let mut active_layers = 0;
        for l in 0..self.cfg.layers {
            let o = outer_vals[l];
            if auto && hard && o == 0.0 {
                hidden.push(tape.value(x).clone());
                continue;
            }
            let sender = if l == 0 { node } else { x };
            let mut msg = self.embed(tape, theta, l, sender, edge, &src);
            let mask = &inner_masks[l];
            if auto && l > 0 {
                msg = match inner_vars[l] {
                    Some(v) => prune_and_fill(tape, msg, v),
                    None => {
                        let c = tape.constant(Tensor::row_vector(mask.clone()));
                        prune_and_fill(tape, msg, c)
                    }
                };
            }
            let agg = aggregate(tape, msg, groups.clone());
            let psi = self.combine(tape, theta, l, x, agg);
            x = if !auto || hard {
                psi
            } else {
                let ov = outer_var.expect("soft auto mode samples the outer mask");
                let ol = tape.cols(ov, l, 1);
                layer_update(tape, psi, x, ol)
            };
            hidden.push(tape.value(x).clone());
            if o > 0.5 {
                active_layers += 1;
                let active = mask.iter().filter(|&&v| v > 0.5).count();
                bits += layer_bits(mm, active);
            }
        }

        // Output head and constraint transforms.
        let out = self.decode_head(tape, theta, node, x);
        let p_max = self.net.p_max();
        let wl = tape.cols(out, 0, f);
        let wl = tape.scale(wl, p_max.sqrt());
        let w_rows = project_power(tape, wl, p_max);
        let sic = tape.cols(out, f, 2 * kk * kk);
        let select = tape.constant(sic_selection(kk));
        let sic = tape.matmul(sic, select);
        let sic = tape.reshape(sic, bsz * mm * pp, 3);
        let triples = if pp == 0 {
            sic
        } else if hard {
            let logits = tape.value(sic);
            let mut one_hot = Tensor::zeros(logits.rows(), 3);
            for r in 0..logits.rows() {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for j in 0..3 {
                    let v = logits.get(r, j) + noise.map_or(0.0, |n| n.sic.get(r, j));
                    if v > best_v {
                        best = j;
                        best_v = v;
                    }
                }
                one_hot.set(r, best, 1.0);
            }
            tape.constant(one_hot)
        } else {
            let z = match noise {
                Some(n) => {
                    let nz = tape.constant(n.sic.clone());
                    tape.add(sic, nz)
                }
                None => sic,
            };
            let z = tape.scale(z, 1.0 / opts.s_temp);
            sic_softmax(tape, z)
        };
        let trip_rows = tape.reshape(triples, bsz * mm, 3 * pp);

        let mut w = Vec::with_capacity(mm * kk);
        let mut beta = vec![None; mm * kk * kk];
        for n in 0..mm {
            let rows: Vec<usize> = (0..bsz).map(|b| b * mm + n).collect();
            let wn = tape.gather_rows(w_rows, rows.clone());
            for u in 0..kk {
                w.push(tape.cols(wn, 2 * nt * u, 2 * nt));
            }
            if pp > 0 {
                let tn = tape.gather_rows(trip_rows, rows);
                for (p, (i, k)) in pair_list(kk).into_iter().enumerate() {
                    beta[(n * kk + i) * kk + k] = Some(tape.cols(tn, 3 * p, 1));
                    beta[(n * kk + k) * kk + i] = Some(tape.cols(tn, 3 * p + 1, 1));
                }
            }
        }
        Ok(TapeForward {
            decision: TracedDecision {
                num_bs: mm,
                users: kk,
                w,
                beta,
            },
            w_rows,
            triples,
            trace: ForwardTrace {
                hidden,
                outer_mask: outer_vals,
                inner_masks,
                bits,
                active_layers,
            },
        })
    }

    /// Samples a mask from logits `logits` (tape handle `var`). Returns the
    /// tape handle for soft samples (`None` when hard) and the values.
    fn sample_mask(
        &self,
        tape: &mut Tape,
        var: Var,
        logits: &[f64],
        noise: &[f64],
        opts: &ForwardOptions,
    ) -> (Option<Var>, Vec<f64>) {
        match opts.sampling {
            Sampling::Hard => {
                let vals = logits
                    .iter()
                    .zip(noise)
                    .map(|(&x, &n)| sampling::binary_hard(x, n))
                    .collect();
                (None, vals)
            }
            Sampling::Soft => {
                let nz = tape.constant(Tensor::row_vector(noise.to_vec()));
                let z = tape.add(var, nz);
                let z = tape.scale(z, 1.0 / opts.s_temp);
                let s = tape.sigmoid(z);
                let vals = tape.value(s).data().to_vec();
                (Some(s), vals)
            }
        }
    }

    fn linear(&self, tape: &mut Tape, theta: &[Var], (w, b): Linear, x: Var) -> Var {
        let y = tape.matmul(x, theta[w]);
        tape.add(y, theta[b])
    }

    fn mlp(&self, tape: &mut Tape, theta: &[Var], layers: &[Linear], mut x: Var) -> Var {
        for (j, &lin) in layers.iter().enumerate() {
            x = self.linear(tape, theta, lin, x);
            if j + 1 < layers.len() {
                x = tape.tanh(x);
            }
        }
        x
    }

    /// Messages for every directed edge of layer `layer` (0-based): the
    /// encoder applied to the sender's state (row `src[e]` of `sender`) and
    /// the edge feature.
    pub fn embed(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        layer: usize,
        sender: Var,
        edge: Var,
        src: &[usize],
    ) -> Var {
        let s = tape.gather_rows(sender, src.to_vec());
        let input = tape.concat_cols(&[s, edge]);
        self.mlp(tape, theta, &self.slots.encoders[layer], input)
    }

    /// Candidate hidden state from the previous state and the aggregate.
    pub fn combine(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        layer: usize,
        prev: Var,
        agg: Var,
    ) -> Var {
        let input = tape.concat_cols(&[prev, agg]);
        self.mlp(tape, theta, &self.slots.combiners[layer], input)
    }

    /// Linear read-out of `[node feature, final hidden state]`.
    pub fn decode_head(&self, tape: &mut Tape, theta: &[Var], node: Var, x: Var) -> Var {
        let input = tape.concat_cols(&[node, x]);
        self.linear(tape, theta, self.slots.head, input)
    }

    /// Runs the model without recording gradients.
    pub fn forward(
        &self,
        theta: &ParamVector,
        alpha: &ParamVector,
        batch: &[&ChannelSet],
        opts: &ForwardOptions,
        noise: Option<&GumbelNoise>,
    ) -> Result<(Vec<SchedulingDecision>, ForwardTrace)> {
        let mut tape = Tape::new();
        let tv = theta.attach_constant(&mut tape);
        let av = alpha.attach_constant(&mut tape);
        let out = self.forward_on_tape(&mut tape, &tv, &av, batch, opts, noise)?;
        tape.check_finite()?;
        Ok((out.decisions(&tape, self.net.antennas), out.trace))
    }

    /// Mean training loss over `batch` and its gradients with respect to
    /// `θ` and (in auto mode) `α`.
    pub fn loss_and_grads(
        &self,
        theta: &ParamVector,
        alpha: &ParamVector,
        batch: &[&ChannelSet],
        opts: &ForwardOptions,
        noise: Option<&GumbelNoise>,
        loss: &LossConfig,
    ) -> Result<LossEval> {
        let mut tape = Tape::new();
        let tv = theta.attach(&mut tape);
        let av = alpha.attach(&mut tape);
        let out = self.forward_on_tape(&mut tape, &tv, &av, batch, opts, noise)?;
        let rates = traced_rates(
            &mut tape,
            batch,
            &out.decision,
            self.net.sigma2,
            loss.min_mode,
        );
        let l = traced_loss(&mut tape, &rates, loss);
        let mean_rate = {
            let s = tape.value(rates.sum_rate);
            s.data().iter().sum::<f64>() / s.len() as f64
        };
        let grads = tape.backward(l)?;
        let gt = gradient(&grads, &tv, &self.theta_layout);
        let ga = gradient(&grads, &av, &self.alpha_layout);
        Ok(LossEval {
            loss: tape.value(l).item(),
            mean_sum_rate: mean_rate,
            grad_theta: gt.flat,
            grad_alpha: ga.flat,
            bits: out.trace.bits,
        })
    }
}

/// Result of [`Gnn::loss_and_grads`].
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub mean_sum_rate: f64,
    pub grad_theta: Vec<f64>,
    pub grad_alpha: Vec<f64>,
    pub bits: u64,
}

/// Tape handles produced by [`Gnn::forward_on_tape`].
#[derive(Debug, Clone)]
pub struct TapeForward {
    pub decision: TracedDecision,
    /// Projected beamformers, one row per `sample * M + bs`.
    pub w_rows: Var,
    /// SIC triples `(β_ik, β_ki, ζ_ik)`, one row per node and pair.
    pub triples: Var,
    pub trace: ForwardTrace,
}

impl TapeForward {
    /// Reads the decisions of every sample off the tape.
    pub fn decisions(&self, tape: &Tape, antennas: usize) -> Vec<SchedulingDecision> {
        let (mm, kk) = (self.decision.num_bs, self.decision.users);
        let w = tape.value(self.w_rows);
        let bsz = w.rows() / mm;
        let trip = tape.value(self.triples);
        let pairs = pair_list(kk);
        (0..bsz)
            .map(|b| {
                let mut d = SchedulingDecision::zeros(mm, kk, antennas);
                for n in 0..mm {
                    let row = w.row(b * mm + n);
                    for u in 0..kk {
                        for (t, z) in d.w_mut(n, u).iter_mut().enumerate() {
                            let o = 2 * antennas * u + 2 * t;
                            *z = num_complex::Complex64::new(row[o], row[o + 1]);
                        }
                    }
                    for (p, &(i, k)) in pairs.iter().enumerate() {
                        let r = trip.row((b * mm + n) * pairs.len() + p);
                        d.set_beta(n, i, k, r[0]);
                        d.set_beta(n, k, i, r[1]);
                        d.set_zeta(n, i, k, r[2]);
                        d.set_zeta(n, k, i, r[2]);
                    }
                }
                d
            })
            .collect()
    }
}

/// Unordered user pairs `(i, k)`, `i < k`, in lexicographic order.
pub fn pair_list(users: usize) -> Vec<(usize, usize)> {
    (0..users)
        .flat_map(|i| ((i + 1)..users).map(move |k| (i, k)))
        .collect()
}

/// Selects `(β_ik, β_ki, ζ_ik)` logits for every pair out of the
/// `[β (K×K), ζ (K×K)]` head block.
fn sic_selection(users: usize) -> Tensor {
    let pairs = pair_list(users);
    let k2 = users * users;
    let mut s = Tensor::zeros(2 * k2, 3 * pairs.len());
    for (p, &(i, k)) in pairs.iter().enumerate() {
        s.set(i * users + k, 3 * p, 1.0);
        s.set(k * users + i, 3 * p + 1, 1.0);
        s.set(k2 + i * users + k, 3 * p + 2, 1.0);
    }
    s
}

/// Zeroes pruned neurons: `message ⊙ mask` with a `(1, D)` mask.
pub fn prune_and_fill(tape: &mut Tape, message: Var, mask: Var) -> Var {
    tape.mul(message, mask)
}

/// Mean of the messages in each group (zeros for an empty group).
pub fn aggregate(tape: &mut Tape, messages: Var, groups: Vec<Vec<usize>>) -> Var {
    tape.segment_mean(messages, groups)
}

/// `X = o · Ψ + (1 − o) · X_prev` with a `(1, 1)` gate `o`.
pub fn layer_update(tape: &mut Tape, psi: Var, prev: Var, gate: Var) -> Var {
    let diff = tape.sub(psi, prev);
    let step = tape.mul(diff, gate);
    tape.add(prev, step)
}

/// Scales each row (one BS's stacked beamformers) onto the power budget
/// when it exceeds it.
pub fn project_power(tape: &mut Tape, w_rows: Var, p_max: f64) -> Var {
    tape.project_rows(w_rows, p_max.sqrt())
}

/// Softmax over each row of SIC logits `(β_ik, β_ki, ζ_ik)`.
pub fn sic_softmax(tape: &mut Tape, logits: Var) -> Var {
    tape.softmax_rows(logits)
}
