//! Experiment orchestration: datasets, runs of every method on a shared
//! test set, comparison tables, correlation sweeps, generalization runs and
//! plot-data export.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{
    centralized_bits, optimize_beamformers, run_centralized, run_distributed, AdmmConfig,
    AdmmReport,
};
use crate::autodiff::ParamVector;
use crate::bilevel::{train_gnn, TrainLog};
use crate::channel::{make_dataset, ChannelSet, Dataset, NetworkConfig, Split};
use crate::error::{invalid, Error, Result};
use crate::gnn::{checkpoint, ForwardOptions, Gnn, Mode, Sampling};
use crate::rates::{sic_complexity, sum_rate};

pub use config::{check_pattern, paired_cluster_pattern, ExperimentConfig, Method};

/// Header of comparison tables.
pub const TABLE_HEADER: &str = "Method,Test sum rate (bps/Hz),Execution time,Number of GNN layers/iterations,Information overhead (Kbit)";

pub fn kbit(bits: u64) -> f64 {
    bits as f64 / 1000.0
}

/// Outcome of one method on one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sum_rate: f64,
    pub sic_complexity: f64,
    /// Bits exchanged among BSs for this decision.
    pub bits: u64,
    /// Active GNN layers, or ADMM iterations over all restarts.
    pub steps: f64,
    pub runtime_s: f64,
    /// Every constraint, including the minimum rate, holds.
    pub feasible: bool,
}

/// Per-sample records of one method and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub samples: Vec<SampleRecord>,
    pub sum_rate: f64,
    pub overhead_kbit: f64,
    pub sic_complexity: f64,
    pub steps: f64,
    /// Mean seconds per sample.
    pub runtime_s: f64,
    pub feasible_fraction: f64,
    pub config_hash: String,
    pub provenance: String,
}

impl RunResult {
    pub fn from_samples(
        method: Method,
        samples: Vec<SampleRecord>,
        cfg: &ExperimentConfig,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("samples", "no test samples"));
        }
        let n = samples.len() as f64;
        let mean = |f: &dyn Fn(&SampleRecord) -> f64| samples.iter().map(f).sum::<f64>() / n;
        let hash = cfg.hash()?;
        Ok(Self {
            method,
            sum_rate: mean(&|s| s.sum_rate),
            overhead_kbit: mean(&|s| kbit(s.bits)),
            sic_complexity: mean(&|s| s.sic_complexity),
            steps: mean(&|s| s.steps),
            runtime_s: mean(&|s| s.runtime_s),
            feasible_fraction: mean(&|s| s.feasible as u8 as f64),
            provenance: format!(
                "cfnoma-{}+{}.seed{}.cfg{}",
                env!("CARGO_PKG_VERSION"),
                method,
                cfg.seed,
                &hash[..12]
            ),
            config_hash: hash,
            samples,
        })
    }

    /// The same result with every runtime set to zero, for reproducibility
    /// comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.runtime_s = 0.0;
        for s in &mut r.samples {
            s.runtime_s = 0.0;
        }
        r
    }
}

pub struct Datasets {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

const SPLITS: [(Split, &str); 3] = [
    (Split::Train, "train"),
    (Split::Validation, "validation"),
    (Split::Test, "test"),
];

fn split_seed(seed: u64, split: Split) -> u64 {
    let k = match split {
        Split::Train => 0,
        Split::Validation => 1,
        Split::Test => 2,
    };
    seed.wrapping_mul(3).wrapping_add(k)
}

/// Loads the datasets from `data_dir`, or draws them from the seed.
pub fn datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let mut sets = Vec::with_capacity(3);
    for (split, name) in SPLITS {
        let d = match &cfg.data_dir {
            Some(dir) => {
                let d = Dataset::load(&dir.join(format!("{name}.json")))?;
                let (a, b) = (&d.config, &cfg.net);
                if (a.num_bs, a.users_per_bs, a.antennas) != (b.num_bs, b.users_per_bs, b.antennas)
                {
                    return Err(Error::ConfigMismatch(format!(
                        "{name} set has M = {}, K = {}, N_T = {}; the config has {}, {}, {}",
                        a.num_bs, a.users_per_bs, a.antennas, b.num_bs, b.users_per_bs, b.antennas
                    )));
                }
                d
            }
            None => {
                let s = &cfg.dataset;
                let n = match split {
                    Split::Train => s.train_batches,
                    Split::Validation => s.val_batches,
                    Split::Test => s.test_batches,
                };
                make_dataset(
                    &cfg.net,
                    split,
                    n,
                    s.batch_size,
                    split_seed(cfg.seed, split),
                )?
            }
        };
        sets.push(d);
    }
    let test = sets.pop().expect("three splits");
    let val = sets.pop().expect("three splits");
    let train = sets.pop().expect("three splits");
    Ok(Datasets { train, val, test })
}

/// Draws the three splits and writes them to `dir` as `<split>.json`.
pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut c = cfg.clone();
    c.data_dir = None;
    let d = datasets(&c)?;
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (set, (_, name)) in [&d.train, &d.val, &d.test].into_iter().zip(SPLITS) {
        let p = dir.join(format!("{name}.json"));
        set.save(&p)?;
        out.push(p);
    }
    Ok(out)
}

/// A trained GNN.
pub struct TrainedModel {
    pub model: Gnn,
    pub theta: ParamVector,
    pub alpha: ParamVector,
    pub mode: Mode,
    pub log: TrainLog,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.model, &self.theta, &self.alpha, self.mode)
    }
}

/// Trains the GNN of a learned method with the config's architecture,
/// training settings and seed.
pub fn train_model(
    cfg: &ExperimentConfig,
    method: Method,
    data: &Datasets,
) -> Result<TrainedModel> {
    let mode = method
        .gnn_mode()
        .ok_or_else(|| invalid("method", format!("`{method}` is not a learned method")))?;
    cfg.validate_method(method)?;
    let model = Gnn::new(cfg.net.clone(), cfg.gnn.clone())?;
    let theta0 = model.init_theta(cfg.seed);
    let alpha0 = model.init_alpha();
    let mut tcfg = cfg.train.clone();
    tcfg.mode = mode;
    tcfg.seed = cfg.seed;
    let out = train_gnn(
        &model,
        &theta0,
        &alpha0,
        &data.train,
        &data.val,
        Some(&data.val),
        &tcfg,
    )?;
    if let Some(msg) = &out.diverged {
        warn!("{method}: {msg}");
    }
    Ok(TrainedModel {
        model,
        theta: out.theta,
        alpha: out.alpha,
        mode,
        log: out.log,
    })
}

/// Hard, noise-free GNN decisions on every test sample. The runtime of a
/// batch is split evenly over its samples.
pub fn evaluate_gnn(
    model: &Gnn,
    theta: &ParamVector,
    alpha: &ParamVector,
    mode: Mode,
    test: &Dataset,
) -> Result<Vec<SampleRecord>> {
    let opts = ForwardOptions::new(mode, Sampling::Hard, model.cfg.s_temp);
    let mut out = Vec::with_capacity(test.len());
    for batch in &test.batches {
        let start = Instant::now();
        let refs: Vec<&ChannelSet> = batch.iter().collect();
        let (decisions, trace) = model.forward(theta, alpha, &refs, &opts, None)?;
        let per = start.elapsed().as_secs_f64() / batch.len().max(1) as f64;
        for (d, ch) in decisions.iter().zip(batch) {
            let r = sum_rate(d, ch, &model.net)?;
            out.push(SampleRecord {
                sum_rate: r.sum_rate,
                sic_complexity: r.sic_complexity,
                bits: trace.bits,
                steps: trace.active_layers as f64,
                runtime_s: per,
                feasible: r.feasibility.all_ok(),
            });
        }
    }
    Ok(out)
}

/// Runs an ADMM variant on every test sample (in parallel). Also returns
/// the report of the first sample.
pub fn evaluate_admm(
    method: Method,
    net: &NetworkConfig,
    acfg: &AdmmConfig,
    test: &Dataset,
) -> Result<(Vec<SampleRecord>, AdmmReport)> {
    let run = match method {
        Method::AdmmDistributed => run_distributed,
        Method::AdmmCentralized => run_centralized,
        _ => {
            return Err(invalid(
                "method",
                format!("`{method}` is not an ADMM method"),
            ))
        }
    };
    let samples: Vec<&ChannelSet> = test.samples().collect();
    let runs: Vec<(SampleRecord, AdmmReport)> = samples
        .par_iter()
        .map(|ch| {
            let (d, rep) = run(ch, net, acfg)?;
            let rec = SampleRecord {
                sum_rate: rep.sum_rate,
                sic_complexity: sic_complexity(&d),
                bits: rep.bits,
                steps: rep.total_iterations as f64,
                runtime_s: rep.runtime_s,
                feasible: rep.feasibility.all_ok(),
            };
            Ok((rec, rep))
        })
        .collect::<Result<_>>()?;
    let first = runs
        .first()
        .map(|r| r.1.clone())
        .ok_or_else(|| invalid("test", "the test set is empty"))?;
    Ok((runs.into_iter().map(|r| r.0).collect(), first))
}

/// Beamforming optimized for a frozen SIC pattern used at every BS.
/// Overhead is that of a centralized scheduler.
pub fn beta_frozen_oracle(
    ch: &ChannelSet,
    net: &NetworkConfig,
    acfg: &AdmmConfig,
    pattern: &[f64],
) -> Result<SampleRecord> {
    check_pattern(pattern, ch.users())?;
    let start = Instant::now();
    let betas = vec![pattern.to_vec(); ch.num_bs()];
    let (d, r) = optimize_beamformers(ch, net, acfg, &betas)?;
    Ok(SampleRecord {
        sum_rate: r.sum_rate,
        sic_complexity: sic_complexity(&d),
        bits: centralized_bits(ch.num_bs(), ch.users(), ch.antennas()),
        steps: 0.0,
        runtime_s: start.elapsed().as_secs_f64(),
        feasible: r.feasibility.all_ok(),
    })
}

/// One method's result with its training log or first ADMM report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    /// Data-channel correlation of a sweep point.
    pub corr_data: Option<f64>,
    pub result: RunResult,
    pub train_log: Option<TrainLog>,
    pub admm_trace: Option<AdmmReport>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub config: ExperimentConfig,
    pub entries: Vec<SummaryEntry>,
}

impl Summary {
    pub fn results(&self) -> Vec<&RunResult> {
        self.entries.iter().map(|e| &e.result).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile {
                what: "summary",
                path: path.to_path_buf(),
            });
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Trains (if learned) and evaluates one method on `data.test`.
pub fn run_method(cfg: &ExperimentConfig, method: Method, data: &Datasets) -> Result<SummaryEntry> {
    cfg.validate_method(method)?;
    info!("running {method}");
    let (samples, train_log, admm_trace) = match method {
        Method::AutoGnn | Method::FixedGnn => {
            let t = train_model(cfg, method, data)?;
            let s = evaluate_gnn(&t.model, &t.theta, &t.alpha, t.mode, &data.test)?;
            (s, Some(t.log), None)
        }
        Method::AdmmDistributed | Method::AdmmCentralized => {
            let (s, rep) = evaluate_admm(method, &cfg.net, &cfg.admm, &data.test)?;
            (s, None, Some(rep))
        }
        Method::BetaFrozenOracle => {
            let p = cfg.frozen_pattern()?;
            let chs: Vec<&ChannelSet> = data.test.samples().collect();
            let s = chs
                .par_iter()
                .map(|ch| beta_frozen_oracle(ch, &cfg.net, &cfg.admm, &p))
                .collect::<Result<_>>()?;
            (s, None, None)
        }
    };
    Ok(SummaryEntry {
        corr_data: None,
        result: RunResult::from_samples(method, samples, cfg)?,
        train_log,
        admm_trace,
    })
}

/// Every method of `cfg.methods` on the same datasets.
pub fn compare(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let data = datasets(cfg)?;
    let entries = cfg
        .methods
        .iter()
        .map(|&m| run_method(cfg, m, &data))
        .collect::<Result<_>>()?;
    Ok(Summary {
        command: "compare".into(),
        config: cfg.clone(),
        entries,
    })
}

/// `compare` at every data-channel correlation in `cfg.sweep_corr`. Points
/// run in parallel.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    if cfg.data_dir.is_some() {
        return Err(invalid(
            "data_dir",
            "a sweep draws its own data at every correlation",
        ));
    }
    let points: Vec<Vec<SummaryEntry>> = cfg
        .sweep_corr
        .par_iter()
        .map(|&c| {
            let mut pc = cfg.clone();
            pc.net.corr_data = c;
            let mut s = compare(&pc)?;
            for e in &mut s.entries {
                e.corr_data = Some(c);
            }
            Ok(s.entries)
        })
        .collect::<Result<_>>()?;
    Ok(Summary {
        command: "sweep".into(),
        config: cfg.clone(),
        entries: points.into_iter().flatten().collect(),
    })
}

/// The stored checkpoint path of a config.
pub fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("checkpoint.json"))
}

/// Restores a checkpoint for the network of `net`. The architecture comes
/// from the checkpoint; `M`, `K` and `N_T` must agree, while SNR and
/// channel statistics may differ.
pub fn load_for(path: &Path, net: &NetworkConfig) -> Result<checkpoint::LoadedModel> {
    let loaded = checkpoint::load(path)?;
    let a = &loaded.model.net;
    if (a.num_bs, a.users_per_bs, a.antennas) != (net.num_bs, net.users_per_bs, net.antennas) {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint {} was trained for M = {}, K = {}, N_T = {}; the config has {}, {}, {}",
            path.display(),
            a.num_bs,
            a.users_per_bs,
            a.antennas,
            net.num_bs,
            net.users_per_bs,
            net.antennas
        )));
    }
    let model = Gnn::new(net.clone(), loaded.model.cfg.clone())?;
    let theta = ParamVector::from_flat(model.theta_layout().clone(), loaded.theta.flat().to_vec())?;
    let alpha = ParamVector::from_flat(model.alpha_layout().clone(), loaded.alpha.flat().to_vec())?;
    Ok(checkpoint::LoadedModel {
        model,
        theta,
        alpha,
        mode: loaded.mode,
    })
}

/// Evaluates `cfg.method`: learned methods read their checkpoint, the
/// others run on the test set.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate_method(cfg.method)?;
    let data = datasets(cfg)?;
    let entry = match cfg.method.gnn_mode() {
        Some(_) => {
            let l = load_for(&checkpoint_path(cfg), &cfg.net)?;
            let s = evaluate_gnn(&l.model, &l.theta, &l.alpha, l.mode, &data.test)?;
            SummaryEntry {
                corr_data: None,
                result: RunResult::from_samples(Method::from_mode(l.mode), s, cfg)?,
                train_log: None,
                admm_trace: None,
            }
        }
        None => run_method(cfg, cfg.method, &data)?,
    };
    Ok(Summary {
        command: "evaluate".into(),
        config: cfg.clone(),
        entries: vec![entry],
    })
}

/// Trains `cfg.method`, writes the checkpoint and evaluates on the test set.
pub fn train(cfg: &ExperimentConfig) -> Result<(TrainedModel, Summary)> {
    cfg.validate_method(cfg.method)?;
    let data = datasets(cfg)?;
    let t = train_model(cfg, cfg.method, &data)?;
    let s = evaluate_gnn(&t.model, &t.theta, &t.alpha, t.mode, &data.test)?;
    let entry = SummaryEntry {
        corr_data: None,
        result: RunResult::from_samples(cfg.method, s, cfg)?,
        train_log: Some(t.log.clone()),
        admm_trace: None,
    };
    let summary = Summary {
        command: "train".into(),
        config: cfg.clone(),
        entries: vec![entry],
    };
    Ok((t, summary))
}

/// Sum rate of a checkpoint applied to the network of `cfg` next to a
/// model retrained from scratch on that network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generalization {
    pub generalized: RunResult,
    pub retrained: RunResult,
    /// `generalized.sum_rate / retrained.sum_rate`.
    pub ratio: f64,
}

/// Evaluates the checkpoint at `path` on the test set of `cfg` and
/// retrains the same architecture (with `cfg`'s training settings and
/// seed) for comparison.
pub fn generalization_run(path: &Path, cfg: &ExperimentConfig) -> Result<Generalization> {
    let l = load_for(path, &cfg.net)?;
    let method = Method::from_mode(l.mode);
    let mut rc = cfg.clone();
    rc.gnn = l.model.cfg.clone();
    rc.validate_method(method)?;
    let data = datasets(&rc)?;
    let g = evaluate_gnn(&l.model, &l.theta, &l.alpha, l.mode, &data.test)?;
    let t = train_model(&rc, method, &data)?;
    let r = evaluate_gnn(&t.model, &t.theta, &t.alpha, t.mode, &data.test)?;
    let generalized = RunResult::from_samples(method, g, &rc)?;
    let retrained = RunResult::from_samples(method, r, &rc)?;
    Ok(Generalization {
        ratio: generalized.sum_rate / retrained.sum_rate,
        generalized,
        retrained,
    })
}

fn table_row(s: &mut String, r: &RunResult) {
    let _ = write!(
        s,
        "{},{},{},{},{}",
        r.method.label(),
        r.sum_rate,
        r.runtime_s,
        r.steps,
        r.overhead_kbit
    );
}

/// Comparison table, one row per result. Execution time is in seconds per
/// sample.
pub fn table_csv(results: &[&RunResult]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for r in results {
        table_row(&mut s, r);
        s.push('\n');
    }
    s
}

/// The table of a summary; sweeps get a leading `corr_D` column.
pub fn summary_csv(summary: &Summary) -> String {
    if summary.entries.iter().all(|e| e.corr_data.is_none()) {
        return table_csv(&summary.results());
    }
    let mut s = format!("corr_D,{TABLE_HEADER}\n");
    for e in &summary.entries {
        let _ = write!(
            s,
            "{},",
            e.corr_data.map_or(String::new(), |c| c.to_string())
        );
        table_row(&mut s, &e.result);
        s.push('\n');
    }
    s
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn write_outputs(summary: &Summary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), summary_csv(summary))?;
    summary.save(&dir.join("summary.json"))
}

fn write_series(
    dir: &Path,
    name: &str,
    points: impl IntoIterator<Item = (f64, f64)>,
) -> Result<PathBuf> {
    let mut s = String::new();
    for (x, y) in points {
        let _ = writeln!(s, "{x}\t{y}");
    }
    let p = dir.join(format!("{name}.tsv"));
    fs::write(&p, s)?;
    Ok(p)
}

/// Writes two-column x/y series from `<dir>/summary.json` into
/// `<dir>/plotdata/`:
/// - sweeps: `sweep_sum_rate_<method>` and `sweep_overhead_<method>`
///   against `corr_D`;
/// - single runs: `sum_rate_<method>` per test sample;
/// - training logs: `val_loss_<tag>`, `val_sum_rate_<tag>`, `bits_<tag>`
///   per epoch;
/// - ADMM: `consensus_residual_<tag>` and `objective_<tag>` per iteration.
///
/// `<tag>` is the method name, followed by `_corr<c>` in sweeps.
pub fn export_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let summary = Summary::load(&dir.join("summary.json"))?;
    let pd = dir.join("plotdata");
    fs::create_dir_all(&pd)?;
    let mut out = Vec::new();
    let is_sweep = summary.entries.iter().any(|e| e.corr_data.is_some());
    if is_sweep {
        for m in &summary.config.methods {
            let pts: Vec<&SummaryEntry> = summary
                .entries
                .iter()
                .filter(|e| e.result.method == *m)
                .collect();
            let x = |e: &SummaryEntry| e.corr_data.unwrap_or(f64::NAN);
            out.push(write_series(
                &pd,
                &format!("sweep_sum_rate_{m}"),
                pts.iter().map(|e| (x(e), e.result.sum_rate)),
            )?);
            out.push(write_series(
                &pd,
                &format!("sweep_overhead_{m}"),
                pts.iter().map(|e| (x(e), e.result.overhead_kbit)),
            )?);
        }
    }
    for e in &summary.entries {
        let m = e.result.method;
        let tag = match e.corr_data {
            Some(c) => format!("{m}_corr{c:.2}"),
            None => m.to_string(),
        };
        if !is_sweep {
            let pts = e
                .result
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| (i as f64, s.sum_rate));
            out.push(write_series(&pd, &format!("sum_rate_{tag}"), pts)?);
        }
        if let Some(log) = &e.train_log {
            let ep = |f: fn(&crate::bilevel::EpochRecord) -> f64| {
                log.epochs
                    .iter()
                    .map(move |r| (r.epoch as f64, f(r)))
                    .collect::<Vec<_>>()
            };
            out.push(write_series(
                &pd,
                &format!("val_loss_{tag}"),
                ep(|r| r.val_loss),
            )?);
            out.push(write_series(
                &pd,
                &format!("val_sum_rate_{tag}"),
                ep(|r| r.val_sum_rate),
            )?);
            out.push(write_series(
                &pd,
                &format!("bits_{tag}"),
                ep(|r| r.bits as f64),
            )?);
        }
        if let Some(rep) = &e.admm_trace {
            let it = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .map(|(i, y)| ((i + 1) as f64, *y))
                    .collect::<Vec<_>>()
            };
            out.push(write_series(
                &pd,
                &format!("consensus_residual_{tag}"),
                it(&rep.consensus_residual),
            )?);
            out.push(write_series(
                &pd,
                &format!("objective_{tag}"),
                it(&rep.objective),
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
