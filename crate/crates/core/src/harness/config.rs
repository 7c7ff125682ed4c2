//! Experiment configuration files and `key=value` overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::admm::AdmmConfig;
use crate::bilevel::TrainConfig;
use crate::channel::{DatasetSpec, NetworkConfig};
use crate::error::{invalid, Error, Result};
use crate::gnn::checkpoint::hash_json;
use crate::gnn::{GnnConfig, Mode};

/// A scheduling method the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "autognn")]
    AutoGnn,
    #[serde(rename = "fixed_gnn")]
    FixedGnn,
    #[serde(rename = "admm_distributed")]
    AdmmDistributed,
    #[serde(rename = "admm_centralized")]
    AdmmCentralized,
    #[serde(rename = "beta_frozen_oracle")]
    BetaFrozenOracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::AdmmCentralized,
        Method::AdmmDistributed,
        Method::BetaFrozenOracle,
        Method::FixedGnn,
        Method::AutoGnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AutoGnn => "autognn",
            Method::FixedGnn => "fixed_gnn",
            Method::AdmmDistributed => "admm_distributed",
            Method::AdmmCentralized => "admm_centralized",
            Method::BetaFrozenOracle => "beta_frozen_oracle",
        }
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::AutoGnn => "AutoGNN",
            Method::FixedGnn => "Fixed GNN",
            Method::AdmmDistributed => "Distributed ADMM",
            Method::AdmmCentralized => "Centralized ADMM",
            Method::BetaFrozenOracle => "Cluster-based NOMA (frozen SIC)",
        }
    }

    /// The GNN mode of a learned method.
    pub fn gnn_mode(self) -> Option<Mode> {
        match self {
            Method::AutoGnn => Some(Mode::Auto),
            Method::FixedGnn => Some(Mode::Fixed),
            _ => None,
        }
    }

    pub fn from_mode(mode: Mode) -> Self {
        match mode {
            Mode::Auto => Method::AutoGnn,
            Mode::Fixed => Method::FixedGnn,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid("method", format!("unknown method `{s}`")))
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub net: NetworkConfig,
    /// Method used by `train` and `evaluate`.
    pub method: Method,
    /// Methods run by `compare` and `sweep`.
    pub methods: Vec<Method>,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub admm: AdmmConfig,
    pub dataset: DatasetSpec,
    /// `K × K` SIC pattern of the frozen-pattern oracle, used at every BS.
    /// `None` pairs users by channel gain (see [`paired_cluster_pattern`]).
    pub frozen_pattern: Option<Vec<f64>>,
    /// Directory holding `train.json`, `validation.json` and `test.json`.
    /// `None` draws the datasets from `seed`.
    pub data_dir: Option<PathBuf>,
    /// Checkpoint read by `evaluate`; `None` means `<out_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Data-channel correlations visited by `sweep`.
    pub sweep_corr: Vec<f64>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            net: NetworkConfig::default(),
            method: Method::AutoGnn,
            methods: Method::ALL.to_vec(),
            gnn: GnnConfig::default(),
            train: TrainConfig {
                inner_lr: 1e-2,
                ..TrainConfig::default()
            },
            admm: AdmmConfig::default(),
            dataset: DatasetSpec::desk(),
            frozen_pattern: None,
            data_dir: None,
            checkpoint: None,
            sweep_corr: vec![0.5, 0.6, 0.7, 0.8],
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile {
                what: "config",
                path: path.to_path_buf(),
            });
        }
        let cfg: Self = serde_json::from_slice(&fs::read(path)?)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Checks the network and the settings of `method` and every method
    /// in `methods`.
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        for &m in std::iter::once(&self.method).chain(&self.methods) {
            self.validate_method(m)?;
        }
        if self.sweep_corr.iter().any(|c| !(0.0..1.0).contains(c)) {
            return Err(invalid("sweep_corr", "correlations must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn validate_method(&self, method: Method) -> Result<()> {
        match method {
            Method::AutoGnn | Method::FixedGnn => {
                self.gnn.validate()?;
                self.train.validate()?;
                let d = &self.dataset;
                if d.train_batches == 0 || d.val_batches == 0 || d.batch_size == 0 {
                    return Err(invalid(
                        "dataset",
                        "learned methods need training and validation data",
                    ));
                }
            }
            Method::AdmmDistributed | Method::AdmmCentralized => self.admm.validate()?,
            Method::BetaFrozenOracle => {
                self.admm.validate()?;
                self.frozen_pattern()?;
            }
        }
        if self.dataset.test_batches == 0 || self.dataset.batch_size == 0 {
            return Err(invalid("dataset", "the test set is empty"));
        }
        Ok(())
    }

    /// The validated frozen SIC pattern.
    pub fn frozen_pattern(&self) -> Result<Vec<f64>> {
        let kk = self.net.users_per_bs;
        match &self.frozen_pattern {
            Some(p) => {
                check_pattern(p, kk)?;
                Ok(p.clone())
            }
            None => Ok(paired_cluster_pattern(kk)),
        }
    }

    /// Hash of the configuration with the output directory left out.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        hash_json(&c)
    }

    /// Applies `key=value`, where `key` is a dotted path into the JSON form
    /// (`net.snr_db`, `train.epochs`) and `value` is JSON or a bare string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| invalid("override", format!("expected key=value, got `{spec}`")))?;
        let mut v = serde_json::to_value(&*self)?;
        let mut cur = &mut v;
        for part in key.trim().split('.') {
            cur = cur
                .get_mut(part)
                .ok_or_else(|| invalid("override", format!("unknown key `{key}`")))?;
        }
        *cur =
            serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().into()));
        *self = serde_json::from_value(v)?;
        Ok(())
    }
}

/// Checks that `p` is a binary `K × K` pattern with zero diagonal and no
/// mutual SIC.
pub fn check_pattern(p: &[f64], users: usize) -> Result<()> {
    if p.len() != users * users {
        return Err(Error::InvalidPattern(format!(
            "expected {} entries for K = {users}, got {}",
            users * users,
            p.len()
        )));
    }
    for i in 0..users {
        if p[i * users + i] != 0.0 {
            return Err(Error::InvalidPattern(format!(
                "diagonal entry {i} is not zero"
            )));
        }
        for k in 0..users {
            let b = p[i * users + k];
            if b != 0.0 && b != 1.0 {
                return Err(Error::InvalidPattern(format!(
                    "entry ({i}, {k}) = {b} is not binary"
                )));
            }
            if i < k && b + p[k * users + i] > 1.0 {
                return Err(Error::InvalidPattern(format!(
                    "users {i} and {k} decode each other"
                )));
            }
        }
    }
    Ok(())
}

/// Two-user clusters pairing the strongest user with the weakest, the
/// second strongest with the second weakest and so on; the stronger user
/// of a cluster decodes the weaker one. Users are indexed by ascending
/// channel gain.
pub fn paired_cluster_pattern(users: usize) -> Vec<f64> {
    let mut b = vec![0.0; users * users];
    for j in 0..users / 2 {
        b[(users - 1 - j) * users + j] = 1.0;
    }
    b
}
