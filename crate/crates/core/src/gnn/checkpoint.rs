//! JSON model checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gnn, GnnConfig, Mode};
use crate::autodiff::ParamVector;
use crate::channel::NetworkConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "cfnoma-gnn";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 over the canonical JSON encoding of a serializable value.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash identifying a (network, architecture) pair.
pub fn config_hash(net: &NetworkConfig, gnn: &GnnConfig) -> Result<String> {
    hash_json(&(net, gnn))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub net: NetworkConfig,
    pub gnn: GnnConfig,
    pub mode: Mode,
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// A model restored from disk.
pub struct LoadedModel {
    pub model: Gnn,
    pub theta: ParamVector,
    pub alpha: ParamVector,
    pub mode: Mode,
}

pub fn save(
    path: &Path,
    model: &Gnn,
    theta: &ParamVector,
    alpha: &ParamVector,
    mode: Mode,
) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config_hash: config_hash(&model.net, &model.cfg)?,
        net: model.net.clone(),
        gnn: model.cfg.clone(),
        mode,
        theta: theta.flat().to_vec(),
        alpha: alpha.flat().to_vec(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(&ck)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LoadedModel> {
    if !path.exists() {
        return Err(Error::MissingFile {
            what: "checkpoint",
            path: path.to_path_buf(),
        });
    }
    let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: ck.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if config_hash(&ck.net, &ck.gnn)? != ck.config_hash {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint {} has a config hash that does not match its contents",
            path.display()
        )));
    }
    let model = Gnn::new(ck.net, ck.gnn)?;
    let theta = ParamVector::from_flat(model.theta_layout().clone(), ck.theta)?;
    let alpha = ParamVector::from_flat(model.alpha_layout().clone(), ck.alpha)?;
    Ok(LoadedModel {
        model,
        theta,
        alpha,
        mode: ck.mode,
    })
}
