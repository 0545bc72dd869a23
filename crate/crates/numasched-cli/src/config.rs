//! Run configuration: TOML file, flag overrides, and the content hash that
//! gets embedded in every output file.

use anyhow::{Context, Result};
use numasched::cluster::ClusterConfig;
use numasched::drl::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; a `--out` flag and `NUMASCHED_OUT` take precedence
    /// in that order.
    pub out: Option<PathBuf>,
    /// Default workload file for commands that read one.
    pub trace: Option<PathBuf>,
    pub cluster: ClusterConfig,
    pub train: TrainConfig,
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Hash of the effective (post-override) configuration.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let json = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&json);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Output directory resolution; the directory is created.
pub fn resolve_out(flag: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("NUMASCHED_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}
