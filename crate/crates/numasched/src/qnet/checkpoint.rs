//! Self-describing JSON checkpoints: architecture, config, and every named
//! tensor with its shape and row-major values. Values survive a round trip
//! bit-for-bit (shortest-representation float encoding on write, exact parse
//! on read).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dense::{ParamSet, Tensor};
use super::{MlpNet, QNetwork, QnetConfig, SpaneNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "numasched-qnet-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// "spane" or "mlp".
    pub arch: String,
    /// Machine count for size-bound architectures, absent for "spane".
    pub pm_count: Option<usize>,
    pub config: QnetConfig,
    pub tensors: Vec<Tensor>,
    /// Free-form provenance (config hash, seed, epoch, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_net(net: &QNetwork, meta: BTreeMap<String, String>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            arch: net.arch_token().to_string(),
            pm_count: net.bound_pm_count(),
            config: net.config().clone(),
            tensors: net.params().tensors.clone(),
            meta,
        }
    }

    pub fn into_net(self) -> Result<(QNetwork, BTreeMap<String, String>)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Model(format!(
                "unknown checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                self.format
            )));
        }
        let params = ParamSet { tensors: self.tensors };
        let net = match self.arch.as_str() {
            "spane" => QNetwork::Spane(SpaneNet::from_params(self.config, params)?),
            "mlp" => {
                let m = self.pm_count.ok_or_else(|| {
                    Error::Model("mlp checkpoint is missing its machine count".into())
                })?;
                QNetwork::Mlp(MlpNet::from_params(self.config, m, params)?)
            }
            other => return Err(Error::Model(format!("unknown checkpoint arch {other:?}"))),
        };
        Ok((net, self.meta))
    }
}

pub fn save_checkpoint<P: AsRef<Path>>(
    net: &QNetwork,
    meta: BTreeMap<String, String>,
    path: P,
) -> Result<()> {
    let ckpt = Checkpoint::from_net(net, meta);
    let json = serde_json::to_string_pretty(&ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(QNetwork, BTreeMap<String, String>)> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.into_net()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng, Stream};

    #[test]
    fn round_trip_is_bit_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let mut r = rng(42, Stream::Init);
        let net = QNetwork::new_spane(QnetConfig::for_dims(2), &mut r);
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "42".to_string());
        save_checkpoint(&net, meta.clone(), &path).unwrap();
        let (loaded, got_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(got_meta, meta);
        for (a, b) in net.params().tensors.iter().zip(loaded.params().tensors.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.rows, b.rows);
            assert_eq!(a.cols, b.cols);
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "tensor {} drifted", a.name);
            }
        }
        // and a second save is byte-identical
        let path2 = dir.path().join("net2.json");
        save_checkpoint(&loaded, got_meta, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn mlp_round_trip_keeps_binding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.json");
        let mut r = rng(1, Stream::Init);
        let net = QNetwork::new_mlp(QnetConfig::for_dims(2), 5, &mut r);
        save_checkpoint(&net, BTreeMap::new(), &path).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.bound_pm_count(), Some(5));
    }

    #[test]
    fn corrupted_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let mut r = rng(2, Stream::Init);
        let net = QNetwork::new_spane(QnetConfig::for_dims(1), &mut r);
        let mut ckpt = Checkpoint::from_net(&net, BTreeMap::new());
        ckpt.tensors[0].rows += 1;
        std::fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Model(_))));
    }
}
