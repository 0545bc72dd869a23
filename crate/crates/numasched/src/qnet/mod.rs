//! Dueling action-value networks over cluster observations, written by hand
//! so the gradients are exact and the parameter layout is stable across
//! checkpoints.
//!
//! Two architectures share the observation encoding:
//!
//! * [`SpaneNet`] embeds each machine with a shared encoder, mean-pools the
//!   embeddings into a cluster summary, and scores each machine's two nodes
//!   with a shared advantage head. Its parameter count is independent of the
//!   machine count, and relabeling machines permutes its outputs in lockstep
//!   (value invariant, advantages equivariant).
//! * [`MlpNet`] flattens the whole observation into one input vector; it is
//!   bound to the machine count it was built for and has no symmetry
//!   structure.

mod checkpoint;
mod dense;
mod mlp;
mod spane;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use dense::{Activation, Adam, Dense, ParamSet, Stack, StackCache, Tensor};
pub use mlp::MlpNet;
pub use spane::SpaneNet;

use serde::{Deserialize, Serialize};

use crate::cluster::Action;
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::rng::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Spane,
    Mlp,
    /// MLP trained with permutation-augmented replay; the network itself is
    /// identical to [`Arch::Mlp`].
    MlpAug,
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spane" => Ok(Arch::Spane),
            "mlp" => Ok(Arch::Mlp),
            "mlp_aug" => Ok(Arch::MlpAug),
            other => Err(Error::Config(format!("unknown arch {other:?}"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Arch::Spane => "spane",
            Arch::Mlp => "mlp",
            Arch::MlpAug => "mlp_aug",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QnetConfig {
    /// Resource dimensions per node; must match the cluster config.
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default = "default_embed")]
    pub embed_hidden: usize,
    #[serde(default = "default_embed")]
    pub embed_width: usize,
    #[serde(default = "default_embed")]
    pub value_hidden: usize,
    #[serde(default = "default_adv_hidden")]
    pub adv_hidden: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
    /// Feed the split flag to the networks.
    #[serde(default = "default_true")]
    pub include_div: bool,
    /// Feed `ln(1 + wait_so_far)` to the networks.
    #[serde(default = "default_true")]
    pub include_wait: bool,
    /// Append the request features to each machine-encoder input as well.
    #[serde(default = "default_true")]
    pub vm_feats_to_embed: bool,
    /// Subtract the mean advantage before adding the value. Off by default:
    /// the value and advantage heads are summed as-is.
    #[serde(default)]
    pub centered_advantage: bool,
}

fn default_dims() -> usize {
    2
}
fn default_embed() -> usize {
    8
}
fn default_adv_hidden() -> usize {
    16
}
fn default_mlp_hidden() -> usize {
    32
}
fn default_true() -> bool {
    true
}

impl Default for QnetConfig {
    fn default() -> Self {
        Self::for_dims(default_dims())
    }
}

impl QnetConfig {
    pub fn for_dims(dims: usize) -> Self {
        QnetConfig {
            dims,
            embed_hidden: 8,
            embed_width: 8,
            value_hidden: 8,
            adv_hidden: 16,
            mlp_hidden: 32,
            include_div: true,
            include_wait: true,
            vm_feats_to_embed: true,
            centered_advantage: false,
        }
    }

    pub fn vm_feat_width(&self) -> usize {
        self.dims + usize::from(self.include_div) + usize::from(self.include_wait)
    }
}

/// Request features shared by all sub-networks: normalized demand, the split
/// flag, and a compressed wait signal. All-zero when no request is pending.
pub fn vm_features(obs: &Observation, cfg: &QnetConfig) -> Vec<f64> {
    let mut f = Vec::with_capacity(cfg.vm_feat_width());
    f.extend_from_slice(&obs.vm_resources);
    if cfg.include_div {
        f.push(if obs.div { 1.0 } else { 0.0 });
    }
    if cfg.include_wait {
        f.push((obs.wait_so_far as f64).ln_1p());
    }
    f
}

#[derive(Debug, Clone)]
pub struct QOutput {
    pub value: f64,
    /// Per-action advantages, length `2 * pm_count`.
    pub adv: Vec<f64>,
    /// Action values, length `2 * pm_count`.
    pub q: Vec<f64>,
}

/// One supervised sample for a gradient step.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub obs: &'a Observation,
    pub action: Action,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub enum QNetwork {
    Spane(SpaneNet),
    Mlp(MlpNet),
}

impl QNetwork {
    pub fn new_spane(cfg: QnetConfig, rng: &mut DetRng) -> QNetwork {
        QNetwork::Spane(SpaneNet::new(cfg, rng))
    }

    pub fn new_mlp(cfg: QnetConfig, pm_count: usize, rng: &mut DetRng) -> QNetwork {
        QNetwork::Mlp(MlpNet::new(cfg, pm_count, rng))
    }

    pub fn forward(&self, obs: &Observation) -> Result<QOutput> {
        match self {
            QNetwork::Spane(n) => n.forward(obs),
            QNetwork::Mlp(n) => n.forward(obs),
        }
    }

    /// Mean-squared-error gradients of `(q[action] - target)^2` over the
    /// batch. Returns `(mse, grads)` with grads aligned to `params()`.
    pub fn backward_batch(&self, batch: &[TrainSample<'_>]) -> Result<(f64, Vec<Vec<f64>>)> {
        match self {
            QNetwork::Spane(n) => n.backward_batch(batch),
            QNetwork::Mlp(n) => n.backward_batch(batch),
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            QNetwork::Spane(n) => &n.params,
            QNetwork::Mlp(n) => &n.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            QNetwork::Spane(n) => &mut n.params,
            QNetwork::Mlp(n) => &mut n.params,
        }
    }

    pub fn config(&self) -> &QnetConfig {
        match self {
            QNetwork::Spane(n) => &n.cfg,
            QNetwork::Mlp(n) => &n.cfg,
        }
    }

    /// Machine count the network is bound to; `None` for the size-free
    /// architecture.
    pub fn bound_pm_count(&self) -> Option<usize> {
        match self {
            QNetwork::Spane(_) => None,
            QNetwork::Mlp(n) => Some(n.pm_count),
        }
    }

    pub fn arch_token(&self) -> &'static str {
        match self {
            QNetwork::Spane(_) => "spane",
            QNetwork::Mlp(_) => "mlp",
        }
    }
}

// ---------------------------------------------------------------------------
// Machine relabelings
// ---------------------------------------------------------------------------
//
// A permutation is stored as a 0-based gather list: `out[i] = in[perm[i]]`.
// The same list permutes observations (machine blocks), per-action vectors
// (adjacent id pairs), and single action ids.

/// Uniform random permutation of `0..m` (Fisher-Yates).
pub fn random_permutation(m: usize, rng: &mut DetRng) -> Vec<usize> {
    use rand::Rng;
    let mut p: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.gen_range(0..=i);
        p.swap(i, j);
    }
    p
}

/// Uniform random non-identity permutation; needs `m >= 2`.
pub fn random_non_identity_permutation(m: usize, rng: &mut DetRng) -> Vec<usize> {
    assert!(m >= 2, "no non-identity permutation of fewer than 2 machines");
    loop {
        let p = random_permutation(m, rng);
        if p.iter().enumerate().any(|(i, &v)| i != v) {
            return p;
        }
    }
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn compose_permutations(outer: &[usize], inner: &[usize]) -> Vec<usize> {
    // gather by inner, then by outer: out[i] = in[inner[outer[i]]]
    outer.iter().map(|&o| inner[o]).collect()
}

/// Relabel machines in an observation: block `i` of the result is block
/// `perm[i]` of the input. Request features are untouched.
pub fn permute_obs(obs: &Observation, perm: &[usize]) -> Observation {
    assert_eq!(perm.len(), obs.pm_count);
    let w = 2 * obs.dims;
    let mut numa_util = Vec::with_capacity(obs.numa_util.len());
    for &p in perm {
        numa_util.extend_from_slice(&obs.numa_util[p * w..(p + 1) * w]);
    }
    Observation { numa_util, ..obs.clone() }
}

/// Apply the same relabeling to a per-action vector: the id pair of machine
/// `i` in the result is the pair of machine `perm[i]` in the input.
pub fn permute_action_vector(v: &[f64], perm: &[usize]) -> Vec<f64> {
    assert_eq!(v.len(), 2 * perm.len());
    let mut out = Vec::with_capacity(v.len());
    for &p in perm {
        out.push(v[2 * p]);
        out.push(v[2 * p + 1]);
    }
    out
}

/// Relabel a single action id: the machine index maps through `perm` and the
/// node parity is preserved.
pub fn permute_action_id(a: Action, perm: &[usize]) -> Action {
    let k = perm[a.pm()] + 1; // 1-based machine after relabeling
    let i = a.0 % 2;
    Action(2 * k - i)
}
