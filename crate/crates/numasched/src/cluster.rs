//! Resource accounting for a cluster of `m` machines, each split into two
//! NUMA nodes with `dims` capacity entries per node.
//!
//! Placement actions are numbered `1..=2m`: action `a` targets machine
//! `floor((a+1)/2)` (1-based) and node `(a+1) mod 2`, so odd actions hit node
//! 0 and even actions node 1. A request flagged `div` is charged half of its
//! demand to both nodes of one machine; both of that machine's action ids are
//! then interchangeable and deployment records the odd one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::VmRequest;

/// Slack applied to every capacity comparison. Exact-fit workloads (e.g. q
/// equal slices filling a node) accumulate ulp-scale float error; anything
/// beyond this bound is a real violation.
pub const CAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Number of physical machines.
    pub pm_count: usize,
    /// Per-NUMA-node capacity for each resource dimension.
    pub capacities: Vec<f64>,
    /// 1-based index of the resource that decides the NUMA-split rule.
    pub div_resource: usize,
    /// Requests demanding at least this much of `div_resource` are split.
    pub div_threshold: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        // 5 machines, (cpu, memory) = (40, 90) per node, split on memory >= 10.
        ClusterConfig {
            pm_count: 5,
            capacities: vec![40.0, 90.0],
            div_resource: 2,
            div_threshold: 10.0,
        }
    }
}

impl ClusterConfig {
    pub fn new(pm_count: usize, capacities: Vec<f64>, div_resource: usize, div_threshold: f64) -> Self {
        ClusterConfig { pm_count, capacities, div_resource, div_threshold }
    }

    pub fn dims(&self) -> usize {
        self.capacities.len()
    }

    pub fn action_count(&self) -> usize {
        2 * self.pm_count
    }

    /// Same cluster with a different machine count; capacities and the split
    /// rule carry over.
    pub fn with_pm_count(&self, pm_count: usize) -> Self {
        ClusterConfig { pm_count, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pm_count == 0 {
            return Err(Error::Config("pm_count must be at least 1".into()));
        }
        if self.capacities.is_empty() {
            return Err(Error::Config("need at least one resource dimension".into()));
        }
        if self.capacities.iter().any(|&c| !c.is_finite() || c <= 0.0) {
            return Err(Error::Config("capacities must be finite and positive".into()));
        }
        if self.div_resource == 0 || self.div_resource > self.dims() {
            return Err(Error::Config(format!(
                "div_resource {} out of range 1..={}",
                self.div_resource,
                self.dims()
            )));
        }
        if !self.div_threshold.is_finite() {
            return Err(Error::Config("div_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Placement action id in `1..=2m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action(pub usize);

impl Action {
    pub fn from_pm_numa(pm: usize, numa: usize) -> Action {
        debug_assert!(numa < 2);
        Action(2 * pm + 1 + numa)
    }

    /// 0-based machine index.
    pub fn pm(self) -> usize {
        self.0.div_ceil(2) - 1
    }

    /// Node index, 0 for odd ids and 1 for even ids.
    pub fn numa(self) -> usize {
        (self.0 + 1) % 2
    }

    pub fn in_range(self, pm_count: usize) -> bool {
        self.0 >= 1 && self.0 <= 2 * pm_count
    }

    /// Odd action of the same machine; the canonical id for split requests.
    pub fn canonical_for_pm(self) -> Action {
        Action::from_pm_numa(self.pm(), 0)
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Nodes occupied by one placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumaMask {
    Single(u8),
    Both,
}

impl NumaMask {
    pub fn nodes(self) -> &'static [usize] {
        match self {
            NumaMask::Single(0) => &[0],
            NumaMask::Single(_) => &[1],
            NumaMask::Both => &[0, 1],
        }
    }
}

impl std::fmt::Display for NumaMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NumaMask::Single(n) => write!(f, "{n}"),
            NumaMask::Both => write!(f, "01"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub vm_id: usize,
    pub pm: usize,
    pub numa: NumaMask,
    pub start: u64,
    /// First tick at which the VM is gone; occupancy is `[start, end)`.
    pub end: u64,
    /// Per-node share factor: 1.0 for single-node, 0.5 for split placements.
    pub gamma: f64,
    pub resources: Vec<f64>,
}

impl Placement {
    /// Demand charged to each occupied node in dimension `d`.
    pub fn share(&self, d: usize) -> f64 {
        self.gamma * self.resources[d]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterSnapshot {
    pub tick: u64,
    /// `util[pm][numa][d]`, raw (unnormalized) units.
    pub util: Vec<Vec<Vec<f64>>>,
    pub active: Vec<Placement>,
}

/// Mutable cluster occupancy: per-node utilization plus the set of active
/// placements keyed by `(end, insertion_seq)` so releases pop in a stable
/// order.
#[derive(Debug, Clone)]
pub struct ClusterState {
    cfg: ClusterConfig,
    util: Vec<f64>,
    active: BTreeMap<(u64, u64), Placement>,
    seq: u64,
    last_release: u64,
}

impl ClusterState {
    pub fn new(cfg: ClusterConfig) -> Result<Self> {
        cfg.validate()?;
        let util = vec![0.0; cfg.pm_count * 2 * cfg.dims()];
        Ok(ClusterState { cfg, util, active: BTreeMap::new(), seq: 0, last_release: 0 })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.util.iter_mut().for_each(|u| *u = 0.0);
        self.active.clear();
        self.seq = 0;
        self.last_release = 0;
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn active_placements(&self) -> impl Iterator<Item = &Placement> {
        self.active.values()
    }

    fn idx(&self, pm: usize, numa: usize, d: usize) -> usize {
        (pm * 2 + numa) * self.cfg.dims() + d
    }

    pub fn util(&self, pm: usize, numa: usize, d: usize) -> f64 {
        self.util[self.idx(pm, numa, d)]
    }

    /// Flat `[pm][numa][d]` view of current utilization.
    pub fn util_flat(&self) -> &[f64] {
        &self.util
    }

    fn node_fits(&self, pm: usize, numa: usize, vm: &VmRequest, share: f64) -> bool {
        (0..self.cfg.dims()).all(|d| {
            self.util(pm, numa, d) + share * vm.resources[d] <= self.cfg.capacities[d] + CAP_EPS
        })
    }

    /// Whether `action` can host `vm` right now. Split requests need both
    /// nodes of the target machine to fit half of the demand.
    pub fn feasible(&self, vm: &VmRequest, action: Action) -> bool {
        if !action.in_range(self.cfg.pm_count) {
            return false;
        }
        let pm = action.pm();
        if vm.div {
            self.node_fits(pm, 0, vm, 0.5) && self.node_fits(pm, 1, vm, 0.5)
        } else {
            self.node_fits(pm, action.numa(), vm, 1.0)
        }
    }

    /// All feasible actions in ascending id order. For split requests both
    /// ids of a feasible machine are listed; they are synonyms.
    pub fn feasible_actions(&self, vm: &VmRequest) -> Vec<Action> {
        (1..=self.cfg.action_count())
            .map(Action)
            .filter(|&a| self.feasible(vm, a))
            .collect()
    }

    /// Charge `vm` to the cluster at tick `t`. The action must be feasible;
    /// split deployments are recorded under the machine's odd action id.
    pub fn deploy(&mut self, vm: &VmRequest, action: Action, t: u64) -> Result<Placement> {
        if !self.feasible(vm, action) {
            return Err(Error::InfeasibleAction { action, vm_id: vm.id, tick: t });
        }
        let pm = action.pm();
        let (mask, gamma) = if vm.div { (NumaMask::Both, 0.5) } else { (NumaMask::Single(action.numa() as u8), 1.0) };
        for &numa in mask.nodes() {
            for d in 0..self.cfg.dims() {
                let i = self.idx(pm, numa, d);
                self.util[i] += gamma * vm.resources[d];
            }
        }
        let placement = Placement {
            vm_id: vm.id,
            pm,
            numa: mask,
            start: t,
            end: t + vm.lifetime,
            gamma,
            resources: vm.resources.clone(),
        };
        self.active.insert((placement.end, self.seq), placement.clone());
        self.seq += 1;
        Ok(placement)
    }

    /// Remove every placement with `end <= t` and return their vm ids in
    /// `(end, insertion)` order. Ticks must be passed in non-decreasing order.
    pub fn release_expired(&mut self, t: u64) -> Result<Vec<usize>> {
        if t < self.last_release {
            return Err(Error::Internal(format!(
                "release tick went backwards: {} after {}",
                t, self.last_release
            )));
        }
        self.last_release = t;
        let mut released = Vec::new();
        while let Some((&(end, seq), _)) = self.active.first_key_value() {
            if end > t {
                break;
            }
            let p = self.active.remove(&(end, seq)).expect("key just observed");
            for &numa in p.numa.nodes() {
                for d in 0..self.cfg.dims() {
                    let i = self.idx(p.pm, numa, d);
                    self.util[i] -= p.share(d);
                    if self.util[i] < 0.0 {
                        if self.util[i] < -CAP_EPS {
                            return Err(Error::Accounting(format!(
                                "utilization underflow {} at pm {} numa {} dim {}",
                                self.util[i], p.pm, numa, d
                            )));
                        }
                        self.util[i] = 0.0;
                    }
                }
            }
            released.push(p.vm_id);
        }
        Ok(released)
    }

    /// Earliest placement end strictly after `t`, if any placement remains.
    pub fn next_release_after(&self, t: u64) -> Option<u64> {
        self.active.keys().map(|&(end, _)| end).find(|&end| end > t)
    }

    /// Utilization rebuilt from scratch from the active placements.
    pub fn recompute_util(&self) -> Vec<f64> {
        let mut util = vec![0.0; self.util.len()];
        for p in self.active.values() {
            for &numa in p.numa.nodes() {
                for d in 0..self.cfg.dims() {
                    util[(p.pm * 2 + numa) * self.cfg.dims() + d] += p.share(d);
                }
            }
        }
        util
    }

    /// Check the incremental counters against a full recomputation and the
    /// capacity bounds. Any drift beyond `CAP_EPS` is an accounting bug.
    pub fn verify_accounting(&self) -> Result<()> {
        let fresh = self.recompute_util();
        for (i, (&inc, &full)) in self.util.iter().zip(fresh.iter()).enumerate() {
            if (inc - full).abs() > CAP_EPS {
                return Err(Error::Accounting(format!(
                    "incremental {} vs recomputed {} at flat index {}",
                    inc, full, i
                )));
            }
            let d = i % self.cfg.dims();
            if inc < -CAP_EPS || inc > self.cfg.capacities[d] + CAP_EPS {
                return Err(Error::Accounting(format!(
                    "utilization {} out of [0, {}] at flat index {}",
                    inc, self.cfg.capacities[d], i
                )));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self, tick: u64) -> ClusterSnapshot {
        let dims = self.cfg.dims();
        let util = (0..self.cfg.pm_count)
            .map(|pm| {
                (0..2)
                    .map(|numa| (0..dims).map(|d| self.util(pm, numa, d)).collect())
                    .collect()
            })
            .collect();
        ClusterSnapshot { tick, util, active: self.active.values().cloned().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vm(id: usize, resources: Vec<f64>, lifetime: u64, div: bool) -> VmRequest {
        VmRequest { id, resources, arrival: 0, lifetime, div }
    }

    fn small_cluster() -> ClusterState {
        ClusterState::new(ClusterConfig::new(2, vec![40.0, 90.0], 2, 10.0)).unwrap()
    }

    #[test]
    fn action_codec_round_trips() {
        for pm in 0..4 {
            for numa in 0..2 {
                let a = Action::from_pm_numa(pm, numa);
                assert_eq!(a.pm(), pm);
                assert_eq!(a.numa(), numa);
            }
        }
        // fixed points of the encoding
        assert_eq!(Action(1).pm(), 0);
        assert_eq!(Action(1).numa(), 0);
        assert_eq!(Action(2).numa(), 1);
        assert_eq!(Action(3).pm(), 1);
        assert_eq!(Action(3).numa(), 0);
    }

    #[test]
    fn deploy_single_node_charges_one_node() {
        let mut c = small_cluster();
        let v = vm(0, vec![4.0, 8.0], 10, false);
        let p = c.deploy(&v, Action(3), 0).unwrap();
        assert_eq!(p.pm, 1);
        assert_eq!(p.numa, NumaMask::Single(0));
        assert_eq!(c.util(1, 0, 0), 4.0);
        assert_eq!(c.util(1, 0, 1), 8.0);
        assert_eq!(c.util(1, 1, 0), 0.0);
        assert_eq!(c.util(0, 0, 0), 0.0);
    }

    #[test]
    fn deploy_split_charges_both_nodes_half() {
        let mut c = small_cluster();
        let v = vm(0, vec![16.0, 32.0], 5, true);
        // even id maps to the same machine and is recorded as the odd one
        let p = c.deploy(&v, Action(2), 7).unwrap();
        assert_eq!(p.pm, 0);
        assert_eq!(p.numa, NumaMask::Both);
        assert_eq!(p.gamma, 0.5);
        assert_eq!(p.end, 12);
        assert_eq!(c.util(0, 0, 0), 8.0);
        assert_eq!(c.util(0, 1, 0), 8.0);
        assert_eq!(c.util(0, 0, 1), 16.0);
        assert_eq!(c.util(0, 1, 1), 16.0);
    }

    #[test]
    fn infeasible_deploy_is_rejected_and_state_unchanged() {
        let mut c = small_cluster();
        let v = vm(0, vec![30.0, 20.0], 10, false);
        c.deploy(&v, Action(1), 0).unwrap();
        let before = c.util_flat().to_vec();
        let err = c.deploy(&vm(1, vec![30.0, 20.0], 10, false), Action(1), 0).unwrap_err();
        assert!(matches!(err, Error::InfeasibleAction { .. }));
        assert_eq!(c.util_flat(), &before[..]);
    }

    #[test]
    fn feasible_actions_sorted_and_complete() {
        let mut c = small_cluster();
        c.deploy(&vm(0, vec![40.0, 10.0], 10, false), Action(1), 0).unwrap();
        let v = vm(1, vec![4.0, 8.0], 10, false);
        let acts: Vec<usize> = c.feasible_actions(&v).iter().map(|a| a.0).collect();
        assert_eq!(acts, vec![2, 3, 4]);
        // a split request lists both ids of each machine whose two nodes both
        // fit half the demand; machine 0 has a cpu-full node
        let s = vm(2, vec![8.0, 40.0], 10, true);
        let acts: Vec<usize> = c.feasible_actions(&s).iter().map(|a| a.0).collect();
        assert_eq!(acts, vec![3, 4]);
    }

    #[test]
    fn release_is_exact_inverse_of_deploy() {
        let mut c = small_cluster();
        let v0 = vm(0, vec![4.0, 8.0], 3, false);
        let v1 = vm(1, vec![16.0, 32.0], 5, true);
        c.deploy(&v0, Action(1), 0).unwrap();
        c.deploy(&v1, Action(3), 0).unwrap();
        let released = c.release_expired(3).unwrap();
        assert_eq!(released, vec![0]);
        assert_eq!(c.util(0, 0, 0), 0.0);
        let released = c.release_expired(5).unwrap();
        assert_eq!(released, vec![1]);
        assert!(c.is_empty());
        assert!(c.util_flat().iter().all(|&u| u == 0.0));
        c.verify_accounting().unwrap();
    }

    #[test]
    fn release_at_end_tick_frees_capacity_for_same_tick_deploy() {
        let mut c = small_cluster();
        c.deploy(&vm(0, vec![40.0, 90.0], 4, false), Action(1), 0).unwrap();
        let v = vm(1, vec![40.0, 90.0], 1, false);
        assert!(!c.feasible(&v, Action(1)));
        c.release_expired(4).unwrap();
        assert!(c.feasible(&v, Action(1)));
    }

    #[test]
    fn release_time_must_not_go_backwards() {
        let mut c = small_cluster();
        c.release_expired(5).unwrap();
        assert!(c.release_expired(4).is_err());
    }

    #[test]
    fn exact_fill_is_feasible_under_eps() {
        // 2q slices of 1/(2q) saturate a node exactly; float error stays
        // within CAP_EPS and the final slice must still fit.
        let cfg = ClusterConfig::new(1, vec![0.5], 1, 0.6);
        let mut c = ClusterState::new(cfg).unwrap();
        let q = 50;
        for id in 0..q {
            let v = vm(id, vec![1.0 / (2.0 * q as f64)], 1, false);
            assert!(c.feasible(&v, Action(1)), "slice {id} no longer fits");
            c.deploy(&v, Action(1), 0).unwrap();
        }
        c.verify_accounting().unwrap();
        // node is full now: one more slice must not fit
        let v = vm(q, vec![1.0 / (2.0 * q as f64)], 1, false);
        assert!(!c.feasible(&v, Action(1)));
    }

    #[test]
    fn snapshot_serializes() {
        let mut c = small_cluster();
        c.deploy(&vm(0, vec![4.0, 8.0], 3, false), Action(1), 0).unwrap();
        let snap = c.snapshot(0);
        let json = serde_json::to_string(&snap).unwrap();
        assert!(json.contains("\"tick\":0"));
        assert!(json.contains("\"vm_id\":0"));
    }
}
