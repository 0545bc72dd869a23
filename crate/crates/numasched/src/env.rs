//! Episodic decision process over a trace slice.
//!
//! Requests are served strictly in arrival order. The pending request is
//! deployed at the earliest tick, no earlier than the previous request's
//! start, at which any action is feasible; the scheduler only picks *where*
//! it goes. Reward is the negated wait `-(start - arrival)`, so an episode's
//! return is the negated total wait time.

use serde::{Deserialize, Serialize};

use crate::cluster::{Action, ClusterConfig, ClusterState, Placement};
use crate::error::{Error, Result};
use crate::schedulers::Scheduler;
use crate::workload::{EpisodeSpec, VmRequest, WorkloadTrace};

/// Tolerance for feasibility checks done in normalized (0..1) units.
pub const NORM_EPS: f64 = 1e-9;

/// What a policy sees: utilization scaled to node capacity plus the pending
/// request. Capacities themselves are not part of the observation, so one
/// network serves any machine count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pm_count: usize,
    pub dims: usize,
    /// `util / capacity` flattened as `[pm][numa][d]`, length `pm_count*2*dims`.
    pub numa_util: Vec<f64>,
    /// Pending request demand scaled by capacity, length `dims`.
    pub vm_resources: Vec<f64>,
    pub div: bool,
    /// Ticks the pending request has already waited at decision time.
    pub wait_so_far: u64,
    /// True when there is no pending request (terminal padding); the vm
    /// fields are zero in that case.
    pub pending_none: bool,
}

impl Observation {
    pub fn from_cluster(cluster: &ClusterState, vm: Option<&VmRequest>, wait_so_far: u64) -> Observation {
        let cfg = cluster.config();
        let dims = cfg.dims();
        let mut numa_util = cluster.util_flat().to_vec();
        for (i, u) in numa_util.iter_mut().enumerate() {
            *u /= cfg.capacities[i % dims];
        }
        match vm {
            Some(vm) => Observation {
                pm_count: cfg.pm_count,
                dims,
                numa_util,
                vm_resources: vm.resources.iter().zip(cfg.capacities.iter()).map(|(r, c)| r / c).collect(),
                div: vm.div,
                wait_so_far,
                pending_none: false,
            },
            None => Observation {
                pm_count: cfg.pm_count,
                dims,
                numa_util,
                vm_resources: vec![0.0; dims],
                div: false,
                wait_so_far: 0,
                pending_none: true,
            },
        }
    }

    /// Normalized utilization block of one machine: `[numa0 dims, numa1 dims]`.
    pub fn pm_block(&self, pm: usize) -> &[f64] {
        let w = 2 * self.dims;
        &self.numa_util[pm * w..(pm + 1) * w]
    }

    pub fn util(&self, pm: usize, numa: usize, d: usize) -> f64 {
        self.numa_util[(pm * 2 + numa) * self.dims + d]
    }

    /// Feasible actions reconstructed from normalized headroom alone. Agrees
    /// with the ground-truth cluster check up to `NORM_EPS` at the
    /// saturation boundary.
    pub fn feasible_actions(&self) -> Vec<Action> {
        let mut out = Vec::new();
        if self.pending_none {
            return out;
        }
        for pm in 0..self.pm_count {
            if self.div {
                let fits = (0..2).all(|numa| {
                    (0..self.dims).all(|d| self.util(pm, numa, d) + 0.5 * self.vm_resources[d] <= 1.0 + NORM_EPS)
                });
                if fits {
                    out.push(Action::from_pm_numa(pm, 0));
                    out.push(Action::from_pm_numa(pm, 1));
                }
            } else {
                for numa in 0..2 {
                    let fits =
                        (0..self.dims).all(|d| self.util(pm, numa, d) + self.vm_resources[d] <= 1.0 + NORM_EPS);
                    if fits {
                        out.push(Action::from_pm_numa(pm, numa));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    /// Observation for the next pending request, or `None` when the episode
    /// is over.
    pub next_obs: Option<Observation>,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub total_wait: u64,
    pub per_vm_wait: Vec<u64>,
    pub requests_served: usize,
}

/// One deployment record, in episode-relative request order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub j: usize,
    pub arrival: u64,
    pub start: u64,
    pub wait: u64,
    pub action: usize,
    /// 1-based machine id, matching the action numbering.
    pub pm: usize,
    pub numa: String,
}

pub struct SchedEnv<'t> {
    requests: &'t [VmRequest],
    cluster: ClusterState,
    cursor: usize,
    prev_start: u64,
    pending_start: u64,
    feasible: Vec<Action>,
    per_vm_wait: Vec<u64>,
    total_wait: u64,
    log: Vec<LogRow>,
}

impl<'t> SchedEnv<'t> {
    pub fn new(trace: &'t WorkloadTrace, spec: EpisodeSpec, cfg: ClusterConfig) -> Result<Self> {
        if spec.start + spec.len > trace.len() {
            return Err(Error::Config(format!(
                "episode [{}, {}) outside trace of {} requests",
                spec.start,
                spec.start + spec.len,
                trace.len()
            )));
        }
        let requests = &trace.requests[spec.start..spec.start + spec.len];
        for r in requests {
            r.validate(&cfg)?;
        }
        Ok(SchedEnv {
            requests,
            cluster: ClusterState::new(cfg)?,
            cursor: 0,
            prev_start: 0,
            pending_start: 0,
            feasible: Vec::new(),
            per_vm_wait: Vec::new(),
            total_wait: 0,
            log: Vec::new(),
        })
    }

    /// Start the episode on an empty cluster. `None` means the slice is
    /// empty and there is nothing to schedule.
    pub fn reset(&mut self) -> Result<Option<Observation>> {
        self.cluster.reset();
        self.cursor = 0;
        self.prev_start = 0;
        self.pending_start = 0;
        self.per_vm_wait.clear();
        self.total_wait = 0;
        self.log.clear();
        if self.requests.is_empty() {
            return Ok(None);
        }
        self.advance().map(Some)
    }

    /// Move the pending request to its earliest feasible start and build the
    /// observation at that tick. Feasibility is rechecked after every
    /// release; between releases utilization only drops, so scanning release
    /// ticks visits every tick at which feasibility can change.
    fn advance(&mut self) -> Result<Observation> {
        let vm = &self.requests[self.cursor];
        let mut t = vm.arrival.max(self.prev_start);
        self.cluster.release_expired(t)?;
        loop {
            self.feasible = self.cluster.feasible_actions(vm);
            if !self.feasible.is_empty() {
                break;
            }
            t = self
                .cluster
                .next_release_after(t)
                .ok_or(Error::Unschedulable { vm_id: vm.id })?;
            self.cluster.release_expired(t)?;
        }
        self.pending_start = t;
        Ok(Observation::from_cluster(&self.cluster, Some(vm), t - vm.arrival))
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.requests.len()
    }

    pub fn pending_request(&self) -> Option<&VmRequest> {
        self.requests.get(self.cursor)
    }

    /// Start tick the pending request will deploy at.
    pub fn pending_start(&self) -> u64 {
        self.pending_start
    }

    /// Feasible actions for the pending request, ascending.
    pub fn current_feasible(&self) -> &[Action] {
        &self.feasible
    }

    pub fn cluster(&self) -> &ClusterState {
        &self.cluster
    }

    /// Deploy the pending request with `action` at its earliest start.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::Internal("step on a finished episode".into()));
        }
        let vm = &self.requests[self.cursor];
        let placement = self.cluster.deploy(vm, action, self.pending_start)?;
        let wait = self.pending_start - vm.arrival;
        self.total_wait += wait;
        self.per_vm_wait.push(wait);
        self.log.push(LogRow {
            j: self.cursor,
            arrival: vm.arrival,
            start: self.pending_start,
            wait,
            action: Action::from_pm_numa(placement.pm, match placement.numa {
                crate::cluster::NumaMask::Single(n) => n as usize,
                crate::cluster::NumaMask::Both => 0,
            })
            .0,
            pm: placement.pm + 1,
            numa: placement.numa.to_string(),
        });
        self.prev_start = self.pending_start;
        self.cursor += 1;
        let next_obs = if self.is_done() { None } else { Some(self.advance()?) };
        Ok(StepOutcome { reward: -(wait as f64), next_obs, placement })
    }

    pub fn result(&self) -> EpisodeResult {
        EpisodeResult {
            total_wait: self.total_wait,
            per_vm_wait: self.per_vm_wait.clone(),
            requests_served: self.cursor,
        }
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }
}

/// Run one full episode under `scheduler` and return the result and the
/// per-request deployment log.
pub fn run_episode(
    trace: &WorkloadTrace,
    spec: EpisodeSpec,
    cfg: &ClusterConfig,
    scheduler: &mut dyn Scheduler,
) -> Result<(EpisodeResult, Vec<LogRow>)> {
    let mut env = SchedEnv::new(trace, spec, cfg.clone())?;
    let mut obs = env.reset()?;
    while let Some(o) = obs {
        let action = scheduler.choose(&o, env.current_feasible())?;
        let out = env.step(action)?;
        obs = out.next_obs;
    }
    let result = env.result();
    Ok((result, env.log().to_vec()))
}

/// Episode over a whole trace.
pub fn full_trace_spec(trace: &WorkloadTrace) -> EpisodeSpec {
    EpisodeSpec { start: 0, len: trace.len() }
}
