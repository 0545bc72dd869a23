//! VM requests, traces, trace ingestion, and instance generators.
//!
//! Two on-disk formats are understood:
//!
//! * the external request log `vm_id,cpu,memory,time,type` where `type` 0 is
//!   a creation and 1 a deletion, paired by `vm_id`;
//! * the internal format `id,arrival,lifetime,div,r0,r1,...` written by
//!   [`save_trace`], with a JSON config sidecar so a saved instance replays
//!   under the exact cluster it was generated for.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterConfig, ClusterState};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::rng::{rng, DetRng, Stream};
use crate::schedulers::Scheduler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmRequest {
    /// Ordinal position in the trace.
    pub id: usize,
    /// Demand per resource dimension, in the same units as the capacities.
    pub resources: Vec<f64>,
    pub arrival: u64,
    pub lifetime: u64,
    /// Whether the request is spread over both NUMA nodes of one machine.
    pub div: bool,
}

impl VmRequest {
    pub fn gamma(&self) -> f64 {
        if self.div {
            0.5
        } else {
            1.0
        }
    }

    /// A request is placeable iff an empty machine can host it: full demand
    /// on one node for compact requests, half on each node for split ones.
    pub fn placeable(&self, cfg: &ClusterConfig) -> bool {
        self.resources.len() == cfg.dims()
            && self
                .resources
                .iter()
                .zip(cfg.capacities.iter())
                .all(|(&r, &cap)| r >= 0.0 && r.is_finite() && self.gamma() * r <= cap)
    }

    pub fn validate(&self, cfg: &ClusterConfig) -> Result<()> {
        if self.lifetime == 0 {
            return Err(Error::TraceData(format!("vm {} has zero lifetime", self.id)));
        }
        if !self.placeable(cfg) {
            return Err(Error::Unschedulable { vm_id: self.id });
        }
        Ok(())
    }
}

/// Split rule: a request is spread over both nodes iff its demand in the
/// configured resource reaches the threshold.
pub fn classify_div(resources: &[f64], cfg: &ClusterConfig) -> Result<bool> {
    if cfg.div_resource == 0 || cfg.div_resource > resources.len() {
        return Err(Error::Config(format!(
            "div_resource {} out of range for {} dims",
            cfg.div_resource,
            resources.len()
        )));
    }
    Ok(resources[cfg.div_resource - 1] >= cfg.div_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub requests: Vec<VmRequest>,
    /// Last tick any request could still be running if started on arrival.
    pub horizon: u64,
}

impl WorkloadTrace {
    /// Sort by `(arrival, insertion order)` and renumber ids ordinally.
    pub fn new(mut requests: Vec<VmRequest>) -> Self {
        requests.sort_by_key(|r| r.arrival);
        for (j, r) in requests.iter_mut().enumerate() {
            r.id = j;
        }
        let horizon = requests.iter().map(|r| r.arrival + r.lifetime).max().unwrap_or(0);
        WorkloadTrace { requests, horizon }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn validate(&self, cfg: &ClusterConfig) -> Result<()> {
        let mut prev = 0;
        for (j, r) in self.requests.iter().enumerate() {
            if r.id != j {
                return Err(Error::TraceData(format!("id {} at position {}", r.id, j)));
            }
            if r.arrival < prev {
                return Err(Error::TraceData(format!("arrivals not sorted at position {j}")));
            }
            prev = r.arrival;
            r.validate(cfg)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// A contiguous run of requests within a trace. Episodes always start on an
/// empty cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub start: usize,
    pub len: usize,
}

/// Request-index ranges for the train/valid/test portions of a trace, at
/// fixed proportions 5:2:4 of the trace length.
pub fn split_range(trace_len: usize, split: Split) -> std::ops::Range<usize> {
    let b1 = trace_len * 5 / 11;
    let b2 = trace_len * 7 / 11;
    match split {
        Split::Train => 0..b1,
        Split::Valid => b1..b2,
        Split::Test => b2..trace_len,
    }
}

/// Draw one episode whose start is uniform over the split's range. Episodes
/// running past the end of the trace are truncated.
pub fn sample_episode(trace: &WorkloadTrace, split: Split, len: usize, rng: &mut DetRng) -> Result<EpisodeSpec> {
    let range = split_range(trace.len(), split);
    if range.is_empty() {
        return Err(Error::Config(format!("split {split:?} of a {}-request trace is empty", trace.len())));
    }
    if len == 0 {
        return Err(Error::Config("episode length must be at least 1".into()));
    }
    let start = rng.gen_range(range);
    let len = len.min(trace.len() - start);
    Ok(EpisodeSpec { start, len })
}

/// A reproducible episode set: the same `(seed, split, len, count)` always
/// yields the same episodes, independent of anything sampled elsewhere.
pub fn frozen_episodes(
    trace: &WorkloadTrace,
    split: Split,
    len: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<EpisodeSpec>> {
    let stream = match split {
        Split::Train => Stream::EpisodeSample,
        Split::Valid => Stream::ValidSet,
        Split::Test => Stream::TestSet,
    };
    let mut r = rng(seed, stream);
    (0..count).map(|_| sample_episode(trace, split, len, &mut r)).collect()
}

// ---------------------------------------------------------------------------
// External trace ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub rows: usize,
    pub creations: usize,
    pub deletions: usize,
    /// Creation/deletion pairs kept in the trace.
    pub paired: usize,
    /// Creations with no matching deletion by end of file (discarded).
    pub dropped_unfinished: usize,
    /// Deletions whose vm id had no pending creation (ignored).
    pub unmatched_deletions: usize,
    /// Pairs deleted in the same tick they were created (discarded).
    pub zero_lifetime_dropped: usize,
    /// Pairs whose demand cannot fit even an empty machine (discarded).
    pub unplaceable_dropped: usize,
}

/// Load an external `vm_id,cpu,memory,time,type` request log, pairing
/// creations with deletions by vm id. Lifetime is the tick distance between
/// the two events. The config decides the split flag and must be
/// two-dimensional (cpu, memory).
pub fn load_trace<P: AsRef<Path>>(path: P, cfg: &ClusterConfig) -> Result<(WorkloadTrace, IngestStats)> {
    if cfg.dims() != 2 {
        return Err(Error::Config(format!(
            "external traces carry (cpu, memory); cluster config has {} dims",
            cfg.dims()
        )));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_path(path.as_ref())?;
    let headers = reader.headers().map_err(|e| Error::TraceParse { line: 1, msg: e.to_string() })?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::TraceParse { line: 1, msg: format!("missing column {name:?}") })
    };
    let (c_id, c_cpu, c_mem, c_time, c_type) =
        (col("vm_id")?, col("cpu")?, col("memory")?, col("time")?, col("type")?);

    struct Pending {
        cpu: f64,
        mem: f64,
        time: u64,
        order: usize,
    }
    let mut stats = IngestStats::default();
    let mut pending: HashMap<u64, Pending> = HashMap::new();
    let mut done: Vec<(usize, f64, f64, u64, u64)> = Vec::new(); // (order, cpu, mem, arrival, lifetime)

    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::TraceParse { line, msg: e.to_string() })?;
        let field = |c: usize| -> Result<&str> {
            record.get(c).ok_or_else(|| Error::TraceParse { line, msg: format!("missing field {c}") })
        };
        let parse_u64 = |s: &str| -> Result<u64> {
            s.trim().parse().map_err(|_| Error::TraceParse { line, msg: format!("bad integer {s:?}") })
        };
        let parse_f64 = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::TraceParse { line, msg: format!("bad number {s:?}") })
        };
        let vm_id = parse_u64(field(c_id)?)?;
        let time = parse_u64(field(c_time)?)?;
        let kind = parse_u64(field(c_type)?)?;
        stats.rows += 1;
        match kind {
            0 => {
                stats.creations += 1;
                if pending.contains_key(&vm_id) {
                    return Err(Error::TraceData(format!(
                        "line {line}: duplicate creation for vm {vm_id} while one is pending"
                    )));
                }
                let cpu = parse_f64(field(c_cpu)?)?;
                let mem = parse_f64(field(c_mem)?)?;
                pending.insert(vm_id, Pending { cpu, mem, time, order: stats.rows });
            }
            1 => {
                stats.deletions += 1;
                match pending.remove(&vm_id) {
                    None => stats.unmatched_deletions += 1,
                    Some(p) => {
                        if time < p.time {
                            return Err(Error::TraceData(format!(
                                "line {line}: vm {vm_id} deleted at {time} before creation at {}",
                                p.time
                            )));
                        }
                        if time == p.time {
                            stats.zero_lifetime_dropped += 1;
                        } else {
                            stats.paired += 1;
                            done.push((p.order, p.cpu, p.mem, p.time, time - p.time));
                        }
                    }
                }
            }
            other => {
                return Err(Error::TraceParse { line, msg: format!("unknown request type {other}") });
            }
        }
    }
    stats.dropped_unfinished = pending.len();

    // stable order for equal arrivals: original creation order
    done.sort_by_key(|&(order, _, _, arrival, _)| (arrival, order));
    let mut requests = Vec::with_capacity(done.len());
    for (_, cpu, mem, arrival, lifetime) in done {
        let resources = vec![cpu, mem];
        let div = classify_div(&resources, cfg)?;
        let req = VmRequest { id: requests.len(), resources, arrival, lifetime, div };
        if !req.placeable(cfg) {
            stats.unplaceable_dropped += 1;
            stats.paired -= 1;
            continue;
        }
        requests.push(req);
    }
    Ok((WorkloadTrace::new(requests), stats))
}

// ---------------------------------------------------------------------------
// Internal trace format
// ---------------------------------------------------------------------------

/// Write a trace as `id,arrival,lifetime,div,r0,r1,...` plus a
/// `<path>.config.json` sidecar holding the cluster config.
pub fn save_trace<P: AsRef<Path>>(trace: &WorkloadTrace, cfg: &ClusterConfig, path: P) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let dims = cfg.dims();
    let mut header = vec!["id".to_string(), "arrival".into(), "lifetime".into(), "div".into()];
    header.extend((0..dims).map(|d| format!("r{d}")));
    w.write_record(&header)?;
    for r in &trace.requests {
        let mut row = vec![
            r.id.to_string(),
            r.arrival.to_string(),
            r.lifetime.to_string(),
            (r.div as u8).to_string(),
        ];
        row.extend(r.resources.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let sidecar = sidecar_path(path);
    let mut f = std::fs::File::create(sidecar)?;
    f.write_all(serde_json::to_string_pretty(cfg)?.as_bytes())?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    std::path::PathBuf::from(s)
}

/// Read a trace written by [`save_trace`]; returns the sidecar config when
/// present.
pub fn load_internal_trace<P: AsRef<Path>>(path: P) -> Result<(WorkloadTrace, Option<ClusterConfig>)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_path(path)?;
    let headers = reader.headers().map_err(|e| Error::TraceParse { line: 1, msg: e.to_string() })?.clone();
    let dims = headers.len().saturating_sub(4);
    if dims == 0 || headers.get(0) != Some("id") {
        return Err(Error::TraceParse { line: 1, msg: "not an internal trace header".into() });
    }
    let mut requests = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::TraceParse { line, msg: e.to_string() })?;
        let get = |c: usize| -> Result<&str> {
            record.get(c).ok_or_else(|| Error::TraceParse { line, msg: format!("missing field {c}") })
        };
        let id: usize = get(0)?.parse().map_err(|_| Error::TraceParse { line, msg: "bad id".into() })?;
        let arrival: u64 =
            get(1)?.parse().map_err(|_| Error::TraceParse { line, msg: "bad arrival".into() })?;
        let lifetime: u64 =
            get(2)?.parse().map_err(|_| Error::TraceParse { line, msg: "bad lifetime".into() })?;
        let div: u8 = get(3)?.parse().map_err(|_| Error::TraceParse { line, msg: "bad div".into() })?;
        let mut resources = Vec::with_capacity(dims);
        for d in 0..dims {
            resources.push(
                get(4 + d)?
                    .parse()
                    .map_err(|_| Error::TraceParse { line, msg: format!("bad resource r{d}") })?,
            );
        }
        requests.push(VmRequest { id, resources, arrival, lifetime, div: div != 0 });
    }
    let cfg = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok((WorkloadTrace::new(requests), cfg))
}

/// Sniff the header and dispatch to the external or internal loader. The
/// passed config is used for pairing/div classification of external logs and
/// is overridden by an internal sidecar when one exists.
pub fn load_any_trace<P: AsRef<Path>>(
    path: P,
    cfg: &ClusterConfig,
) -> Result<(WorkloadTrace, ClusterConfig, Option<IngestStats>)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_path(path)?;
    let headers = reader.headers().map_err(|e| Error::TraceParse { line: 1, msg: e.to_string() })?.clone();
    drop(reader);
    if headers.iter().any(|h| h.trim() == "vm_id") {
        let (trace, stats) = load_trace(path, cfg)?;
        Ok((trace, cfg.clone(), Some(stats)))
    } else {
        let (trace, sidecar) = load_internal_trace(path)?;
        Ok((trace, sidecar.unwrap_or_else(|| cfg.clone()), None))
    }
}

// ---------------------------------------------------------------------------
// Adversarial instances
// ---------------------------------------------------------------------------

/// Worst-case instance produced against a concrete scheduler, together with
/// its analytic targets.
#[derive(Debug, Clone)]
pub struct AdversarialInstance {
    pub trace: WorkloadTrace,
    pub config: ClusterConfig,
    /// Total wait any greedy scheduler incurs on this instance.
    pub on_target: u64,
    /// Aggregate resource-time demand of the instance.
    pub tr: f64,
    /// Machine each probe-batch VM landed on during the probe run.
    pub probe_pms: Vec<usize>,
}

/// Build the adaptive worst case for `scheduler` on `m` machines.
///
/// The instance has one resource dimension with node capacity 0.5. A batch of
/// `2qm` requests of size `1/(2q)` arrives at tick 0 and exactly fills the
/// cluster under any work-conserving policy. The generator probes the
/// scheduler on that batch, then assigns lifetime `mu` to the first request
/// placed on each machine and lifetime 1 to the rest, so every machine keeps
/// exactly one long-lived leftover. Finally `m-1` full-machine requests
/// (size 1, split over both nodes) arrive at tick 1; each must wait until the
/// leftovers finish at tick `mu`, giving total wait `(m-1)(mu-1)`.
///
/// Replaying the returned trace with a scheduler that makes the same choices
/// as the probe run (same type and seed) realizes that wait exactly.
pub fn gen_adversarial(
    m: usize,
    q: usize,
    mu: u64,
    scheduler: &mut dyn Scheduler,
) -> Result<AdversarialInstance> {
    if m == 0 || q == 0 || mu == 0 {
        return Err(Error::Config("adversarial instance needs m >= 1, q >= 1, mu >= 1".into()));
    }
    let config = ClusterConfig::new(m, vec![0.5], 1, 0.6);
    let small = 1.0 / (2.0 * q as f64);
    let batch = 2 * q * m;

    // Probe: let the scheduler place the tick-0 batch and watch where each
    // request lands. Feasibility cannot run out before the batch completes
    // because total demand equals total capacity.
    let mut cluster = ClusterState::new(config.clone())?;
    let mut probe_pms = Vec::with_capacity(batch);
    let mut first_on_pm: Vec<Option<usize>> = vec![None; m];
    for id in 0..batch {
        let vm = VmRequest { id, resources: vec![small], arrival: 0, lifetime: 1, div: false };
        let feasible = cluster.feasible_actions(&vm);
        if feasible.is_empty() {
            return Err(Error::Internal(format!("probe batch ran out of capacity at request {id}")));
        }
        let obs = Observation::from_cluster(&cluster, Some(&vm), 0);
        let action = scheduler.choose(&obs, &feasible)?;
        let placement = cluster.deploy(&vm, action, 0)?;
        if first_on_pm[placement.pm].is_none() {
            first_on_pm[placement.pm] = Some(id);
        }
        probe_pms.push(placement.pm);
    }
    if first_on_pm.iter().any(|f| f.is_none()) {
        return Err(Error::Internal("probe run left a machine empty despite exact fill".into()));
    }

    let mut requests = Vec::with_capacity(batch + m - 1);
    for id in 0..batch {
        let lifetime = if first_on_pm.contains(&Some(id)) { mu } else { 1 };
        requests.push(VmRequest { id, resources: vec![small], arrival: 0, lifetime, div: false });
    }
    for id in batch..batch + m - 1 {
        requests.push(VmRequest { id, resources: vec![1.0], arrival: 1, lifetime: 1, div: true });
    }

    let mf = m as f64;
    let qf = q as f64;
    let tr = mf * mu as f64 / (2.0 * qf) + (2.0 * qf * mf - mf) / (2.0 * qf) + (mf - 1.0);
    let on_target = (m as u64 - 1) * (mu - 1);
    Ok(AdversarialInstance { trace: WorkloadTrace::new(requests), config, on_target, tr, probe_pms })
}

// ---------------------------------------------------------------------------
// Synthetic workloads
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub requests: usize,
    /// Candidate demand vectors with relative draw weights.
    pub flavors: Vec<Flavor>,
    /// Mean of the exponential inter-arrival gap, in ticks.
    pub mean_interarrival: f64,
    pub lifetime_min: u64,
    pub lifetime_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flavor {
    pub resources: Vec<f64>,
    pub weight: f64,
}

impl Flavor {
    pub fn new(resources: Vec<f64>, weight: f64) -> Self {
        Flavor { resources, weight }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        // cpu/memory menu from 1u1g up to 64u128g, small flavors dominant
        let menu: [(f64, f64, f64); 15] = [
            (1.0, 1.0, 16.0),
            (1.0, 2.0, 14.0),
            (1.0, 4.0, 10.0),
            (2.0, 2.0, 10.0),
            (2.0, 4.0, 10.0),
            (2.0, 8.0, 8.0),
            (4.0, 8.0, 8.0),
            (4.0, 16.0, 6.0),
            (8.0, 16.0, 5.0),
            (8.0, 32.0, 4.0),
            (16.0, 32.0, 3.0),
            (16.0, 64.0, 2.0),
            (32.0, 64.0, 2.0),
            (32.0, 128.0, 1.0),
            (64.0, 128.0, 1.0),
        ];
        SyntheticConfig {
            requests: 10_000,
            flavors: menu.iter().map(|&(c, m, w)| Flavor::new(vec![c, m], w)).collect(),
            mean_interarrival: 4.0,
            lifetime_min: 10,
            lifetime_max: 500,
        }
    }
}

impl SyntheticConfig {
    /// A mix where placement quality decides the wait totals. Compact
    /// requests fit five to a node, wide ones need a nearly empty node, and
    /// split ones want headroom on both nodes of one machine. Spreading the
    /// compact requests evenly starves the wide ones, so packing them onto
    /// already-busy nodes wins.
    pub fn contention_mix() -> Self {
        SyntheticConfig {
            requests: 20_000,
            flavors: vec![
                Flavor::new(vec![8.0, 6.0], 55.0),
                Flavor::new(vec![36.0, 8.0], 25.0),
                Flavor::new(vec![20.0, 40.0], 20.0),
            ],
            mean_interarrival: 4.5,
            lifetime_min: 20,
            lifetime_max: 60,
        }
    }

    pub fn validate(&self, cfg: &ClusterConfig) -> Result<()> {
        if self.flavors.is_empty() {
            return Err(Error::Config("need at least one flavor".into()));
        }
        if self.flavors.iter().any(|f| f.weight < 0.0) || self.flavors.iter().map(|f| f.weight).sum::<f64>() <= 0.0 {
            return Err(Error::Config("flavor weights must be non-negative with positive sum".into()));
        }
        if !self.mean_interarrival.is_finite() || self.mean_interarrival <= 0.0 {
            return Err(Error::Config("mean_interarrival must be positive".into()));
        }
        if self.lifetime_min == 0 || self.lifetime_max < self.lifetime_min {
            return Err(Error::Config("lifetime range must satisfy 1 <= min <= max".into()));
        }
        for f in &self.flavors {
            let div = classify_div(&f.resources, cfg)?;
            let probe = VmRequest { id: 0, resources: f.resources.clone(), arrival: 0, lifetime: 1, div };
            if !probe.placeable(cfg) {
                return Err(Error::Config(format!("flavor {:?} cannot fit an empty machine", f.resources)));
            }
        }
        Ok(())
    }
}

/// Seeded synthetic trace: exponential inter-arrival gaps (rounded to ticks),
/// uniform integer lifetimes, weighted flavor draws.
pub fn gen_synthetic(syn: &SyntheticConfig, cfg: &ClusterConfig, seed: u64) -> Result<WorkloadTrace> {
    syn.validate(cfg)?;
    let mut r = rng(seed, Stream::Workload);
    let total_weight: f64 = syn.flavors.iter().map(|f| f.weight).sum();
    let mut t = 0u64;
    let mut requests = Vec::with_capacity(syn.requests);
    for id in 0..syn.requests {
        let mut pick = r.gen_range(0.0..total_weight);
        let mut flavor = &syn.flavors[0];
        for f in &syn.flavors {
            if pick < f.weight {
                flavor = f;
                break;
            }
            pick -= f.weight;
        }
        let lifetime = r.gen_range(syn.lifetime_min..=syn.lifetime_max);
        let resources = flavor.resources.clone();
        let div = classify_div(&resources, cfg)?;
        requests.push(VmRequest { id, resources, arrival: t, lifetime, div });
        let u: f64 = r.gen_range(f64::EPSILON..1.0);
        let gap = (-syn.mean_interarrival * u.ln()).round() as u64;
        t += gap;
    }
    Ok(WorkloadTrace::new(requests))
}
