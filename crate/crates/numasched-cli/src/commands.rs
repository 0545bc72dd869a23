//! The command bodies. Every command writes a JSON manifest carrying the
//! seed and config hash next to its primary outputs.

use crate::config::RunConfig;
use crate::SchedKind;
use anyhow::{bail, Context, Result};
use numasched::cluster::ClusterConfig;
use numasched::drl::{evaluate, mean_wait, train};
use numasched::env::{full_trace_spec, run_episode, EpisodeResult, LogRow};
use rayon::prelude::*;
use numasched::metrics::{bound_report, fmt_short, BoundReport, BOUND_CSV_HEADER};
use numasched::oracle::export_milp;
use numasched::qnet::{load_checkpoint, save_checkpoint, Arch, QNetwork};
use numasched::schedulers::{BalanceFit, FirstFit, QPolicy, RandomFit, Scheduler};
use numasched::workload::{
    frozen_episodes, gen_adversarial, gen_synthetic, load_any_trace, save_trace, IngestStats,
    Split, SyntheticConfig, WorkloadTrace,
};
use numasched::{Error, EpisodeSpec};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Everything a command body needs besides its own flags.
pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Ctx {
    fn manifest(&self, command: &str, body: serde_json::Value) -> serde_json::Value {
        json!({
            "command": command,
            "seed": self.cfg.seed,
            "config_sha256": self.hash,
            "result": body,
        })
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, serde_json::to_string_pretty(value)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn stamp(&self) -> String {
        format!("# seed={} config_sha256={}\n", self.cfg.seed, self.hash)
    }
}

fn split_token(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Valid => "valid",
        Split::Test => "test",
    }
}

fn build_scheduler(
    kind: SchedKind,
    seed: u64,
    net: Option<&QNetwork>,
) -> Result<Box<dyn Scheduler + Send + '_>> {
    Ok(match kind {
        SchedKind::FirstFit => Box::new(FirstFit),
        SchedKind::BalanceFit => Box::new(BalanceFit),
        SchedKind::Random => Box::new(RandomFit::new(seed)),
        SchedKind::Qnet => {
            let net = net.ok_or_else(|| {
                anyhow::anyhow!("the qnet scheduler needs --checkpoint")
            })?;
            Box::new(QPolicy::new(net))
        }
    })
}

fn load_net(path: &Path) -> Result<QNetwork> {
    let (net, _) = load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(net)
}

fn load_workload(ctx: &Ctx, flag: Option<&Path>) -> Result<(WorkloadTrace, ClusterConfig, Option<IngestStats>)> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| ctx.cfg.trace.clone())
        .ok_or_else(|| anyhow::anyhow!("no trace given; pass --trace or set it in the config"))?;
    let loaded = load_any_trace(&path, &ctx.cfg.cluster)
        .with_context(|| format!("loading trace {}", path.display()))?;
    Ok(loaded)
}

/// Prepend the seed/hash stamp to a CSV file written by the library.
fn stamp_file(ctx: &Ctx, path: &Path) -> Result<()> {
    let body = std::fs::read_to_string(path)?;
    std::fs::write(path, format!("{}{}", ctx.stamp(), body))?;
    Ok(())
}

pub fn gen_adversarial_cmd(
    ctx: &Ctx,
    m: usize,
    q: usize,
    mu: u64,
    scheduler: SchedKind,
    name: &str,
) -> Result<()> {
    let mut probe = build_scheduler(scheduler, ctx.cfg.seed, None)?;
    let inst = gen_adversarial(m, q, mu, probe.as_mut())?;
    let trace_path = ctx.out.join(format!("{name}.csv"));
    save_trace(&inst.trace, &inst.config, &trace_path)?;
    stamp_file(ctx, &trace_path)?;
    let manifest = ctx.manifest(
        "gen adversarial",
        json!({
            "trace": trace_path,
            "m": m, "q": q, "mu": mu,
            "requests": inst.trace.len(),
            "on_target": inst.on_target,
            "tr": inst.tr,
            "probe_pms": inst.probe_pms,
        }),
    );
    let mpath = ctx.write_json(&format!("{name}.json"), &manifest)?;
    println!("wrote {} and {}", trace_path.display(), mpath.display());
    Ok(())
}

pub fn gen_synthetic_cmd(
    ctx: &Ctx,
    requests: usize,
    contention: bool,
    name: &str,
) -> Result<()> {
    let mut syn = if contention { SyntheticConfig::contention_mix() } else { SyntheticConfig::default() };
    syn.requests = requests;
    let trace = gen_synthetic(&syn, &ctx.cfg.cluster, ctx.cfg.seed)?;
    let trace_path = ctx.out.join(format!("{name}.csv"));
    save_trace(&trace, &ctx.cfg.cluster, &trace_path)?;
    stamp_file(ctx, &trace_path)?;
    let manifest = ctx.manifest(
        "gen synthetic",
        json!({
            "trace": trace_path,
            "requests": trace.len(),
            "horizon": trace.horizon,
            "contention_mix": contention,
        }),
    );
    let mpath = ctx.write_json(&format!("{name}.json"), &manifest)?;
    println!("wrote {} and {}", trace_path.display(), mpath.display());
    Ok(())
}

fn episode_specs(
    trace: &WorkloadTrace,
    episodes: Option<usize>,
    split: Split,
    episode_len: usize,
    seed: u64,
) -> Result<Vec<EpisodeSpec>> {
    match episodes {
        None => Ok(vec![full_trace_spec(trace)]),
        Some(n) => Ok(frozen_episodes(trace, split, episode_len, n, seed)?),
    }
}

fn run_specs(
    trace: &WorkloadTrace,
    specs: &[EpisodeSpec],
    ccfg: &ClusterConfig,
    kind: SchedKind,
    seed: u64,
    net: Option<&QNetwork>,
) -> Result<Vec<EpisodeResult>> {
    let results = evaluate(trace, specs, ccfg, |i| {
        // Stochastic schedulers get an episode-indexed seed so reruns match.
        build_scheduler(kind, seed.wrapping_add(i as u64), net)
            .expect("scheduler construction cannot fail once validated")
    })?;
    Ok(results)
}

/// Like `run_specs` but keeps the per-VM logs.
fn run_specs_logged(
    trace: &WorkloadTrace,
    specs: &[EpisodeSpec],
    ccfg: &ClusterConfig,
    kind: SchedKind,
    seed: u64,
    net: Option<&QNetwork>,
) -> Result<Vec<(EpisodeResult, Vec<LogRow>)>> {
    let runs: numasched::Result<Vec<_>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, &spec)| {
            let mut sched = build_scheduler(kind, seed.wrapping_add(i as u64), net)
                .expect("scheduler construction cannot fail once validated");
            run_episode(trace, spec, ccfg, sched.as_mut())
        })
        .collect();
    Ok(runs?)
}

fn log_csv(ctx: &Ctx, specs: &[EpisodeSpec], runs: &[(EpisodeResult, Vec<LogRow>)]) -> String {
    let mut csv = ctx.stamp();
    csv.push_str("j,at,st,wait,action,pm,numa_mask\n");
    for (i, (spec, (_, log))) in specs.iter().zip(runs.iter()).enumerate() {
        csv.push_str(&format!("# episode {} start {} len {}\n", i, spec.start, spec.len));
        for row in log {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.j, row.arrival, row.start, row.wait, row.action, row.pm, row.numa
            ));
        }
    }
    csv
}

fn metrics_csv(ctx: &Ctx, specs: &[EpisodeSpec], results: &[EpisodeResult]) -> String {
    let mut csv = ctx.stamp();
    csv.push_str("episode,start,len,served,total_wait\n");
    for (i, (spec, res)) in specs.iter().zip(results.iter()).enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            i, spec.start, spec.len, res.requests_served, res.total_wait
        ));
    }
    csv
}

fn summary_json(results: &[EpisodeResult]) -> serde_json::Value {
    let total: u64 = results.iter().map(|r| r.total_wait).sum();
    let max = results.iter().map(|r| r.total_wait).max().unwrap_or(0);
    json!({
        "episodes": results.len(),
        "mean_wait": mean_wait(results),
        "total_wait": total,
        "max_episode_wait": max,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_cmd(
    ctx: &Ctx,
    trace_flag: Option<&Path>,
    scheduler: SchedKind,
    checkpoint: Option<&Path>,
    episodes: Option<usize>,
    split: Split,
    episode_len: Option<usize>,
    log: bool,
    name: &str,
) -> Result<()> {
    let (trace, ccfg, stats) = load_workload(ctx, trace_flag)?;
    let net = checkpoint.map(load_net).transpose()?;
    if scheduler == SchedKind::Qnet && net.is_none() {
        bail!("the qnet scheduler needs --checkpoint");
    }
    let len = episode_len.unwrap_or(ctx.cfg.train.episode_len);
    let specs = episode_specs(&trace, episodes, split, len, ctx.cfg.seed)?;
    let results = if log {
        let runs = run_specs_logged(&trace, &specs, &ccfg, scheduler, ctx.cfg.seed, net.as_ref())?;
        ctx.write_text(&format!("{name}.log.csv"), &log_csv(ctx, &specs, &runs))?;
        runs.into_iter().map(|(r, _)| r).collect()
    } else {
        run_specs(&trace, &specs, &ccfg, scheduler, ctx.cfg.seed, net.as_ref())?
    };

    let csv_path = ctx.write_text(&format!("{name}.csv"), &metrics_csv(ctx, &specs, &results))?;
    let mut body = summary_json(&results);
    body["scheduler"] = json!(scheduler.token());
    if let Some(stats) = stats {
        body["ingest"] = serde_json::to_value(stats)?;
    }
    let manifest = ctx.manifest("simulate", body);
    let mpath = ctx.write_json(&format!("{name}.json"), &manifest)?;
    println!(
        "{} episodes, mean wait {}; wrote {} and {}",
        results.len(),
        fmt_short(mean_wait(&results)),
        csv_path.display(),
        mpath.display()
    );
    Ok(())
}

pub fn train_cmd(ctx: &Ctx, trace_flag: Option<&Path>, arch: Option<Arch>, name: &str) -> Result<()> {
    let (trace, ccfg, _) = load_workload(ctx, trace_flag)?;
    let mut tcfg = ctx.cfg.train.clone();
    tcfg.seed = ctx.cfg.seed;
    if let Some(arch) = arch {
        tcfg.arch = arch;
    }
    let outcome = train(&trace, &ccfg, &tcfg)?;

    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), ctx.cfg.seed.to_string());
    meta.insert("config_sha256".to_string(), ctx.hash.clone());
    meta.insert("best_epoch".to_string(), outcome.best_epoch.to_string());
    meta.insert("best_valid".to_string(), outcome.best_valid.to_string());
    let ckpt_path = ctx.out.join(format!("{name}.checkpoint.json"));
    save_checkpoint(&outcome.net, meta, &ckpt_path)?;

    let mut curves = ctx.stamp();
    curves.push_str("epoch,eps,td_loss,valid\n");
    for p in &outcome.curve {
        let valid = p.valid.map(|v| v.to_string()).unwrap_or_default();
        curves.push_str(&format!("{},{},{},{}\n", p.epoch, p.eps, p.td_loss, valid));
    }
    let curves_path = ctx.write_text(&format!("{name}.curves.csv"), &curves)?;

    let manifest = ctx.manifest(
        "train",
        json!({
            "arch": tcfg.arch.to_string(),
            "checkpoint": ckpt_path,
            "curves": curves_path,
            "epochs": tcfg.epochs,
            "updates": outcome.updates,
            "best_epoch": outcome.best_epoch,
            "best_valid": outcome.best_valid,
        }),
    );
    let mpath = ctx.write_json(&format!("{name}.json"), &manifest)?;
    println!(
        "best validation wait {} at epoch {}; wrote {} and {}",
        fmt_short(outcome.best_valid),
        outcome.best_epoch,
        ckpt_path.display(),
        mpath.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_cmd(
    ctx: &Ctx,
    trace_flag: Option<&Path>,
    scheduler: SchedKind,
    checkpoint: Option<&Path>,
    split: Split,
    episodes: usize,
    episode_len: Option<usize>,
    m_override: Option<usize>,
    name: &str,
) -> Result<()> {
    let (trace, mut ccfg, _) = load_workload(ctx, trace_flag)?;
    if let Some(m) = m_override {
        ccfg = ccfg.with_pm_count(m);
    }
    let net = checkpoint.map(load_net).transpose()?;
    let kind = if net.is_some() { SchedKind::Qnet } else { scheduler };
    if kind == SchedKind::Qnet {
        let net = net.as_ref().ok_or_else(|| anyhow::anyhow!("the qnet scheduler needs --checkpoint"))?;
        // Surface a size-bound mismatch before any episode runs.
        if let Some(bound) = net.bound_pm_count() {
            if bound != ccfg.pm_count {
                return Err(Error::ShapeMismatch { expected: bound, got: ccfg.pm_count }.into());
            }
        }
    }
    let len = episode_len.unwrap_or(ctx.cfg.train.episode_len);
    let specs = episode_specs(&trace, Some(episodes), split, len, ctx.cfg.seed)?;
    let results = run_specs(&trace, &specs, &ccfg, kind, ctx.cfg.seed, net.as_ref())?;

    let csv_path = ctx.write_text(&format!("{name}.csv"), &metrics_csv(ctx, &specs, &results))?;
    let mut body = summary_json(&results);
    body["scheduler"] = json!(kind.token());
    body["pm_count"] = json!(ccfg.pm_count);
    body["split"] = json!(split_token(split));
    let manifest = ctx.manifest("evaluate", body);
    let mpath = ctx.write_json(&format!("{name}.json"), &manifest)?;
    println!(
        "{} {} episodes on {} machines, mean wait {}; wrote {} and {}",
        results.len(),
        split_token(split),
        ccfg.pm_count,
        fmt_short(mean_wait(&results)),
        csv_path.display(),
        mpath.display()
    );
    Ok(())
}

pub fn bounds_cmd(
    ctx: &Ctx,
    ms: &[usize],
    qs: &[usize],
    mus: &[u64],
    scheduler: SchedKind,
    name: &str,
) -> Result<()> {
    let mut rows: Vec<BoundReport> = Vec::new();
    for &m in ms {
        for &q in qs {
            for &mu in mus {
                let seed = ctx.cfg.seed;
                let report = bound_report(m, q, mu, || {
                    build_scheduler(scheduler, seed, None)
                        .expect("bounds schedulers are self-contained")
                })?;
                rows.push(report);
            }
        }
    }
    let mut csv = ctx.stamp();
    csv.push_str(BOUND_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        println!("{}", r.csv_row());
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let csv_path = ctx.write_text(&format!("{name}.csv"), &csv)?;
    let manifest = ctx.manifest("bounds", json!({ "rows": rows, "scheduler": scheduler.token() }));
    let mpath = ctx.write_json(&format!("{name}.json"), &manifest)?;
    println!("wrote {} and {}", csv_path.display(), mpath.display());
    Ok(())
}

pub fn export_milp_cmd(
    ctx: &Ctx,
    trace_flag: Option<&Path>,
    horizon: Option<u64>,
    name: &str,
) -> Result<()> {
    let (trace, ccfg, _) = load_workload(ctx, trace_flag)?;
    let minimal = trace.requests.iter().map(|v| v.lifetime).sum::<u64>()
        + trace.requests.iter().map(|v| v.arrival).max().unwrap_or(0);
    let horizon = horizon.unwrap_or(minimal);
    // The formulation is time-indexed; refuse sizes no solver would accept
    // before the LP text eats all memory. Each active (request, tick) pair
    // costs one activity row plus an occupancy variable per node, and each
    // start indicator shows up in a handful of rows.
    let nodes = 2 * ccfg.pm_count as u64;
    let mut occupancy_vars = 0u64;
    let mut est_bytes = 0u64;
    for vm in &trace.requests {
        let active_ticks = horizon.saturating_sub(vm.arrival);
        let starts = horizon.saturating_sub(vm.arrival + vm.lifetime) + 1;
        occupancy_vars += active_ticks * nodes;
        est_bytes += active_ticks * (nodes * 115 + 90) + starts * 50;
    }
    if est_bytes > 192 * (1 << 20) {
        bail!(
            "{} requests over horizon {} need {} occupancy variables (about {} MB of LP text); \
             export a smaller trace or pass a tighter --horizon",
            trace.len(),
            horizon,
            occupancy_vars,
            est_bytes >> 20
        );
    }
    let lp = export_milp(&trace, &ccfg, horizon)?;
    let stamped = format!("\\ seed={} config_sha256={}\n{}", ctx.cfg.seed, ctx.hash, lp);
    let lp_path = ctx.write_text(&format!("{name}.lp"), &stamped)?;
    let manifest = ctx.manifest(
        "export-milp",
        json!({ "lp": lp_path, "horizon": horizon, "requests": trace.len() }),
    );
    let mpath = ctx.write_json(&format!("{name}.json"), &manifest)?;
    println!("wrote {} and {}", lp_path.display(), mpath.display());
    Ok(())
}
