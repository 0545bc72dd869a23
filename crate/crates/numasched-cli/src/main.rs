mod commands;
mod config;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::Ctx;
use config::{config_hash, load_run_config, resolve_out};
use numasched::qnet::Arch;
use numasched::workload::Split;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchedKind {
    FirstFit,
    BalanceFit,
    Random,
    Qnet,
}

impl SchedKind {
    pub fn token(self) -> &'static str {
        match self {
            SchedKind::FirstFit => "first_fit",
            SchedKind::BalanceFit => "balance_fit",
            SchedKind::Random => "random",
            SchedKind::Qnet => "qnet",
        }
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// Simulator and solver stack for online VM placement on dual-NUMA clusters.
#[derive(Parser)]
#[command(name = "numasched", version, about)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for generated files (default: config, then
    /// NUMASCHED_OUT, then the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Rayon thread count; 0 picks the machine default.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate workload traces.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Replay a trace under a scheduler and record per-episode waits.
    Simulate(SimulateArgs),
    /// Train a Q-network on a trace and save the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint or heuristic on frozen episodes of a split.
    Evaluate(EvaluateArgs),
    /// Tabulate worst-case instances against the competitive-ratio limit.
    Bounds(BoundsArgs),
    /// Write the offline placement problem as an LP-format MILP.
    ExportMilp(ExportMilpArgs),
}

#[derive(Subcommand)]
enum GenCommand {
    /// Worst-case instance tailored to a scheduler's own choices.
    Adversarial(GenAdversarialArgs),
    /// Random trace from a flavor menu with exponential arrivals.
    Synthetic(GenSyntheticArgs),
}

#[derive(Args)]
struct GenAdversarialArgs {
    /// Machine count.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Granularity: the tick-0 batch holds 2*q*m requests of size 1/(2q).
    #[arg(long, default_value_t = 2)]
    q: usize,
    /// Lifetime of the long-lived leftover on each machine.
    #[arg(long, default_value_t = 3)]
    mu: u64,
    /// Scheduler probed while tailoring the instance.
    #[arg(long, value_enum, default_value_t = SchedKind::FirstFit)]
    scheduler: SchedKind,
    /// Basename for the emitted trace and manifest.
    #[arg(long, default_value = "adversarial")]
    name: String,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Number of requests to draw.
    #[arg(long, default_value_t = 1000)]
    requests: usize,
    /// Use the high-contention flavor mix instead of the default menu.
    #[arg(long)]
    contention: bool,
    /// Basename for the emitted trace and manifest.
    #[arg(long, default_value = "synthetic")]
    name: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// Trace CSV; falls back to the config file's trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SchedKind::FirstFit)]
    scheduler: SchedKind,
    /// Q-network checkpoint, required for the qnet scheduler.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run this many frozen episodes instead of the whole trace once.
    #[arg(long)]
    episodes: Option<usize>,
    /// Split the frozen episodes are drawn from.
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
    /// Episode length for frozen episodes (default: training config).
    #[arg(long)]
    episode_len: Option<usize>,
    /// Also write a per-VM placement log.
    #[arg(long)]
    log: bool,
    /// Basename for the emitted metrics and manifest.
    #[arg(long, default_value = "simulate")]
    name: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Trace CSV; falls back to the config file's trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Network variant; overrides the config file.
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Arch>,
    /// Basename for the emitted checkpoint, curves, and manifest.
    #[arg(long, default_value = "train")]
    name: String,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trace CSV; falls back to the config file's trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Heuristic to score when no checkpoint is given.
    #[arg(long, value_enum, default_value_t = SchedKind::BalanceFit)]
    scheduler: SchedKind,
    /// Q-network checkpoint; takes precedence over --scheduler.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// Episode length (default: training config).
    #[arg(long)]
    episode_len: Option<usize>,
    /// Evaluate on a cluster of this many machines instead of the
    /// config's count.
    #[arg(long)]
    m: Option<usize>,
    /// Basename for the emitted metrics and manifest.
    #[arg(long, default_value = "evaluate")]
    name: String,
}

#[derive(Args)]
struct BoundsArgs {
    /// Machine counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,3,5")]
    m: Vec<usize>,
    /// Granularities, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,50")]
    q: Vec<usize>,
    /// Leftover lifetimes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3,10")]
    mu: Vec<u64>,
    #[arg(long, value_enum, default_value_t = SchedKind::FirstFit)]
    scheduler: SchedKind,
    /// Basename for the emitted table and manifest.
    #[arg(long, default_value = "bounds")]
    name: String,
}

#[derive(Args)]
struct ExportMilpArgs {
    /// Trace CSV; falls back to the config file's trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Scheduling horizon in ticks (default: the smallest safe value).
    #[arg(long)]
    horizon: Option<u64>,
    /// Basename for the emitted LP file and manifest.
    #[arg(long, default_value = "offline")]
    name: String,
}

fn run(cli: Cli) -> Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global()?;
    }
    let mut cfg = load_run_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let hash = config_hash(&cfg)?;
    let out = resolve_out(cli.out.as_deref(), &cfg)?;
    let ctx = Ctx { cfg, hash, out };

    match cli.command {
        Command::Gen(GenCommand::Adversarial(a)) => {
            commands::gen_adversarial_cmd(&ctx, a.m, a.q, a.mu, a.scheduler, &a.name)
        }
        Command::Gen(GenCommand::Synthetic(a)) => {
            commands::gen_synthetic_cmd(&ctx, a.requests, a.contention, &a.name)
        }
        Command::Simulate(a) => commands::simulate_cmd(
            &ctx,
            a.trace.as_deref(),
            a.scheduler,
            a.checkpoint.as_deref(),
            a.episodes,
            a.split,
            a.episode_len,
            a.log,
            &a.name,
        ),
        Command::Train(a) => commands::train_cmd(&ctx, a.trace.as_deref(), a.arch, &a.name),
        Command::Evaluate(a) => commands::evaluate_cmd(
            &ctx,
            a.trace.as_deref(),
            a.scheduler,
            a.checkpoint.as_deref(),
            a.split,
            a.episodes,
            a.episode_len,
            a.m,
            &a.name,
        ),
        Command::Bounds(a) => commands::bounds_cmd(&ctx, &a.m, &a.q, &a.mu, a.scheduler, &a.name),
        Command::ExportMilp(a) => {
            commands::export_milp_cmd(&ctx, a.trace.as_deref(), a.horizon, &a.name)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
