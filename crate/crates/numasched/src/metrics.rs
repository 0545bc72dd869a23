//! Worst-case bound arithmetic and multi-seed experiment statistics.

use crate::env::{full_trace_spec, run_episode};
use crate::error::Result;
use crate::schedulers::Scheduler;
use crate::workload::{gen_adversarial, WorkloadTrace};
use serde::Serialize;

/// Total time-resource of a trace: demand times lifetime, summed over every
/// request and resource dimension.
pub fn tr(trace: &WorkloadTrace) -> f64 {
    trace
        .requests
        .iter()
        .map(|vm| vm.lifetime as f64 * vm.resources.iter().sum::<f64>())
        .sum()
}

/// Measured-vs-ideal gap on one adversarial instance.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub m: usize,
    pub q: usize,
    pub mu: u64,
    /// Total wait incurred by the probed greedy scheduler.
    pub on: u64,
    /// Offline optimum; zero by construction, oracle-checkable at small sizes.
    pub opt: u64,
    pub tr: f64,
    /// (on - opt) / tr.
    pub ratio: f64,
    /// (m-1)/(2m-1) * (mu-1), the q -> infinity ceiling of `ratio`.
    pub limit: f64,
}

pub const BOUND_CSV_HEADER: &str = "m,q,mu,ON,TR,ratio,limit";

impl BoundReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.m,
            self.q,
            self.mu,
            self.on,
            fmt_short(self.tr),
            fmt_short(self.ratio),
            fmt_short(self.limit)
        )
    }
}

/// Round to four decimals and drop trailing zeros.
pub fn fmt_short(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn bound_limit(m: usize, mu: u64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    (m as f64 - 1.0) / (2.0 * m as f64 - 1.0) * (mu as f64 - 1.0)
}

/// Build the adaptive worst case against `make_scheduler()` and measure it.
/// The factory is called twice: once for the probe the instance is shaped
/// around and once for the replayed measurement run, so a seeded stochastic
/// scheduler repeats the probed decisions exactly.
pub fn bound_report(
    m: usize,
    q: usize,
    mu: u64,
    mut make_scheduler: impl FnMut() -> Box<dyn Scheduler>,
) -> Result<BoundReport> {
    let mut probe = make_scheduler();
    let inst = gen_adversarial(m, q, mu, probe.as_mut())?;
    let mut replay = make_scheduler();
    let (res, _) = run_episode(&inst.trace, full_trace_spec(&inst.trace), &inst.config, replay.as_mut())?;
    let on = res.total_wait;
    let opt = 0u64;
    let tr_val = tr(&inst.trace);
    Ok(BoundReport {
        m,
        q,
        mu,
        on,
        opt,
        tr: tr_val,
        ratio: (on - opt) as f64 / tr_val,
        limit: bound_limit(m, mu),
    })
}

/// Statistics over per-seed runs: `test` is the score being reported,
/// `valid` the validation score used for run selection.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunScore {
    pub valid: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Mean after dropping the two best and two worst test scores; falls
    /// back to the plain mean below five runs.
    pub trimmed_mean: f64,
    pub trimmed_fell_back: bool,
    /// Mean test score of the (up to) three runs with the best validation.
    pub mean_top3_by_valid: f64,
}

pub fn aggregate_runs(runs: &[RunScore]) -> Aggregate {
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let tests: Vec<f64> = runs.iter().map(|r| r.test).collect();
    let plain = mean(&tests);

    let (trimmed, fell_back) = if tests.len() >= 5 {
        let mut sorted = tests.clone();
        sorted.sort_by(f64::total_cmp);
        (mean(&sorted[2..sorted.len() - 2]), false)
    } else {
        (plain, true)
    };

    let mut by_valid: Vec<&RunScore> = runs.iter().collect();
    by_valid.sort_by(|a, b| f64::total_cmp(&a.valid, &b.valid));
    let top: Vec<f64> = by_valid.iter().take(3).map(|r| r.test).collect();

    Aggregate {
        mean: plain,
        trimmed_mean: trimmed,
        trimmed_fell_back: fell_back,
        mean_top3_by_valid: mean(&top),
    }
}
