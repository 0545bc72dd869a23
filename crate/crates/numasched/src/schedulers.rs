//! Placement policies. A scheduler only ever picks among the feasible
//! actions the environment hands it; the start tick is not its business.

use rand::Rng;

use crate::cluster::Action;
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::qnet::QNetwork;
use crate::rng::{rng_stream, DetRng};

pub trait Scheduler {
    fn name(&self) -> &str;
    /// Pick one of `feasible` (non-empty, ascending action ids).
    fn choose(&mut self, obs: &Observation, feasible: &[Action]) -> Result<Action>;
}

/// Lowest feasible action id: fills machines front to back, node 0 first.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstFit;

impl Scheduler for FirstFit {
    fn name(&self) -> &str {
        "first_fit"
    }

    fn choose(&mut self, _obs: &Observation, feasible: &[Action]) -> Result<Action> {
        feasible
            .first()
            .copied()
            .ok_or_else(|| Error::Internal("scheduler called with no feasible action".into()))
    }
}

/// Picks the machine whose two nodes are most out of balance and places the
/// request on its less-utilized feasible node, evening the nodes out. Split
/// requests load both nodes equally, so they just take the first feasible
/// machine.
#[derive(Debug, Clone, Copy, Default)]
pub struct BalanceFit;

/// Imbalance of one machine: sum over dimensions of the normalized
/// utilization gap between its two nodes.
pub fn imbalance(obs: &Observation, pm: usize) -> f64 {
    (0..obs.dims).map(|d| (obs.util(pm, 0, d) - obs.util(pm, 1, d)).abs()).sum()
}

impl Scheduler for BalanceFit {
    fn name(&self) -> &str {
        "balance_fit"
    }

    fn choose(&mut self, obs: &Observation, feasible: &[Action]) -> Result<Action> {
        let first = *feasible
            .first()
            .ok_or_else(|| Error::Internal("scheduler called with no feasible action".into()))?;
        if obs.div {
            // both nodes get the same share; the earliest feasible machine wins
            return Ok(first);
        }
        let mut best: Option<(usize, f64)> = None;
        for a in feasible {
            let pm = a.pm();
            if best.is_some_and(|(bpm, _)| bpm == pm) {
                continue;
            }
            let score = imbalance(obs, pm);
            if best.is_none_or(|(_, bscore)| score > bscore) {
                best = Some((pm, score));
            }
        }
        let (pm, _) = best.expect("feasible is non-empty");
        let node_load = |numa: usize| -> f64 { (0..obs.dims).map(|d| obs.util(pm, numa, d)).sum() };
        let mut choice: Option<(Action, f64)> = None;
        for &a in feasible.iter().filter(|a| a.pm() == pm) {
            let load = node_load(a.numa());
            if choice.is_none_or(|(_, bload)| load < bload) {
                choice = Some((a, load));
            }
        }
        Ok(choice.expect("machine came from the feasible set").0)
    }
}

/// Uniform choice among feasible actions from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomFit {
    rng: DetRng,
}

impl RandomFit {
    pub fn new(seed: u64) -> Self {
        RandomFit { rng: rng_stream(seed, crate::rng::Stream::Scheduler as u64) }
    }
}

impl Scheduler for RandomFit {
    fn name(&self) -> &str {
        "random"
    }

    fn choose(&mut self, _obs: &Observation, feasible: &[Action]) -> Result<Action> {
        if feasible.is_empty() {
            return Err(Error::Internal("scheduler called with no feasible action".into()));
        }
        Ok(feasible[self.rng.gen_range(0..feasible.len())])
    }
}

/// Greedy argmax over the network's action values, restricted to feasible
/// actions, lowest id on ties.
pub struct QPolicy<'n> {
    net: &'n QNetwork,
}

impl<'n> QPolicy<'n> {
    pub fn new(net: &'n QNetwork) -> Self {
        QPolicy { net }
    }
}

impl Scheduler for QPolicy<'_> {
    fn name(&self) -> &str {
        "qnet"
    }

    fn choose(&mut self, obs: &Observation, feasible: &[Action]) -> Result<Action> {
        let out = self.net.forward(obs)?;
        masked_argmax(&out.q, feasible)
    }
}

/// First maximizer of `q` over the feasible set. Rejects non-finite values:
/// a NaN comparison would silently pick an arbitrary action.
pub fn masked_argmax(q: &[f64], feasible: &[Action]) -> Result<Action> {
    let mut best: Option<(Action, f64)> = None;
    for &a in feasible {
        let v = *q
            .get(a.0 - 1)
            .ok_or_else(|| Error::Model(format!("q vector of {} entries lacks action {}", q.len(), a)))?;
        if !v.is_finite() {
            return Err(Error::Model(format!("non-finite action value {v} for action {a}")));
        }
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a)
        .ok_or_else(|| Error::Internal("scheduler called with no feasible action".into()))
}
