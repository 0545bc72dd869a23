//! Experience collection: eps-greedy rollouts, n-step return assembly,
//! relabeling augmentation, and the uniform replay ring.

use crate::cluster::{Action, ClusterConfig};
use crate::env::{EpisodeResult, Observation, SchedEnv};
use crate::error::Result;
use crate::qnet::{invert_permutation, permute_action_id, permute_obs, QNetwork};
use crate::rng::DetRng;
use crate::schedulers::masked_argmax;
use crate::workload::{EpisodeSpec, WorkloadTrace};
use rand::Rng;

/// One stored experience. `nstep_return` already folds the discount inside
/// the window; the bootstrap term uses `gamma^steps` on `next_obs`.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub nstep_return: f64,
    /// State after `steps` decisions, `None` when the episode ended inside
    /// the window (no bootstrap).
    pub next_obs: Option<Observation>,
    pub steps: u32,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug)]
pub struct ReplayMemory {
    buf: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory { buf: Vec::new(), capacity, next: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = Transition>) {
        for t in items {
            self.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Uniform sample with replacement. Panics on an empty buffer.
    pub fn sample(&self, batch: usize, rng: &mut DetRng) -> Vec<&Transition> {
        assert!(!self.buf.is_empty(), "sampling from an empty replay buffer");
        (0..batch).map(|_| &self.buf[rng.gen_range(0..self.buf.len())]).collect()
    }
}

/// Fold a raw `(obs, action, reward)` rollout into n-step transitions.
fn assemble_nstep(
    steps: Vec<(Observation, Action, f64)>,
    n_step: u32,
    gamma: f64,
) -> Vec<Transition> {
    let horizon = steps.len();
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let k = (n_step as usize).min(horizon - t);
        let mut ret = 0.0;
        for i in (0..k).rev() {
            ret = steps[t + i].2 + gamma * ret;
        }
        let next_obs = if t + k < horizon { Some(steps[t + k].0.clone()) } else { None };
        out.push(Transition {
            obs: steps[t].0.clone(),
            action: steps[t].1,
            nstep_return: ret,
            next_obs,
            steps: k as u32,
        });
    }
    out
}

/// Play one episode with an eps-greedy policy on `net` and assemble the
/// experience. `eps = 1.0` ignores the network entirely.
#[allow(clippy::too_many_arguments)]
pub fn collect_episode(
    trace: &WorkloadTrace,
    spec: EpisodeSpec,
    ccfg: &ClusterConfig,
    net: &QNetwork,
    eps: f64,
    n_step: u32,
    gamma: f64,
    rng: &mut DetRng,
) -> Result<(Vec<Transition>, EpisodeResult)> {
    let mut env = SchedEnv::new(trace, spec, ccfg.clone())?;
    let mut obs_opt = env.reset()?;
    let mut steps = Vec::new();
    while let Some(obs) = obs_opt {
        let feasible = env.current_feasible();
        let action = if eps >= 1.0 || rng.gen::<f64>() < eps {
            feasible[rng.gen_range(0..feasible.len())]
        } else {
            masked_argmax(&net.forward(&obs)?.q, feasible)?
        };
        let outcome = env.step(action)?;
        steps.push((obs, action, outcome.reward));
        obs_opt = outcome.next_obs;
    }
    let result = env.result();
    Ok((assemble_nstep(steps, n_step, gamma), result))
}

/// Relabel a transition under machine permutation `sigma`. Slot `i` of the
/// permuted observation holds physical machine `sigma[i]`, so the stored
/// action moves to slot `sigma^-1[pm]`; returns and lengths are untouched.
pub fn augment_transition(tr: &Transition, sigma: &[usize]) -> Transition {
    let inv = invert_permutation(sigma);
    Transition {
        obs: permute_obs(&tr.obs, sigma),
        action: permute_action_id(tr.action, &inv),
        nstep_return: tr.nstep_return,
        next_obs: tr.next_obs.as_ref().map(|o| permute_obs(o, sigma)),
        steps: tr.steps,
    }
}

/// Double-DQN regression targets: the online net picks the bootstrap action
/// over the feasible set of the successor state, the target net prices it.
pub fn td_targets(
    online: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len());
    for tr in batch {
        let bootstrap = match &tr.next_obs {
            None => 0.0,
            Some(next) => {
                let feasible = next.feasible_actions();
                if feasible.is_empty() {
                    // Reconstruction from normalized utilization can only
                    // lose feasibility by float dust; price it as terminal.
                    0.0
                } else {
                    let pick = masked_argmax(&online.forward(next)?.q, &feasible)?;
                    let q = target.forward(next)?.q;
                    gamma.powi(tr.steps as i32) * q[pick.0 - 1]
                }
            }
        };
        out.push(tr.nstep_return + bootstrap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::{random_non_identity_permutation, QnetConfig};
    use crate::rng::{rng, Stream};
    use crate::schedulers::FirstFit;
    use crate::workload::gen_adversarial;

    fn dummy_obs(tag: u64) -> Observation {
        Observation {
            pm_count: 1,
            dims: 1,
            numa_util: vec![tag as f64, 0.0],
            vm_resources: vec![0.1],
            div: false,
            wait_so_far: 0,
            pending_none: false,
        }
    }

    #[test]
    fn nstep_assembly_discounts_and_truncates() {
        let steps = vec![
            (dummy_obs(0), Action(1), -1.0),
            (dummy_obs(1), Action(2), 0.0),
            (dummy_obs(2), Action(1), -2.0),
            (dummy_obs(3), Action(1), 0.0),
        ];
        let trs = assemble_nstep(steps, 2, 0.5);
        assert_eq!(trs.len(), 4);
        assert_eq!(trs[0].nstep_return, -1.0);
        assert_eq!(trs[0].steps, 2);
        assert_eq!(trs[0].next_obs.as_ref().unwrap().numa_util[0], 2.0);
        assert_eq!(trs[1].nstep_return, -1.0);
        assert_eq!(trs[2].nstep_return, -2.0);
        assert_eq!(trs[2].steps, 2);
        assert!(trs[2].next_obs.is_none());
        assert_eq!(trs[3].nstep_return, 0.0);
        assert_eq!(trs[3].steps, 1);
        assert!(trs[3].next_obs.is_none());
    }

    #[test]
    fn replay_ring_evicts_oldest() {
        let mut mem = ReplayMemory::new(4);
        for tag in 0..6 {
            let mut t = Transition {
                obs: dummy_obs(tag),
                action: Action(1),
                nstep_return: 0.0,
                next_obs: None,
                steps: 1,
            };
            t.nstep_return = tag as f64;
            mem.push(t);
        }
        assert_eq!(mem.len(), 4);
        let mut tags: Vec<f64> = mem.buf.iter().map(|t| t.nstep_return).collect();
        tags.sort_by(f64::total_cmp);
        assert_eq!(tags, vec![2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn augmented_transitions_stay_consistent() {
        let mut sched = FirstFit;
        let inst = gen_adversarial(3, 2, 4, &mut sched).unwrap();
        let net = QNetwork::new_spane(
            QnetConfig::for_dims(inst.config.dims()),
            &mut rng(5, Stream::Init),
        );
        let mut r = rng(5, Stream::Exploration);
        let spec = EpisodeSpec { start: 0, len: inst.trace.len() };
        let (trs, _) =
            collect_episode(&inst.trace, spec, &inst.config, &net, 0.5, 3, 0.9, &mut r).unwrap();
        let mut checked = 0;
        for tr in &trs {
            let sigma = random_non_identity_permutation(tr.obs.pm_count, &mut r);
            let aug = augment_transition(tr, &sigma);
            // The relabeled action must stay feasible and keep its value.
            assert!(aug.obs.feasible_actions().contains(&aug.action));
            let q0 = net.forward(&tr.obs).unwrap().q[tr.action.0 - 1];
            let q1 = net.forward(&aug.obs).unwrap().q[aug.action.0 - 1];
            assert!((q0 - q1).abs() < 1e-9, "{q0} vs {q1}");
            assert_eq!(aug.nstep_return, tr.nstep_return);
            assert_eq!(aug.steps, tr.steps);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn targets_bootstrap_only_through_live_successors() {
        let mut sched = FirstFit;
        let inst = gen_adversarial(2, 2, 3, &mut sched).unwrap();
        let net = QNetwork::new_spane(
            QnetConfig::for_dims(inst.config.dims()),
            &mut rng(6, Stream::Init),
        );
        let target = net.clone();
        let mut r = rng(6, Stream::Exploration);
        let spec = EpisodeSpec { start: 0, len: inst.trace.len() };
        let (trs, _) =
            collect_episode(&inst.trace, spec, &inst.config, &net, 1.0, 4, 0.9, &mut r).unwrap();
        let refs: Vec<&Transition> = trs.iter().collect();
        let ys = td_targets(&net, &target, &refs, 0.9).unwrap();
        for (tr, y) in trs.iter().zip(ys.iter()) {
            match &tr.next_obs {
                None => assert_eq!(*y, tr.nstep_return),
                Some(next) => {
                    let feas = next.feasible_actions();
                    let pick = masked_argmax(&net.forward(next).unwrap().q, &feas).unwrap();
                    let expect = tr.nstep_return
                        + 0.9f64.powi(tr.steps as i32)
                            * target.forward(next).unwrap().q[pick.0 - 1];
                    assert!((y - expect).abs() < 1e-12);
                }
            }
        }
    }
}
