//! Double-DQN training on the scheduling environment, plus parallel policy
//! evaluation.
//!
//! One epoch = collect one episode of experience (the augmenting dense
//! variant collects on a stride and multiplies each transition through
//! random machine relabelings instead), then run a fixed number of
//! gradient updates on uniform replay samples. Validation plays frozen
//! episodes greedily and the best-scoring weights are kept.

mod replay;

pub use replay::{augment_transition, collect_episode, td_targets, ReplayMemory, Transition};

use crate::cluster::ClusterConfig;
use crate::env::{run_episode, EpisodeResult};
use crate::error::{Error, Result};
use crate::qnet::{random_non_identity_permutation, Adam, Arch, QNetwork, QnetConfig, TrainSample};
use crate::rng::{rng, Stream};
use crate::schedulers::{QPolicy, Scheduler};
use crate::workload::{frozen_episodes, sample_episode, EpisodeSpec, Split, WorkloadTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Training hyperparameters. The defaults are the reference setup; tests
/// shrink them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: Arch,
    pub seed: u64,
    pub epochs: usize,
    pub episode_len: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub n_step: u32,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Episodes collected with a uniform-random policy before any update.
    pub warmup_episodes: usize,
    pub valid_interval: usize,
    pub valid_episodes: usize,
    pub test_episodes: usize,
    /// Updates between target-network syncs.
    pub target_sync: usize,
    pub updates_per_epoch: usize,
    /// Random relabelings added per stored transition (augmenting variant).
    pub augment_count: usize,
    /// Epoch stride between collections for the augmenting variant, so the
    /// stored-experience rate matches the other variants.
    pub aug_collect_interval: usize,
    pub qnet: QnetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Spane,
            seed: 0,
            epochs: 5000,
            episode_len: 1000,
            replay_capacity: 200_000,
            batch_size: 1024,
            lr: 0.01,
            weight_decay: 1e-8,
            gamma: 0.99,
            n_step: 50,
            eps_start: 0.6,
            eps_end: 0.0,
            warmup_episodes: 100,
            valid_interval: 250,
            valid_episodes: 150,
            test_episodes: 1000,
            target_sync: 100,
            updates_per_epoch: 1,
            augment_count: 23,
            aug_collect_interval: 24,
            qnet: QnetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.episode_len == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, episode_len and batch_size must be positive".into()));
        }
        if self.n_step == 0 {
            return Err(Error::Config("n_step must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        for (name, v) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.target_sync == 0 || self.valid_interval == 0 || self.aug_collect_interval == 0 {
            return Err(Error::Config(
                "target_sync, valid_interval and aug_collect_interval must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Exploration rate for `epoch`, linear from `eps_start` to `eps_end`.
    pub fn eps_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.eps_end;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub eps: f64,
    /// Mean TD loss over this epoch's updates, `NaN` before the first one.
    pub td_loss: f64,
    /// Mean validation wait, present on validation epochs.
    pub valid: Option<f64>,
}

#[derive(Debug)]
pub struct TrainResult {
    /// Weights from the best validation epoch.
    pub net: QNetwork,
    pub best_valid: f64,
    pub best_epoch: usize,
    pub curve: Vec<CurvePoint>,
    pub updates: usize,
}

fn build_net(cfg: &TrainConfig, ccfg: &ClusterConfig, init: &mut crate::rng::DetRng) -> QNetwork {
    let mut qcfg = cfg.qnet.clone();
    qcfg.dims = ccfg.dims();
    match cfg.arch {
        Arch::Spane => QNetwork::new_spane(qcfg, init),
        Arch::Mlp | Arch::MlpAug => QNetwork::new_mlp(qcfg, ccfg.pm_count, init),
    }
}

/// Mean episode wait of the greedy policy over `specs`, in parallel.
pub fn validation_score(
    trace: &WorkloadTrace,
    specs: &[EpisodeSpec],
    ccfg: &ClusterConfig,
    net: &QNetwork,
) -> Result<f64> {
    let results = evaluate(trace, specs, ccfg, |_| Box::new(QPolicy::new(net)))?;
    Ok(mean_wait(&results))
}

pub fn mean_wait(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        return f64::NAN;
    }
    results.iter().map(|r| r.total_wait as f64).sum::<f64>() / results.len() as f64
}

/// Train a Q-network on the train split of `trace`.
pub fn train(trace: &WorkloadTrace, ccfg: &ClusterConfig, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    ccfg.validate()?;

    let mut init_rng = rng(cfg.seed, Stream::Init);
    let mut episode_rng = rng(cfg.seed, Stream::EpisodeSample);
    let mut explore_rng = rng(cfg.seed, Stream::Exploration);
    let mut replay_rng = rng(cfg.seed, Stream::ReplaySample);
    let mut aug_rng = rng(cfg.seed, Stream::Augment);

    let mut online = build_net(cfg, ccfg, &mut init_rng);
    let mut target = online.clone();
    let mut adam = Adam::new(online.params(), cfg.lr, cfg.weight_decay);
    let mut memory = ReplayMemory::new(cfg.replay_capacity);

    let valid_specs =
        frozen_episodes(trace, Split::Valid, cfg.episode_len, cfg.valid_episodes, cfg.seed)?;

    let augmenting = cfg.arch == Arch::MlpAug;
    let store = |memory: &mut ReplayMemory,
                     transitions: Vec<Transition>,
                     aug_rng: &mut crate::rng::DetRng| {
        for tr in transitions {
            if augmenting && tr.obs.pm_count > 1 {
                for _ in 0..cfg.augment_count {
                    let sigma = random_non_identity_permutation(tr.obs.pm_count, aug_rng);
                    memory.push(augment_transition(&tr, &sigma));
                }
            }
            memory.push(tr);
        }
    };

    for _ in 0..cfg.warmup_episodes {
        let spec = sample_episode(trace, Split::Train, cfg.episode_len, &mut episode_rng)?;
        let (transitions, _) =
            collect_episode(trace, spec, ccfg, &online, 1.0, cfg.n_step, cfg.gamma, &mut explore_rng)?;
        store(&mut memory, transitions, &mut aug_rng);
    }

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut updates = 0usize;
    let mut best_valid = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_net = online.clone();

    for epoch in 0..cfg.epochs {
        let eps = cfg.eps_at(epoch);

        let collect_now = !augmenting || epoch % cfg.aug_collect_interval == 0;
        if collect_now {
            let spec = sample_episode(trace, Split::Train, cfg.episode_len, &mut episode_rng)?;
            let (transitions, _) = collect_episode(
                trace,
                spec,
                ccfg,
                &online,
                eps,
                cfg.n_step,
                cfg.gamma,
                &mut explore_rng,
            )?;
            store(&mut memory, transitions, &mut aug_rng);
        }

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        if !memory.is_empty() {
            for _ in 0..cfg.updates_per_epoch {
                let batch = memory.sample(cfg.batch_size, &mut replay_rng);
                let targets = td_targets(&online, &target, &batch, cfg.gamma)?;
                let samples: Vec<TrainSample> = batch
                    .iter()
                    .zip(targets.iter())
                    .map(|(tr, &y)| TrainSample { obs: &tr.obs, action: tr.action, target: y })
                    .collect();
                let (loss, grads) = online.backward_batch(&samples)?;
                adam.step(online.params_mut(), &grads);
                updates += 1;
                loss_sum += loss;
                loss_count += 1;
                if updates.is_multiple_of(cfg.target_sync) {
                    target = online.clone();
                }
            }
        }

        let validate_now = (epoch + 1) % cfg.valid_interval == 0 || epoch + 1 == cfg.epochs;
        let valid = if validate_now {
            let score = validation_score(trace, &valid_specs, ccfg, &online)?;
            if score < best_valid {
                best_valid = score;
                best_epoch = epoch;
                best_net = online.clone();
            }
            Some(score)
        } else {
            None
        };

        curve.push(CurvePoint {
            epoch,
            eps,
            td_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN },
            valid,
        });
    }

    Ok(TrainResult { net: best_net, best_valid, best_epoch, curve, updates })
}

/// Run every episode spec under its own scheduler instance, in parallel.
/// `factory(i)` builds the scheduler for `specs[i]`, so stochastic policies
/// can be seeded per episode.
pub fn evaluate<'a, F>(
    trace: &WorkloadTrace,
    specs: &[EpisodeSpec],
    ccfg: &ClusterConfig,
    factory: F,
) -> Result<Vec<EpisodeResult>>
where
    F: Fn(usize) -> Box<dyn Scheduler + Send + 'a> + Sync,
{
    specs
        .par_iter()
        .enumerate()
        .map(|(i, &spec)| {
            let mut sched = factory(i);
            run_episode(trace, spec, ccfg, sched.as_mut()).map(|(result, _)| result)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedulers::RandomFit;
    use crate::workload::{gen_synthetic, SyntheticConfig};

    fn small_trace() -> (WorkloadTrace, ClusterConfig) {
        let ccfg = ClusterConfig { pm_count: 2, ..ClusterConfig::default() };
        let syn = SyntheticConfig { requests: 220, ..SyntheticConfig::default() };
        let trace = gen_synthetic(&syn, &ccfg, 77).unwrap();
        (trace, ccfg)
    }

    #[test]
    fn tiny_training_run_completes() {
        let (trace, ccfg) = small_trace();
        let cfg = TrainConfig {
            epochs: 4,
            episode_len: 15,
            batch_size: 8,
            warmup_episodes: 2,
            valid_interval: 2,
            valid_episodes: 2,
            n_step: 5,
            target_sync: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let out = train(&trace, &ccfg, &cfg).unwrap();
        assert_eq!(out.curve.len(), 4);
        assert!(out.updates >= 4);
        assert!(out.best_valid.is_finite());
        // Curve rows carry the linear exploration schedule.
        assert_eq!(out.curve[0].eps, 0.6);
        assert_eq!(out.curve[3].eps, 0.0);
        assert!(out.curve[1].valid.is_some() && out.curve[2].valid.is_none());
        // The kept network still prices states.
        let spec = frozen_episodes(&trace, Split::Valid, 15, 1, 9).unwrap()[0];
        let mut policy = QPolicy::new(&out.net);
        let (result, _) = run_episode(&trace, spec, &ccfg, &mut policy).unwrap();
        assert!(result.requests_served > 0);
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let (trace, ccfg) = small_trace();
        let cfg = TrainConfig {
            epochs: 3,
            episode_len: 12,
            batch_size: 8,
            warmup_episodes: 1,
            valid_interval: 3,
            valid_episodes: 2,
            n_step: 4,
            seed: 4,
            ..TrainConfig::default()
        };
        let a = train(&trace, &ccfg, &cfg).unwrap();
        let b = train(&trace, &ccfg, &cfg).unwrap();
        assert_eq!(a.best_valid, b.best_valid);
        let pa = a.net.params();
        let pb = b.net.params();
        for (ta, tb) in pa.tensors.iter().zip(pb.tensors.iter()) {
            assert_eq!(ta.data, tb.data);
        }
    }

    #[test]
    fn augmenting_variant_multiplies_experience() {
        let (trace, ccfg) = small_trace();
        let cfg = TrainConfig {
            arch: Arch::MlpAug,
            epochs: 2,
            episode_len: 10,
            batch_size: 8,
            warmup_episodes: 1,
            valid_interval: 2,
            valid_episodes: 1,
            augment_count: 3,
            aug_collect_interval: 2,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&trace, &ccfg, &cfg).unwrap();
        assert!(out.updates > 0);
    }

    #[test]
    fn evaluate_is_deterministic_and_parallel_safe() {
        let (trace, ccfg) = small_trace();
        let specs = frozen_episodes(&trace, Split::Test, 20, 8, 3).unwrap();
        let run = || {
            evaluate(&trace, &specs, &ccfg, |i| Box::new(RandomFit::new(1000 + i as u64))).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.total_wait, y.total_wait);
            assert_eq!(x.per_vm_wait, y.per_vm_wait);
        }
    }
}
