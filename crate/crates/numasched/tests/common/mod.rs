//! Helpers shared by the integration tests: randomized observations and a
//! central-difference gradient checker.

#![allow(dead_code)]

use numasched::qnet::{QNetwork, TrainSample};
use numasched::rng::DetRng;
use numasched::{Action, Observation};
use rand::Rng;

/// Random normalized observation with a pending request.
pub fn random_obs(rng: &mut DetRng, pm_count: usize, dims: usize) -> Observation {
    let numa_util = (0..pm_count * 2 * dims).map(|_| rng.gen::<f64>()).collect();
    let vm_resources = (0..dims).map(|_| rng.gen::<f64>() * 0.5).collect();
    Observation {
        pm_count,
        dims,
        numa_util,
        vm_resources,
        div: rng.gen_bool(0.3),
        wait_so_far: rng.gen_range(0..40),
        pending_none: false,
    }
}

/// Random training batch over `obs` with targets near the Q scale.
pub fn random_batch<'a>(rng: &mut DetRng, obs: &'a [Observation]) -> Vec<TrainSample<'a>> {
    obs.iter()
        .map(|o| TrainSample {
            obs: o,
            action: Action(rng.gen_range(1..=o.pm_count * 2)),
            target: rng.gen_range(-5.0..5.0),
        })
        .collect()
}

/// Mean squared TD loss matching `backward_batch`.
pub fn batch_loss(net: &QNetwork, batch: &[TrainSample]) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let q = net.forward(s.obs).unwrap().q[s.action.0 - 1];
        let err = q - s.target;
        total += err * err;
    }
    total / batch.len() as f64
}

/// Largest relative error between analytic and central-difference gradients
/// across every parameter of `net`.
#[allow(clippy::needless_range_loop)]
pub fn max_rel_grad_err(net: &mut QNetwork, batch: &[TrainSample], h: f64) -> f64 {
    let (_, analytic) = net.backward_batch(batch).unwrap();
    let mut worst = 0.0f64;
    for ti in 0..analytic.len() {
        for vi in 0..analytic[ti].len() {
            let orig = net.params().tensors[ti].data[vi];
            net.params_mut().tensors[ti].data[vi] = orig + h;
            let up = batch_loss(net, batch);
            net.params_mut().tensors[ti].data[vi] = orig - h;
            let down = batch_loss(net, batch);
            net.params_mut().tensors[ti].data[vi] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][vi];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}
