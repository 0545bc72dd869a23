//! Size-free dueling network: a shared per-machine encoder, mean pooling
//! into a cluster summary, one value head on the summary, and a shared
//! advantage head emitting two scores (one per node) for every machine.
//!
//! Nothing in the parameter set depends on the machine count, so one set of
//! weights evaluates clusters of any size, and relabeling machines permutes
//! the advantage/Q outputs exactly as it permutes the input blocks.

use super::dense::{ParamSet, Stack, StackCache};
use super::{vm_features, QOutput, QnetConfig, TrainSample};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::rng::DetRng;

#[derive(Debug, Clone)]
pub struct SpaneNet {
    pub cfg: QnetConfig,
    pub params: ParamSet,
    embed: Stack,
    value: Stack,
    adv: Stack,
}

struct ForwardCache {
    embed_caches: Vec<StackCache>,
    value_cache: StackCache,
    adv_caches: Vec<StackCache>,
}

impl SpaneNet {
    pub fn new(cfg: QnetConfig, rng: &mut DetRng) -> SpaneNet {
        let mut params = ParamSet::default();
        let vmf = cfg.vm_feat_width();
        let embed_in = 2 * cfg.dims + if cfg.vm_feats_to_embed { vmf } else { 0 };
        let embed = Stack::new(&mut params, "embed", &[embed_in, cfg.embed_hidden, cfg.embed_width], rng);
        let value = Stack::new(&mut params, "value", &[cfg.embed_width + vmf, cfg.value_hidden, 1], rng);
        let adv = Stack::new(&mut params, "adv", &[2 * cfg.embed_width + vmf, cfg.adv_hidden, 2], rng);
        SpaneNet { cfg, params, embed, value, adv }
    }

    /// Rebuild the layer wiring for a parameter set saved from an identical
    /// config (used by checkpoint loading).
    pub fn from_params(cfg: QnetConfig, params: ParamSet) -> Result<SpaneNet> {
        let mut rng = crate::rng::rng_stream(0, 0);
        let template = SpaneNet::new(cfg, &mut rng);
        if template.params.tensors.len() != params.tensors.len() {
            return Err(Error::Model(format!(
                "expected {} tensors, checkpoint has {}",
                template.params.tensors.len(),
                params.tensors.len()
            )));
        }
        for (want, got) in template.params.tensors.iter().zip(params.tensors.iter()) {
            if want.name != got.name || want.rows != got.rows || want.cols != got.cols {
                return Err(Error::Model(format!(
                    "tensor mismatch: expected {} [{}x{}], got {} [{}x{}]",
                    want.name, want.rows, want.cols, got.name, got.rows, got.cols
                )));
            }
        }
        Ok(SpaneNet { params, ..template })
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.dims != self.cfg.dims {
            return Err(Error::Model(format!(
                "network built for {} resource dims, observation has {}",
                self.cfg.dims, obs.dims
            )));
        }
        if obs.pm_count == 0 {
            return Err(Error::Model("observation has no machines".into()));
        }
        Ok(())
    }

    fn embed_input(&self, obs: &Observation, pm: usize, vmf: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.embed.in_width());
        x.extend_from_slice(obs.pm_block(pm));
        if self.cfg.vm_feats_to_embed {
            x.extend_from_slice(vmf);
        }
        x
    }

    fn forward_cached(&self, obs: &Observation) -> (QOutput, ForwardCache) {
        let m = obs.pm_count;
        let vmf = vm_features(obs, &self.cfg);
        let mut embed_caches = Vec::with_capacity(m);
        let mut embeds = Vec::with_capacity(m);
        for pm in 0..m {
            let (e, cache) = self.embed.forward_cached(&self.params, self.embed_input(obs, pm, &vmf));
            embed_caches.push(cache);
            embeds.push(e);
        }
        let mut cluster = vec![0.0; self.cfg.embed_width];
        for e in &embeds {
            for (c, v) in cluster.iter_mut().zip(e.iter()) {
                *c += v;
            }
        }
        cluster.iter_mut().for_each(|c| *c /= m as f64);

        let mut value_in = cluster.clone();
        value_in.extend_from_slice(&vmf);
        let (value_out, value_cache) = self.value.forward_cached(&self.params, value_in);
        let value = value_out[0];

        let mut adv = Vec::with_capacity(2 * m);
        let mut adv_caches = Vec::with_capacity(m);
        for e in embeds.iter() {
            let mut adv_in = Vec::with_capacity(self.adv.in_width());
            adv_in.extend_from_slice(e);
            adv_in.extend_from_slice(&cluster);
            adv_in.extend_from_slice(&vmf);
            let (pair, cache) = self.adv.forward_cached(&self.params, adv_in);
            adv.extend_from_slice(&pair);
            adv_caches.push(cache);
        }

        let center = if self.cfg.centered_advantage {
            adv.iter().sum::<f64>() / adv.len() as f64
        } else {
            0.0
        };
        let q: Vec<f64> = adv.iter().map(|a| value + a - center).collect();
        (QOutput { value, adv, q }, ForwardCache { embed_caches, value_cache, adv_caches })
    }

    pub fn forward(&self, obs: &Observation) -> Result<QOutput> {
        self.check_obs(obs)?;
        Ok(self.forward_cached(obs).0)
    }

    /// Batched MSE gradients of `(q[action] - target)^2`.
    #[allow(clippy::needless_range_loop)]
    pub fn backward_batch(&self, batch: &[TrainSample<'_>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut grads = self.params.grads_like();
        let mut loss = 0.0;
        let ew = self.cfg.embed_width;
        for sample in batch {
            self.check_obs(sample.obs)?;
            let m = sample.obs.pm_count;
            let a0 = sample.action.0 - 1;
            if a0 >= 2 * m {
                return Err(Error::Model(format!("action {} out of range for {m} machines", sample.action)));
            }
            let (out, cache) = self.forward_cached(sample.obs);
            let err = out.q[a0] - sample.target;
            loss += err * err;
            let g = 2.0 * err / batch.len() as f64;

            // value head sees the pooled summary
            let gin_value = self.value.backward(&self.params, &cache.value_cache, &[g], &mut grads);
            let mut g_cluster: Vec<f64> = gin_value[..ew].to_vec();

            // advantage heads: only the chosen action's branch carries a
            // direct gradient unless advantages are mean-centered
            let mut g_embed_direct: Vec<Option<Vec<f64>>> = vec![None; m];
            if self.cfg.centered_advantage {
                let n = 2.0 * m as f64;
                for k in 0..m {
                    let gout = [
                        g * (if 2 * k == a0 { 1.0 } else { 0.0 } - 1.0 / n),
                        g * (if 2 * k + 1 == a0 { 1.0 } else { 0.0 } - 1.0 / n),
                    ];
                    let gin = self.adv.backward(&self.params, &cache.adv_caches[k], &gout, &mut grads);
                    g_embed_direct[k] = Some(gin[..ew].to_vec());
                    for (gc, gi) in g_cluster.iter_mut().zip(gin[ew..2 * ew].iter()) {
                        *gc += gi;
                    }
                }
            } else {
                let k = a0 / 2;
                let gout = [
                    if a0 % 2 == 0 { g } else { 0.0 },
                    if a0 % 2 == 1 { g } else { 0.0 },
                ];
                let gin = self.adv.backward(&self.params, &cache.adv_caches[k], &gout, &mut grads);
                g_embed_direct[k] = Some(gin[..ew].to_vec());
                for (gc, gi) in g_cluster.iter_mut().zip(gin[ew..2 * ew].iter()) {
                    *gc += gi;
                }
            }

            // pooled summary spreads its gradient evenly over the embeddings
            let mf = m as f64;
            for k in 0..m {
                let mut ge: Vec<f64> = g_cluster.iter().map(|gc| gc / mf).collect();
                if let Some(direct) = &g_embed_direct[k] {
                    for (a, b) in ge.iter_mut().zip(direct.iter()) {
                        *a += b;
                    }
                }
                self.embed.backward(&self.params, &cache.embed_caches[k], &ge, &mut grads);
            }
        }
        Ok((loss / batch.len() as f64, grads))
    }
}
