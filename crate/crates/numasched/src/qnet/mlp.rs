//! Flat dueling baseline: the whole observation feeds one two-layer trunk
//! with a scalar value head and a per-action advantage head. The input and
//! head widths bake in the machine count, so a net built for `m` machines
//! rejects observations of any other size.

use super::dense::{ParamSet, Stack, StackCache};
use super::{vm_features, QOutput, QnetConfig, TrainSample};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::rng::DetRng;

#[derive(Debug, Clone)]
pub struct MlpNet {
    pub cfg: QnetConfig,
    pub pm_count: usize,
    pub params: ParamSet,
    trunk: Stack,
    value_head: Stack,
    adv_head: Stack,
}

impl MlpNet {
    pub fn new(cfg: QnetConfig, pm_count: usize, rng: &mut DetRng) -> MlpNet {
        assert!(pm_count >= 1);
        let mut params = ParamSet::default();
        let input = pm_count * 2 * cfg.dims + cfg.vm_feat_width();
        let trunk = Stack::new(&mut params, "trunk", &[input, cfg.mlp_hidden, cfg.mlp_hidden], rng);
        let value_head = Stack::new(&mut params, "value_head", &[cfg.mlp_hidden, 1], rng);
        let adv_head = Stack::new(&mut params, "adv_head", &[cfg.mlp_hidden, 2 * pm_count], rng);
        MlpNet { cfg, pm_count, params, trunk, value_head, adv_head }
    }

    pub fn from_params(cfg: QnetConfig, pm_count: usize, params: ParamSet) -> Result<MlpNet> {
        let mut rng = crate::rng::rng_stream(0, 0);
        let template = MlpNet::new(cfg, pm_count, &mut rng);
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
        Ok(MlpNet { params, ..template })
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.dims != self.cfg.dims {
            return Err(Error::Model(format!(
                "network built for {} resource dims, observation has {}",
                self.cfg.dims, obs.dims
            )));
        }
        if obs.pm_count != self.pm_count {
            return Err(Error::ShapeMismatch { expected: self.pm_count, got: obs.pm_count });
        }
        Ok(())
    }

    fn input(&self, obs: &Observation) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.trunk.in_width());
        x.extend_from_slice(&obs.numa_util);
        x.extend_from_slice(&vm_features(obs, &self.cfg));
        x
    }

    fn forward_cached(&self, obs: &Observation) -> (QOutput, StackCache, StackCache, StackCache) {
        let (hidden, trunk_cache) = self.trunk.forward_cached(&self.params, self.input(obs));
        let (value_out, value_cache) = self.value_head.forward_cached(&self.params, hidden.clone());
        let (adv, adv_cache) = self.adv_head.forward_cached(&self.params, hidden);
        let value = value_out[0];
        let center = if self.cfg.centered_advantage {
            adv.iter().sum::<f64>() / adv.len() as f64
        } else {
            0.0
        };
        let q: Vec<f64> = adv.iter().map(|a| value + a - center).collect();
        (QOutput { value, adv, q }, trunk_cache, value_cache, adv_cache)
    }

    pub fn forward(&self, obs: &Observation) -> Result<QOutput> {
        self.check_obs(obs)?;
        Ok(self.forward_cached(obs).0)
    }

    pub fn backward_batch(&self, batch: &[TrainSample<'_>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut grads = self.params.grads_like();
        let mut loss = 0.0;
        for sample in batch {
            self.check_obs(sample.obs)?;
            let a0 = sample.action.0 - 1;
            let n_actions = 2 * self.pm_count;
            if a0 >= n_actions {
                return Err(Error::Model(format!(
                    "action {} out of range for {} machines",
                    sample.action, self.pm_count
                )));
            }
            let (out, trunk_cache, value_cache, adv_cache) = self.forward_cached(sample.obs);
            let err = out.q[a0] - sample.target;
            loss += err * err;
            let g = 2.0 * err / batch.len() as f64;

            let g_hidden_v = self.value_head.backward(&self.params, &value_cache, &[g], &mut grads);
            let mut gout_adv = vec![0.0; n_actions];
            if self.cfg.centered_advantage {
                let n = n_actions as f64;
                for (j, go) in gout_adv.iter_mut().enumerate() {
                    *go = g * (if j == a0 { 1.0 } else { 0.0 } - 1.0 / n);
                }
            } else {
                gout_adv[a0] = g;
            }
            let g_hidden_a = self.adv_head.backward(&self.params, &adv_cache, &gout_adv, &mut grads);
            let g_hidden: Vec<f64> =
                g_hidden_v.iter().zip(g_hidden_a.iter()).map(|(a, b)| a + b).collect();
            self.trunk.backward(&self.params, &trunk_cache, &g_hidden, &mut grads);
        }
        Ok((loss / batch.len() as f64, grads))
    }
}
