//! Minimal dense-network plumbing: named parameter tensors, fully connected
//! layers with manual backprop, and Adam with decoupled weight decay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// All learnable parameters of one network, in a fixed order so gradient
/// buffers and optimizer state can be plain parallel vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    fn add(&mut self, name: String, rows: usize, cols: usize, data: Vec<f64>) -> usize {
        debug_assert_eq!(data.len(), rows * cols);
        self.tensors.push(Tensor { name, rows, cols, data });
        self.tensors.len() - 1
    }

    pub fn grads_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

/// Fully connected layer referencing its weight and bias tensors by index.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub rows: usize,
    pub cols: usize,
    pub act: Activation,
}

impl Dense {
    /// He-style uniform init `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero bias.
    pub fn new(ps: &mut ParamSet, name: &str, rows: usize, cols: usize, act: Activation, rng: &mut DetRng) -> Dense {
        let limit = (6.0 / cols as f64).sqrt();
        let w_data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        let w = ps.add(format!("{name}.w"), rows, cols, w_data);
        let b = ps.add(format!("{name}.b"), rows, 1, vec![0.0; rows]);
        Dense { w, b, rows, cols, act }
    }

    /// Returns `(output, preactivation)`.
    pub fn forward(&self, ps: &ParamSet, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        let w = &ps.tensors[self.w].data;
        let b = &ps.tensors[self.b].data;
        let mut pre = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = &w[r * self.cols..(r + 1) * self.cols];
            let z: f64 = row.iter().zip(x.iter()).map(|(wi, xi)| wi * xi).sum::<f64>() + b[r];
            pre.push(z);
        }
        let out = match self.act {
            Activation::Identity => pre.clone(),
            Activation::Relu => pre.iter().map(|&z| z.max(0.0)).collect(),
        };
        (out, pre)
    }

    /// Accumulate parameter gradients for one sample and return the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        ps: &ParamSet,
        x: &[f64],
        pre: &[f64],
        grad_out: &[f64],
        grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let w = &ps.tensors[self.w].data;
        let (gw, gb) = {
            // the two tensor indices are always distinct
            debug_assert_ne!(self.w, self.b);
            let (lo, hi) = if self.w < self.b { (self.w, self.b) } else { (self.b, self.w) };
            let (head, tail) = grads.split_at_mut(hi);
            if self.w < self.b {
                (&mut head[lo], &mut tail[0])
            } else {
                let (gb, gw) = (&mut head[lo], &mut tail[0]);
                (gw, gb)
            }
        };
        let mut gx = vec![0.0; self.cols];
        for r in 0..self.rows {
            let dz = match self.act {
                Activation::Identity => grad_out[r],
                Activation::Relu => {
                    if pre[r] > 0.0 {
                        grad_out[r]
                    } else {
                        0.0
                    }
                }
            };
            if dz == 0.0 {
                continue;
            }
            gb[r] += dz;
            let row = &w[r * self.cols..(r + 1) * self.cols];
            let grow = &mut gw[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] += dz * x[c];
                gx[c] += dz * row[c];
            }
        }
        gx
    }
}

/// A chain of dense layers: ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone)]
pub struct Stack {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Default)]
pub struct StackCache {
    /// Input to each layer.
    pub inputs: Vec<Vec<f64>>,
    /// Preactivation of each layer.
    pub preacts: Vec<Vec<f64>>,
}

impl Stack {
    /// `sizes` is `[input, hidden..., output]`.
    pub fn new(ps: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut DetRng) -> Stack {
        assert!(sizes.len() >= 2);
        let layers = (0..sizes.len() - 1)
            .map(|i| {
                let act = if i + 2 == sizes.len() { Activation::Identity } else { Activation::Relu };
                Dense::new(ps, &format!("{name}.{i}"), sizes[i + 1], sizes[i], act, rng)
            })
            .collect();
        Stack { layers }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].cols
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    pub fn forward(&self, ps: &ParamSet, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer.forward(ps, &cur).0;
        }
        cur
    }

    pub fn forward_cached(&self, ps: &ParamSet, x: Vec<f64>) -> (Vec<f64>, StackCache) {
        let mut cache = StackCache::default();
        let mut cur = x;
        for layer in &self.layers {
            let (out, pre) = layer.forward(ps, &cur);
            cache.inputs.push(cur);
            cache.preacts.push(pre);
            cur = out;
        }
        (cur, cache)
    }

    pub fn backward(&self, ps: &ParamSet, cache: &StackCache, grad_out: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(ps, &cache.inputs[i], &cache.preacts[i], &g, grads);
        }
        g
    }
}

/// Adam with bias correction. The weight decay term is decoupled from the
/// moment estimates: with zero gradients a step changes each parameter by
/// exactly `-lr * weight_decay * value`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(ps: &ParamSet, lr: f64, weight_decay: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: ps.grads_like(),
            v: ps.grads_like(),
        }
    }

    pub fn step(&mut self, ps: &mut ParamSet, grads: &[Vec<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, tensor) in ps.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..tensor.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let p = tensor.data[j];
                tensor.data[j] = p - self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng, Stream};

    #[test]
    fn dense_forward_matches_hand_computation() {
        let mut ps = ParamSet::default();
        let mut r = rng(0, Stream::Init);
        let layer = Dense::new(&mut ps, "l", 2, 3, Activation::Relu, &mut r);
        ps.tensors[layer.w].data = vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5];
        ps.tensors[layer.b].data = vec![0.1, -10.0];
        let (out, pre) = layer.forward(&ps, &[1.0, 2.0, 3.0]);
        assert!((pre[0] - (1.0 - 3.0 + 0.1)).abs() < 1e-12);
        assert!((out[0] - 0.0).abs() < 1e-12); // relu clips -1.9
        assert!((pre[1] - (3.0 - 10.0)).abs() < 1e-12);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn stack_gradient_matches_finite_differences() {
        let mut ps = ParamSet::default();
        let mut r = rng(1, Stream::Init);
        let stack = Stack::new(&mut ps, "s", &[4, 6, 3], &mut r);
        let x: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.5).collect();
        let target = [0.2, -0.4, 1.0];
        let loss = |ps: &ParamSet| -> f64 {
            let y = stack.forward(ps, &x);
            y.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let mut grads = ps.grads_like();
        let (y, cache) = stack.forward_cached(&ps, x.clone());
        let gout: Vec<f64> = y.iter().zip(target.iter()).map(|(a, b)| 2.0 * (a - b)).collect();
        stack.backward(&ps, &cache, &gout, &mut grads);
        let h = 1e-5;
        for i in 0..ps.tensors.len() {
            for j in 0..ps.tensors[i].data.len() {
                let orig = ps.tensors[i].data[j];
                ps.tensors[i].data[j] = orig + h;
                let up = loss(&ps);
                ps.tensors[i].data[j] = orig - h;
                let down = loss(&ps);
                ps.tensors[i].data[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = grads[i][j];
                let rel = (a - fd).abs() / f64::max(1.0, a.abs().max(fd.abs()));
                assert!(rel < 1e-6, "tensor {i} elem {j}: analytic {a} vs fd {fd}");
            }
        }
    }

    #[test]
    fn adam_with_zero_gradients_applies_pure_decay() {
        let mut ps = ParamSet::default();
        let mut r = rng(2, Stream::Init);
        let _ = Dense::new(&mut ps, "l", 3, 3, Activation::Identity, &mut r);
        let before: Vec<f64> = ps.tensors[0].data.clone();
        let grads = ps.grads_like();
        let mut opt = Adam::new(&ps, 0.01, 1e-8);
        opt.step(&mut ps, &grads);
        for (b, a) in before.iter().zip(ps.tensors[0].data.iter()) {
            let expect = b - 0.01 * 1e-8 * b;
            assert!((a - expect).abs() < 1e-18, "expected pure decay {expect}, got {a}");
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut ps = ParamSet::default();
        let mut r = rng(3, Stream::Init);
        let layer = Dense::new(&mut ps, "l", 1, 1, Activation::Identity, &mut r);
        ps.tensors[layer.w].data = vec![5.0];
        let mut opt = Adam::new(&ps, 0.05, 0.0);
        for _ in 0..2000 {
            let grads = vec![vec![2.0 * ps.tensors[layer.w].data[0]], vec![0.0]];
            opt.step(&mut ps, &grads);
        }
        assert!(ps.tensors[layer.w].data[0].abs() < 1e-3);
    }

    #[test]
    fn init_is_seeded_and_in_he_bounds() {
        let mut ps_a = ParamSet::default();
        let mut ps_b = ParamSet::default();
        let _ = Stack::new(&mut ps_a, "s", &[10, 8, 2], &mut rng(7, Stream::Init));
        let _ = Stack::new(&mut ps_b, "s", &[10, 8, 2], &mut rng(7, Stream::Init));
        assert_eq!(ps_a, ps_b);
        let limit = (6.0_f64 / 10.0).sqrt();
        assert!(ps_a.tensors[0].data.iter().all(|w| w.abs() <= limit));
        assert!(ps_a.tensors[1].data.iter().all(|&b| b == 0.0));
    }
}
