//! AdamW with decoupled weight decay.

use super::params::{Grads, ParamStore};
use super::{mismatch, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Per-parameter learning-rate multiplier (default 1).
    pub lr_scale: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.rows, t.cols);
        AdamW {
            config,
            m: store.iter().map(|(_, _, t)| zeros(t)).collect(),
            v: store.iter().map(|(_, _, t)| zeros(t)).collect(),
            lr_scale: vec![1.0; store.len()],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient are left untouched,
    /// including weight decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<(), TensorError> {
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (id, g) in grads.values.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = store.get_mut(id);
            if p.shape() != g.shape() {
                return Err(mismatch("adamw_step", p, g));
            }
            let lr = c.lr * self.lr_scale[id];
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for k in 0..p.data.len() {
                m.data[k] = c.beta1 * m.data[k] + (1.0 - c.beta1) * g.data[k];
                v.data[k] = c.beta2 * v.data[k] + (1.0 - c.beta2) * g.data[k] * g.data[k];
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                p.data[k] -= lr * (mh / (vh.sqrt() + c.eps)) + lr * c.weight_decay * p.data[k];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoupled_decay_closed_form() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full(1, 3, 2.0));
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                lr: 0.1,
                weight_decay: 0.01,
                ..Default::default()
            },
        );
        let mut g = Grads::zeros_like(&store);
        g.accumulate(id, &Tensor::zeros(1, 3));
        opt.step(&mut store, &g).unwrap();
        assert_eq!(opt.steps(), 1);
        for &x in &store.get(id).data {
            assert!((x - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_descends() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(3.0));
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                lr: 0.05,
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        let mut prev = 3.0f64;
        for step in 1..=100 {
            let x = store.get(id).item();
            let mut g = Grads::zeros_like(&store);
            g.accumulate(id, &Tensor::scalar(2.0 * x));
            opt.step(&mut store, &g).unwrap();
            let now = store.get(id).item();
            assert!(now.abs() < prev.abs(), "step {step}: {now} vs {prev}");
            prev = now;
            assert_eq!(opt.steps(), step);
        }
    }

    #[test]
    fn missing_gradient_is_skipped() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        let none = Grads::zeros_like(&store);
        opt.step(&mut store, &none).unwrap();
        assert_eq!(store.get(0).item(), 1.0);
    }
}
