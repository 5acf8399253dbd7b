//! Adam with bias correction and the MultiStepLR schedule.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let m = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam { cfg, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update from the grads accumulated in `store`. Parameters whose
    /// grad slot is empty are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.t += 1;
        let b1 = T::of_f64(self.cfg.beta1);
        let b2 = T::of_f64(self.cfg.beta2);
        let eps = T::of_f64(self.cfg.eps);
        let one = T::one();
        let bc1 = T::of_f64(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = T::of_f64(1.0 - self.cfg.beta2.powi(self.t as i32));
        let lr_t = T::of_f64(lr);

        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = store.grad(id).cloned() else {
                continue;
            };
            let i = id.0;
            self.m[i] = self.m[i].zip(&g, |m, gv| b1 * m + (one - b1) * gv);
            self.v[i] = self.v[i].zip(&g, |v, gv| b2 * v + (one - b2) * gv * gv);
            let mut new_val = store.value(id).clone();
            let out = new_val.make_mut();
            for (j, o) in out.iter_mut().enumerate() {
                let mhat = self.m[i].data()[j] / bc1;
                let vhat = self.v[i].data()[j] / bc2;
                *o = *o - lr_t * mhat / (vhat.sqrt() + eps);
            }
            store.set_value(id, new_val);
        }
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn state(&self) -> (&[Tensor<T>], &[Tensor<T>], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore_state(&mut self, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, t: u64) {
        assert_eq!(m.len(), self.m.len(), "optimizer state length mismatch");
        assert_eq!(v.len(), self.v.len(), "optimizer state length mismatch");
        self.m = m;
        self.v = v;
        self.t = t;
    }
}

/// Learning rate multiplied at each milestone crossing.
#[derive(Clone, Debug)]
pub struct MultiStepLr {
    pub base: f64,
    /// (step, multiplier) pairs, strictly increasing in step.
    pub milestones: Vec<(u64, f64)>,
}

impl MultiStepLr {
    pub fn new(base: f64, milestones: Vec<(u64, f64)>) -> Self {
        assert!(
            milestones.windows(2).all(|w| w[0].0 < w[1].0),
            "milestones must be strictly increasing"
        );
        MultiStepLr { base, milestones }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let mut lr = self.base;
        for &(s, mult) in &self.milestones {
            if step >= s {
                lr *= mult;
            }
        }
        lr
    }
}
