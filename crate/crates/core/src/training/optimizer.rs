use std::collections::HashMap;

use crate::numerics::{ParamId, ParamSet, Tensor};

/// Adam with bias correction; moments are allocated lazily per parameter.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: HashMap<ParamId, Tensor>,
    v: HashMap<ParamId, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update over the given parameter ids using their accumulated
    /// gradients. Does not zero the gradients.
    pub fn step(&mut self, params: &mut ParamSet, ids: &[ParamId]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for &id in ids {
            let shape = params.value(id).shape();
            let m = self
                .m
                .entry(id)
                .or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            let v = self
                .v
                .entry(id)
                .or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            let p = params.get_mut(id);
            let grad = p.grad.data().to_vec();
            for (i, g) in grad.iter().enumerate() {
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.value.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_walks_toward_a_quadratic_minimum() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::scalar(4.0));
        let mut opt = Adam::new(0.1);
        for _ in 0..200 {
            params.zero_grads();
            // d/dw (w-1)^2 = 2(w-1)
            let g = 2.0 * (params.value(w).item() - 1.0);
            params.get_mut(w).grad.data_mut()[0] = g;
            opt.step(&mut params, &[w]);
        }
        assert!((params.value(w).item() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn untouched_parameters_stay_put() {
        let mut params = ParamSet::new();
        let a = params.register("a", Tensor::scalar(1.0));
        let b = params.register("b", Tensor::scalar(2.0));
        let mut opt = Adam::new(0.1);
        params.get_mut(a).grad.data_mut()[0] = 1.0;
        params.get_mut(b).grad.data_mut()[0] = 1.0;
        opt.step(&mut params, &[a]);
        assert_eq!(params.value(b).item(), 2.0);
        assert_ne!(params.value(a).item(), 1.0);
    }
}
