use serde::{Deserialize, Serialize};

use super::nn::ParamStore;
use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Parameters whose gradient is `None` are left
/// untouched and their moments are not advanced.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    cfg: AdamConfig,
    steps: Vec<u64>,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<F>) -> Self {
        let sizes: Vec<usize> = store.iter().map(|(_, _, t)| t.numel()).collect();
        Adam {
            cfg,
            steps: vec![0; sizes.len()],
            m: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Vec<F>>], lr: f64) {
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = grads[k].as_ref() else { continue };
            self.steps[k] += 1;
            let t = self.steps[k] as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let step_size = F::of(lr / c1);
            let c2_sqrt = F::of(c2.sqrt());
            let eps = F::of(self.cfg.eps);
            let (fb1, fb2) = (F::of(b1), F::of(b2));
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let w = store.get_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = fb1 * m[i] + (F::one() - fb1) * g[i];
                v[i] = fb2 * v[i] + (F::one() - fb2) * g[i] * g[i];
                let denom = v[i].sqrt() / c2_sqrt + eps;
                w[i] -= step_size * m[i] / denom;
            }
        }
    }
}

/// Global L2 norm of all present gradients.
pub fn global_norm<F: Real>(grads: &[Option<Vec<F>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [Option<Vec<F>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = F::of(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_f64(vec![3], &[0.5, -1.0, 2.0]).unwrap());
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            adam.step(&mut store, &[Some(vec![0.0; 3])], 1e-3);
        }
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(vec![2], &[0.0, 0.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &[Some(vec![3.0, -0.2])], 0.01);
        let w = store.get(id).data();
        assert!((w[0] + 0.01).abs() < 1e-8 && (w[1] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn missing_gradient_skips_parameter() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::full(vec![2], 1.0));
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &[None], 1.0);
        assert_eq!(store, before);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Some(vec![3.0f64, 4.0]), None];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }
}
