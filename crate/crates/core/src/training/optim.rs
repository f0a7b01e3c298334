use crate::model::{Checkpoint, ParamStore};
use crate::numerics::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// `base · min(1, step / warmup)`; steps count from 1.
pub fn lr_at(base: f64, warmup: u64, step: u64) -> f64 {
    if warmup == 0 {
        base
    } else {
        base * (step as f64 / warmup as f64).min(1.0)
    }
}

/// Adam moments with decoupled weight decay on matrix parameters. Frozen parameters have no state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| if p.frozen { Vec::new() } else { vec![0.0; p.tensor.len()] })
                .collect::<Vec<_>>()
        };
        Self { m: zeros(), v: zeros() }
    }

    /// Applies step `step` (from 1) given averaged, clipped gradients indexed like `params`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64, weight_decay: f64, step: u64) {
        let bc1 = 1.0 - BETA1.powi(step as i32);
        let bc2 = 1.0 - BETA2.powi(step as i32);
        let ids: Vec<_> = params.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
        for id in ids {
            let i = id.index();
            let t = params.tensor(id);
            let decay = if t.rank() == 2 { weight_decay } else { 0.0 };
            let mut w = t.to_vec();
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for k in 0..w.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                w[k] -= lr * (mhat / (vhat.sqrt() + EPSILON) + decay * w[k]);
            }
            let updated = t.with_data(w);
            params.set_tensor(id, updated);
        }
    }

    pub(crate) fn store(&self, params: &ParamStore, ckpt: &mut Checkpoint) {
        for (id, p) in params.iter().filter(|(_, p)| !p.frozen) {
            let shape = p.tensor.shape().to_vec();
            let i = id.index();
            let t = |d: &Vec<f64>| Tensor::new(shape.clone(), d.clone()).expect("moment shape");
            ckpt.arrays.push((format!("optim.m/{}", p.name), t(&self.m[i])));
            ckpt.arrays.push((format!("optim.v/{}", p.name), t(&self.v[i])));
        }
    }

    pub(crate) fn load(&mut self, params: &ParamStore, ckpt: &Checkpoint) -> Result<(), String> {
        for (id, p) in params.iter().filter(|(_, p)| !p.frozen) {
            for (slot, kind) in [(&mut self.m, "m"), (&mut self.v, "v")] {
                let name = format!("optim.{kind}/{}", p.name);
                let t = ckpt.array(&name).ok_or_else(|| format!("missing {name}"))?;
                if t.shape() != p.tensor.shape() {
                    return Err(format!("{name} has shape {:?}", t.shape()));
                }
                slot[id.index()] = t.to_vec();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_linear_then_flat() {
        assert_eq!(lr_at(1e-3, 20, 1), 1e-3 / 20.0);
        assert_eq!(lr_at(1e-3, 20, 10), 1e-3 * 0.5);
        assert_eq!(lr_at(1e-3, 20, 20), 1e-3);
        assert_eq!(lr_at(1e-3, 20, 500), 1e-3);
        assert_eq!(lr_at(1e-3, 0, 1), 1e-3);
    }

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // With bias correction, step 1 moves every coordinate by lr·sign(g) (plus decay).
        let mut store = ParamStore::new();
        let id = store.push("w", Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]), false);
        let frozen = store.push("f", Tensor::vector(vec![3.0]), true);
        let mut opt = AdamW::new(&store);
        let grads = vec![vec![0.3, -4.0, 1e-3], Vec::new()];
        opt.update(&mut store, &grads, 0.1, 0.5, 1);
        let w = store.tensor(id).data();
        let expect = |w0: f64, s: f64| w0 - 0.1 * (s + 0.5 * w0);
        assert!((w[0] - expect(1.0, 1.0)).abs() < 1e-6);
        assert!((w[1] - expect(-2.0, -1.0)).abs() < 1e-6);
        assert!((w[2] - expect(0.5, 1.0)).abs() < 1e-4);
        assert_eq!(store.tensor(frozen).data(), &[3.0]);
    }

    #[test]
    fn vectors_are_not_decayed() {
        let mut store = ParamStore::new();
        let id = store.push("b", Tensor::vector(vec![2.0]), false);
        let mut opt = AdamW::new(&store);
        opt.update(&mut store, &[vec![0.0]], 0.1, 0.5, 1);
        assert_eq!(store.tensor(id).data(), &[2.0]);
    }
}
