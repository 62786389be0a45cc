//! Adam and global-norm gradient clipping over a [`ParamStore`].

use crate::tensor::ParamStore;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let Some(g) = p.grad.as_ref() else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = g.data();
            for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm(store: &ParamStore) -> f64 {
    store
        .iter()
        .filter_map(|(_, p)| p.grad.as_ref())
        .flat_map(|g| g.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescale gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in store.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                for v in g.data_mut() {
                    *v *= s;
                }
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap(), true).unwrap();
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let w = store.tensor(id).clone();
            store.get_mut(id).grad = Some(Tensor::new(vec![2], w.data().iter().map(|v| 2.0 * v).collect()).unwrap());
            opt.step(&mut store);
        }
        assert!(store.tensor(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::zeros(&[2]), true).unwrap();
        store.get_mut(id).grad = Some(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        assert_eq!(clip_grad_norm(&mut store, 1.0), 5.0);
        assert!((grad_norm(&store) - 1.0).abs() < 1e-12);
    }
}
